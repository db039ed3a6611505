"""Image equivalence on four proxies: files, environment, packages, WORKDIR."""

from __future__ import annotations

import hashlib
import io
import json
import os
import posixpath
import shutil
import subprocess
import tarfile
from dataclasses import dataclass, field
from typing import Iterable, Protocol

from .errors import InspectorFailure, RuntimeUnavailable

VERDICTS = ("equivalent", "similar_with_diffs", "divergent")
PACKAGE_MANAGERS = ("dpkg", "apk", "rpm", "pip", "npm")


class ImageInspector(Protocol):
    def walk_fs(self) -> Iterable[tuple[str, str]]: ...

    def env(self) -> dict[str, str]: ...

    def installed_packages(self) -> dict[str, set[str]]: ...

    def workdir(self) -> str: ...


def default_excludes() -> set[str]:
    return {"HOSTNAME", "PWD"}


@dataclass
class ConsistencyReport:
    fs_equal: bool
    env_equal: bool
    pkg_equal: bool
    workdir_equal: bool
    fs_diffs: list[dict] = field(default_factory=list)
    env_diffs: list[dict] = field(default_factory=list)
    pkg_diffs: dict[str, dict] = field(default_factory=dict)
    workdirs: tuple[str, str] = ("/", "/")

    @property
    def verdict(self) -> str:
        if self.fs_equal and self.env_equal and self.pkg_equal and self.workdir_equal:
            return "equivalent"
        if self.env_equal and self.workdir_equal:
            return "similar_with_diffs"
        return "divergent"

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "fs_equal": self.fs_equal,
            "env_equal": self.env_equal,
            "pkg_equal": self.pkg_equal,
            "workdir_equal": self.workdir_equal,
            "fs_diffs": self.fs_diffs,
            "env_diffs": self.env_diffs,
            "pkg_diffs": self.pkg_diffs,
            "workdirs": list(self.workdirs),
        }


def _call(inspector, which: str, method: str):
    try:
        return getattr(inspector, method)()
    except InspectorFailure:
        raise
    except Exception as exc:  # any inspector problem is reported uniformly
        raise InspectorFailure(which, f"{method}: {exc}") from exc


def _norm_workdir(path: str) -> str:
    path = (path or "/").strip()
    norm = posixpath.normpath(path if path.startswith("/") else "/" + path)
    return "/" + norm.lstrip("/")


def compare_images(a: ImageInspector, b: ImageInspector,
                   dynamic_env_excludes: Iterable[str] | None = None) -> ConsistencyReport:
    excludes = default_excludes() if dynamic_env_excludes is None else set(dynamic_env_excludes)

    fa = dict(_call(a, "a", "walk_fs"))
    fb = dict(_call(b, "b", "walk_fs"))
    fs_diffs = []
    for path in sorted(set(fa) | set(fb)):
        if fa.get(path) != fb.get(path):
            fs_diffs.append({"path": path, "a": fa.get(path), "b": fb.get(path)})

    ea = {k: v for k, v in _call(a, "a", "env").items() if k not in excludes}
    eb = {k: v for k, v in _call(b, "b", "env").items() if k not in excludes}
    env_diffs = [{"name": k, "a": ea.get(k), "b": eb.get(k)}
                 for k in sorted(set(ea) | set(eb)) if ea.get(k) != eb.get(k)]

    pa = _call(a, "a", "installed_packages")
    pb = _call(b, "b", "installed_packages")
    pkg_diffs = {}
    for manager in sorted(set(pa) | set(pb)):
        sa, sb = set(pa.get(manager, ())), set(pb.get(manager, ()))
        if sa != sb:
            pkg_diffs[manager] = {"only_a": sorted(sa - sb), "only_b": sorted(sb - sa)}

    wa = _norm_workdir(_call(a, "a", "workdir"))
    wb = _norm_workdir(_call(b, "b", "workdir"))
    return ConsistencyReport(
        fs_equal=not fs_diffs, env_equal=not env_diffs, pkg_equal=not pkg_diffs,
        workdir_equal=wa == wb, fs_diffs=fs_diffs, env_diffs=env_diffs, pkg_diffs=pkg_diffs,
        workdirs=(wa, wb),
    )


_PKG_PROBES = {
    "dpkg": "dpkg-query -W -f '${Package}=${Version}\\n'",
    "apk": "apk info -v",
    "rpm": "rpm -qa",
    "pip": "pip freeze 2>/dev/null || pip3 freeze",
    "npm": "npm ls -g --depth=0 --parseable",
}


class DockerInspector:
    """Inspects a built image through the docker CLI."""

    def __init__(self, image: str, executable: str | None = None):
        self.image = image
        self.executable = executable or os.environ.get("DOCKORDER_DOCKER") or "docker"
        if shutil.which(self.executable) is None:
            raise RuntimeUnavailable(f"container CLI {self.executable!r} not found")
        self._meta = None

    def _run(self, *args: str, binary: bool = False) -> subprocess.CompletedProcess:
        proc = subprocess.run([self.executable, *args], capture_output=True, text=not binary)
        if proc.returncode != 0:
            err = proc.stderr.decode(errors="replace") if binary else proc.stderr
            raise RuntimeError(err.strip() or f"{args[0]} failed")
        return proc

    def _config(self) -> dict:
        if self._meta is None:
            out = self._run("image", "inspect", self.image).stdout
            self._meta = json.loads(out)[0].get("Config", {})
        return self._meta

    def walk_fs(self):
        cid = self._run("create", self.image).stdout.strip()
        try:
            data = self._run("export", cid, binary=True).stdout
        finally:
            self._run("rm", cid)
        out = []
        with tarfile.open(fileobj=io.BytesIO(data)) as tar:
            for member in tar:
                if member.isdir():
                    continue
                h = hashlib.sha256()
                if member.isfile():
                    h.update(tar.extractfile(member).read())
                else:
                    h.update(f"{member.type!r}:{member.linkname}".encode())
                digest = f"{h.hexdigest()}:{member.mode:o}:{member.uid}:{member.gid}"
                out.append(("/" + member.name.lstrip("./"), digest))
        return sorted(out)

    def env(self) -> dict[str, str]:
        return dict(item.split("=", 1) for item in self._config().get("Env") or [] if "=" in item)

    def installed_packages(self) -> dict[str, set[str]]:
        found = {}
        for manager in PACKAGE_MANAGERS:
            proc = subprocess.run([self.executable, "run", "--rm", "--entrypoint", "sh", self.image,
                                   "-c", _PKG_PROBES[manager]], capture_output=True, text=True)
            if proc.returncode == 0 and proc.stdout.strip():
                found[manager] = set(proc.stdout.split())
        return found

    def workdir(self) -> str:
        return self._config().get("WorkingDir") or "/"
