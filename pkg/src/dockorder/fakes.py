"""In-process stand-ins for the container runtime.

They let the whole pipeline (and the test suite) run without Docker:
FakeBuilder replays scripted BuildKit logs and tracks a pretend cache, the
inspectors serve image facts from memory or from a fixture directory.
"""

from __future__ import annotations

import hashlib
import json
import os
from typing import Iterable, Mapping, Sequence

from .errors import BuildFailed
from .parser import ParsedDockerfile, parse_dockerfile

_STEP_KINDS = ("FROM", "RUN", "COPY", "ADD", "WORKDIR")


def render_log(doc: ParsedDockerfile, seconds: Mapping[int, float], internal: float = 0.0) -> str:
    """A BuildKit plain-progress log for ``doc`` with the given step times."""
    lines = ["#1 [internal] load build definition from Dockerfile", f"#1 DONE {internal:g}s"]
    num = 2
    stages: dict[int, list] = {}
    for ins in doc.instructions:
        if ins.kind in _STEP_KINDS and ins.stage_index >= 0:
            stages.setdefault(ins.stage_index, []).append(ins)
    multi = len(stages) > 1
    for stage, members in sorted(stages.items()):
        for pos, ins in enumerate(members, 1):
            label = f"stage-{stage} " if multi else ""
            lines.append(f"#{num} [{label}{pos}/{len(members)}] {ins.text.splitlines()[0]}")
            lines.append(f"#{num} DONE {seconds.get(ins.index, 0.0):g}s")
            lines.append("")
            num += 1
    return "\n".join(lines) + "\n"


class FakeBuilder:
    """Scripted builder: returns logs in turn and pretends to fill a cache."""

    def __init__(self, logs: Sequence[str] = (), seconds: Mapping[int, float] | None = None,
                 cached_bytes: int = 0, residue: int = 0, layer_bytes: int = 1024, fail: bool = False):
        self.logs = list(logs)
        self.seconds = dict(seconds or {})
        self.cached_bytes = cached_bytes
        self.residue = residue
        self.layer_bytes = layer_bytes
        self.fail = fail
        self.calls: list[str] = []
        self.builds = 0

    def build(self, dockerfile: str, context: str) -> str:
        self.calls.append("build")
        if self.fail:
            raise BuildFailed("#5 [2/3] RUN false\n#5 ERROR: process did not complete successfully\n")
        if self.logs:
            log = self.logs[self.builds % len(self.logs)]
        else:
            log = render_log(parse_dockerfile(dockerfile), self.seconds)
        self.builds += 1
        self.cached_bytes += self.layer_bytes * max(1, log.count(" DONE "))
        return log

    def prune_all(self) -> None:
        self.calls.append("prune")
        self.cached_bytes = self.residue

    def disk_usage(self) -> int:
        self.calls.append("df")
        return self.cached_bytes


class FakeInspector:
    def __init__(self, files: Mapping[str, str] | None = None, env: Mapping[str, str] | None = None,
                 packages: Mapping[str, Iterable[str]] | None = None, workdir: str = "/",
                 fail: str | None = None):
        self.files = dict(files or {})
        self._env = dict(env or {})
        self.packages = {k: set(v) for k, v in (packages or {}).items()}
        self._workdir = workdir
        self.fail = fail

    def _check(self, what: str) -> None:
        if self.fail == what:
            raise RuntimeError(f"{what} unavailable")

    def walk_fs(self):
        self._check("walk_fs")
        return sorted(self.files.items())

    def env(self) -> dict[str, str]:
        self._check("env")
        return dict(self._env)

    def installed_packages(self) -> dict[str, set[str]]:
        self._check("installed_packages")
        return {k: set(v) for k, v in self.packages.items()}

    def workdir(self) -> str:
        self._check("workdir")
        return self._workdir


def file_digest(path: str) -> str:
    """sha256 of the bytes plus mode and ownership, so chmod/chown show up as diffs."""
    st = os.lstat(path)
    h = hashlib.sha256()
    if os.path.islink(path):
        h.update(b"link:" + os.readlink(path).encode())
    else:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 16), b""):
                h.update(chunk)
    return f"{h.hexdigest()}:{st.st_mode & 0o7777:o}:{st.st_uid}:{st.st_gid}"


class DirectoryInspector:
    """Image facts from a fixture directory: ``rootfs/`` plus ``image.json``.

    image.json holds ``{"env": {...}, "workdir": "/app", "packages": {"dpkg": [...]}}``.
    """

    def __init__(self, root: str):
        self.root = str(root)
        meta = os.path.join(self.root, "image.json")
        self.meta = {}
        if os.path.exists(meta):
            with open(meta, encoding="utf-8") as fh:
                self.meta = json.load(fh)

    def walk_fs(self):
        base = os.path.join(self.root, "rootfs")
        out = []
        for dirpath, dirnames, filenames in os.walk(base):
            dirnames.sort()
            for name in sorted(filenames):
                full = os.path.join(dirpath, name)
                rel = "/" + os.path.relpath(full, base).replace(os.sep, "/")
                out.append((rel, file_digest(full)))
        return out

    def env(self) -> dict[str, str]:
        return dict(self.meta.get("env", {}))

    def installed_packages(self) -> dict[str, set[str]]:
        return {k: set(v) for k, v in self.meta.get("packages", {}).items()}

    def workdir(self) -> str:
        return self.meta.get("workdir", "/")
