"""Per-instruction build times: measured through a builder adapter or loaded from JSON."""

from __future__ import annotations

import hashlib
import json
import os
import re
import shutil
import subprocess
import tempfile
import warnings
from collections.abc import Mapping
from typing import Iterable, Iterator, Protocol

from .errors import (BuildFailed, CleanupIncomplete, CostParseError, MalformedLog, NegativeCost,
                     RuntimeUnavailable)
from .parser import ParsedDockerfile, parse_dockerfile, serialize, stage_aliases

DEFAULT_REPEATS = 3
DEFAULT_COST = 1.0
SOURCES = ("measured", "loaded", "estimated")

# Instructions that produce a BuildKit step of their own.
STEP_KINDS = frozenset({"FROM", "RUN", "COPY", "ADD", "WORKDIR"})

_DONE_RE = re.compile(r"^#(\d+) DONE (\d+(?:\.\d+)?)s\b", re.M)
_HEADER_RE = re.compile(r"^#(\d+) \[(?:(\S+) )?(\d+)/(\d+)\] (.*)$", re.M)
_INTERNAL_RE = re.compile(r"^#(\d+) \[(?:internal|auth)\]", re.M)


class CostTable(Mapping):
    """index -> seconds."""

    def __init__(self, seconds: Mapping[int, float], source: str = "loaded", repeats: int = 1,
                 filled: Iterable[int] = (), low_confidence: bool = False, runs=None):
        if source not in SOURCES:
            raise ValueError(f"unknown cost source {source!r}")
        for k, v in seconds.items():
            if v < 0:
                raise NegativeCost(k)
        self.seconds = {int(k): float(v) for k, v in seconds.items()}
        self.source = source
        self.repeats = repeats
        self.filled = tuple(sorted(filled))
        self.low_confidence = low_confidence
        self.runs = runs or []

    def __getitem__(self, index: int) -> float:
        return self.seconds[index]

    def __iter__(self) -> Iterator[int]:
        return iter(self.seconds)

    def __len__(self) -> int:
        return len(self.seconds)

    @classmethod
    def uniform(cls, indices: Iterable[int], value: float = DEFAULT_COST) -> "CostTable":
        return cls({i: value for i in indices}, "estimated")

    def to_json(self) -> dict:
        return {
            "source": self.source,
            "repeats": self.repeats,
            "filled": list(self.filled),
            "low_confidence": self.low_confidence,
            "seconds": {str(k): v for k, v in sorted(self.seconds.items())},
        }


# -- log parsing ---------------------------------------------------------------------

def parse_buildkit_log(log: str) -> dict[int, float]:
    """Map BuildKit step numbers to seconds; a repeated step keeps its last DONE."""
    out: dict[int, float] = {}
    for m in _DONE_RE.finditer(log):
        out[int(m.group(1))] = float(m.group(2))
    if not out:
        raise MalformedLog("no '#N DONE Ts' lines in build log")
    return out


def step_headers(log: str) -> dict[int, tuple[str | None, int, str]]:
    """Step number -> (stage label, position within stage, instruction text)."""
    out = {}
    for m in _HEADER_RE.finditer(log):
        out[int(m.group(1))] = (m.group(2), int(m.group(3)), m.group(5).strip())
    return out


def _stage_steps(doc: ParsedDockerfile) -> dict[int, list[int]]:
    steps: dict[int, list[int]] = {}
    for ins in doc.instructions:
        if ins.kind in STEP_KINDS and ins.stage_index >= 0:
            steps.setdefault(ins.stage_index, []).append(ins.index)
    return steps


def align_log(log: str, doc: ParsedDockerfile) -> tuple[dict[int, float], bool]:
    """Attribute step seconds to instruction indices.

    Uses the ``#N [stage k/m] TEXT`` headers when the log has them; otherwise
    DONE steps are assigned in order to step-producing instructions and the
    result is flagged low-confidence.  Internal steps (context transfer,
    metadata) and anything unaligned land on the first FROM.
    """
    durations = parse_buildkit_log(log)
    out = {ins.index: 0.0 for ins in doc.instructions}
    if not doc.instructions:
        return {}, False
    first_from = next((i.index for i in doc.instructions if i.kind == "FROM"), doc.instructions[0].index)
    steps = _stage_steps(doc)
    headers = step_headers(log)
    aliases = stage_aliases(doc.instructions)

    if headers:
        for num, secs in durations.items():
            target = first_from
            if num in headers:
                label, pos, _ = headers[num]
                stage = _stage_for(label, aliases, steps)
                members = steps.get(stage, [])
                if 0 < pos <= len(members):
                    target = members[pos - 1]
            out[target] += secs
        return out, False

    ordered = [i for stage in sorted(steps) for i in steps[stage]]
    internal = {int(m.group(1)) for m in _INTERNAL_RE.finditer(log)}
    queue = iter(ordered)
    for num in sorted(durations):
        target = first_from if num in internal else next(queue, first_from)
        out[target] += durations[num]
    return out, True


def _stage_for(label: str | None, aliases: dict[str, int], steps: dict[int, list[int]]) -> int:
    if label is None:
        return max(steps) if steps else 0
    label = label.lower()
    if label in aliases:
        return aliases[label]
    m = re.fullmatch(r"stage-(\d+)", label)
    if m:
        return int(m.group(1))
    return max(steps) if steps else 0


# -- adapters ------------------------------------------------------------------------

class BuilderAdapter(Protocol):
    def build(self, dockerfile: str, context: str) -> str: ...

    def prune_all(self) -> None: ...

    def disk_usage(self) -> int: ...


def cleanup_environment(adapter: BuilderAdapter) -> None:
    if adapter.disk_usage() == 0:
        return
    adapter.prune_all()
    remaining = adapter.disk_usage()
    if remaining:
        raise CleanupIncomplete(remaining)


def measure_costs(dockerfile: str | ParsedDockerfile, context: str, adapter: BuilderAdapter,
                  repeats: int = DEFAULT_REPEATS) -> CostTable:
    """Mean per-instruction seconds over ``repeats`` clean builds.

    ``dockerfile`` is the Dockerfile text (or a parsed document).
    """
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    doc = dockerfile if isinstance(dockerfile, ParsedDockerfile) else parse_dockerfile(dockerfile)
    text = serialize(doc)
    runs = []
    low = False
    for _ in range(repeats):
        cleanup_environment(adapter)
        log = adapter.build(text, context)
        per_ins, flagged = align_log(log, doc)
        low = low or flagged
        runs.append(per_ins)
    mean = {i.index: sum(r[i.index] for r in runs) / repeats for i in doc.instructions}
    return CostTable(mean, "measured", repeats, low_confidence=low, runs=runs)


def instruction_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def load_costs(path_or_data, doc: ParsedDockerfile | None = None, n: int | None = None) -> CostTable:
    """Load a JSON cost map.

    Keys are instruction indices, or sha256 hex digests (or ``sha256:``
    prefixed) of an instruction's canonical text when ``doc`` is given.
    The map may be the top-level object or sit under ``"seconds"``.
    """
    if isinstance(path_or_data, Mapping):
        data = path_or_data
    else:
        try:
            with open(path_or_data, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, ValueError) as exc:
            raise CostParseError(f"can not read cost table {path_or_data}: {exc}") from exc
    if isinstance(data, Mapping) and isinstance(data.get("seconds"), Mapping):
        data = data["seconds"]
    if not isinstance(data, Mapping):
        raise CostParseError("cost table must be a JSON object")

    by_hash = {}
    if doc is not None:
        for ins in doc.instructions:
            by_hash.setdefault(instruction_hash(ins.text), ins.index)
    seconds: dict[int, float] = {}
    for key, value in data.items():
        key = str(key)
        if re.fullmatch(r"-?\d+", key):
            index = int(key)
        else:
            digest = key.split(":", 1)[1] if key.startswith("sha256:") else key
            if digest not in by_hash:
                raise CostParseError(f"cost key {key!r} is neither an index nor a known instruction hash")
            index = by_hash[digest]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise CostParseError(f"cost for {key!r} is not a number")
        if value < 0:
            raise NegativeCost(index)
        seconds[index] = float(value)

    total = n if n is not None else (len(doc) if doc is not None else None)
    filled = []
    if total is not None:
        for i in range(total):
            if i not in seconds:
                seconds[i] = DEFAULT_COST
                filled.append(i)
        if filled:
            warnings.warn(f"no build cost for instructions {filled}; using {DEFAULT_COST}s", stacklevel=2)
    return CostTable(seconds, "loaded", 1, filled)


class DockerCLIAdapter:
    """Real adapter around the docker CLI (BuildKit plain progress output)."""

    def __init__(self, executable: str | None = None):
        self.executable = executable or os.environ.get("DOCKORDER_DOCKER") or "docker"
        if shutil.which(self.executable) is None:
            raise RuntimeUnavailable(f"container CLI {self.executable!r} not found")

    def _run(self, *args: str, env=None) -> subprocess.CompletedProcess:
        try:
            return subprocess.run([self.executable, *args], capture_output=True, text=True, env=env)
        except OSError as exc:
            raise RuntimeUnavailable(str(exc)) from exc

    def build(self, dockerfile: str, context: str) -> str:
        with tempfile.NamedTemporaryFile("w", suffix=".Dockerfile", delete=False) as fh:
            fh.write(dockerfile)
            path = fh.name
        try:
            env = dict(os.environ, DOCKER_BUILDKIT="1")
            proc = self._run("build", "--progress=plain", "--no-cache", "-f", path, context, env=env)
        finally:
            os.unlink(path)
        log = proc.stdout + proc.stderr
        if proc.returncode != 0:
            raise BuildFailed(log)
        return log

    def prune_all(self) -> None:
        proc = self._run("system", "prune", "-a", "-f")
        if proc.returncode != 0:
            raise RuntimeUnavailable(proc.stderr.strip())
        self._run("builder", "prune", "-a", "-f")

    def disk_usage(self) -> int:
        proc = self._run("system", "df", "--format", "{{json .}}")
        if proc.returncode != 0:
            raise RuntimeUnavailable(proc.stderr.strip())
        total = 0
        for line in proc.stdout.splitlines():
            try:
                row = json.loads(line)
            except ValueError:
                continue
            total += _parse_size(row.get("Size", "0B"))
        return total


def _parse_size(text: str) -> int:
    m = re.match(r"([\d.]+)\s*([kKMGT]?B)", text.strip())
    if not m:
        return 0
    scale = {"B": 1, "kB": 1e3, "KB": 1e3, "MB": 1e6, "GB": 1e9, "TB": 1e12}[m.group(2)]
    return int(float(m.group(1)) * scale)
