"""Modification history: mine git, match records to instructions, estimate frequencies.

Two kinds of records come out of the repository.  Direct records are
Dockerfile lines changed between adjacent first-parent commits, grouped by
the instruction they belong to.  Implicit records (kind ``FILE``) are files
in the build context that some COPY/ADD instruction picks up; touching them
invalidates that layer without editing the Dockerfile.
"""

from __future__ import annotations

import calendar
import os
import re
import shutil
import subprocess
from collections.abc import Mapping
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from enum import Enum
from typing import Iterable, Iterator, Sequence

from sklearn.feature_extraction.text import TfidfVectorizer
from sklearn.metrics.pairwise import cosine_similarity

from .errors import DockerfileNotFound, DockerfileSyntaxError, GitUnavailable, NotARepository
from .parser import Instruction, ParsedDockerfile, parse_dockerfile, split_words
from .pathtrie import PathTrie
from .semantics import analyze

DEFAULT_WINDOW_MONTHS = 30
DEFAULT_TAU = 0.5
CHANGE_KINDS = ("addition", "deletion", "modification")


class MatchCategory(str, Enum):
    KEY_VALUE = "KeyValue"
    FILE_SYSTEM = "FileSystem"
    SHELL_SCRIPT = "ShellScript"
    SPECIAL = "Special"


CATEGORY = {
    "ARG": MatchCategory.KEY_VALUE, "ENV": MatchCategory.KEY_VALUE, "USER": MatchCategory.KEY_VALUE,
    "EXPOSE": MatchCategory.KEY_VALUE, "LABEL": MatchCategory.KEY_VALUE,
    "COPY": MatchCategory.FILE_SYSTEM, "ADD": MatchCategory.FILE_SYSTEM, "VOLUME": MatchCategory.FILE_SYSTEM,
    "WORKDIR": MatchCategory.FILE_SYSTEM, "ENTRYPOINT": MatchCategory.FILE_SYSTEM,
    "RUN": MatchCategory.SHELL_SCRIPT, "SHELL": MatchCategory.SHELL_SCRIPT, "CMD": MatchCategory.SHELL_SCRIPT,
    "FROM": MatchCategory.SPECIAL, "ONBUILD": MatchCategory.SPECIAL, "HEALTHCHECK": MatchCategory.SPECIAL,
    "STOPSIGNAL": MatchCategory.SPECIAL, "MAINTAINER": MatchCategory.SPECIAL,
}


def classify(kind: str) -> MatchCategory:
    return CATEGORY[kind.upper()]


@dataclass(frozen=True)
class ModificationRecord:
    commit_id: str
    instruction_kind: str
    content: str
    date: datetime
    change_kind: str = "modification"
    line_numbers: tuple[int, ...] = ()
    related_instruction_hint: int | None = None

    def __post_init__(self):
        if self.change_kind not in CHANGE_KINDS:
            raise ValueError(f"bad change kind {self.change_kind!r}")

    @property
    def implicit(self) -> bool:
        return self.instruction_kind == "FILE"

    def to_json(self) -> dict:
        out = asdict(self)
        out["date"] = self.date.isoformat()
        out["line_numbers"] = list(self.line_numbers)
        return out

    @classmethod
    def from_json(cls, data: dict) -> "ModificationRecord":
        data = dict(data)
        data["date"] = datetime.fromisoformat(data["date"])
        data["line_numbers"] = tuple(data.get("line_numbers", ()))
        return cls(**data)


# -- window ------------------------------------------------------------------------

def subtract_months(moment: datetime, months: int) -> datetime:
    total = moment.year * 12 + (moment.month - 1) - months
    year, month = divmod(total, 12)
    month += 1
    day = min(moment.day, calendar.monthrange(year, month)[1])
    return moment.replace(year=year, month=month, day=day)


def _aware(moment: datetime) -> datetime:
    return moment if moment.tzinfo else moment.replace(tzinfo=timezone.utc)


def filter_window(records: Iterable[ModificationRecord], window_months: int,
                  now: datetime | None = None) -> list[ModificationRecord]:
    now = _aware(now or datetime.now(timezone.utc))
    cutoff = subtract_months(now, window_months)
    return [r for r in records if _aware(r.date) >= cutoff]


# -- git plumbing ------------------------------------------------------------------

class Git:
    def __init__(self, repo: str, executable: str | None = None):
        self.repo = str(repo)
        self.executable = executable or os.environ.get("DOCKORDER_GIT") or "git"
        if shutil.which(self.executable) is None:
            raise GitUnavailable(f"git executable {self.executable!r} not found")

    def __call__(self, *args: str, check: bool = True) -> str:
        try:
            proc = subprocess.run([self.executable, "-C", self.repo, *args], capture_output=True,
                                  text=True, encoding="utf-8", errors="replace")
        except OSError as exc:
            raise GitUnavailable(str(exc)) from exc
        if check and proc.returncode != 0:
            raise subprocess.CalledProcessError(proc.returncode, args, proc.stdout, proc.stderr)
        return proc.stdout


_HUNK_RE = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")


def _hunks(diff: str) -> list[tuple[list[int], list[int]]]:
    """Removed old-side and added new-side line numbers per hunk of a -U0 diff."""
    out = []
    for line in diff.splitlines():
        m = _HUNK_RE.match(line)
        if not m:
            continue
        old_start, old_len = int(m.group(1)), int(m.group(2) or 1)
        new_start, new_len = int(m.group(3)), int(m.group(4) or 1)
        out.append((list(range(old_start, old_start + old_len)), list(range(new_start, new_start + new_len))))
    return out


def _line_owner(doc: ParsedDockerfile | None) -> dict[int, Instruction]:
    owner: dict[int, Instruction] = {}
    if doc is None:
        return owner
    for ins in doc.instructions:
        for ln in range(ins.span.start_line, ins.span.end_line + 1):
            owner[ln] = ins
    return owner


def _safe_parse(text: str | None) -> ParsedDockerfile | None:
    if text is None:
        return None
    try:
        return parse_dockerfile(text)
    except DockerfileSyntaxError:
        return None


def _direct_records(commit: str, date: datetime, old_doc, new_doc, diff: str,
                    old_text: str | None, new_text: str | None) -> list[ModificationRecord]:
    old_owner, new_owner = _line_owner(old_doc), _line_owner(new_doc)
    old_lines = (old_text or "").splitlines()
    new_lines = (new_text or "").splitlines()
    records = []

    def fallback(lines: list[str], ln: int) -> str | None:
        # unparseable revision: one record per changed non-comment line
        if 0 < ln <= len(lines):
            text = lines[ln - 1].strip()
            if text and not text.startswith("#"):
                return text
        return None

    for removed, added in _hunks(diff):
        touched_old: dict[int, list[int]] = {}
        touched_new: dict[int, list[int]] = {}
        loose_old, loose_new = [], []
        for ln in removed:
            ins = old_owner.get(ln)
            if ins is not None:
                touched_old.setdefault(ins.index, []).append(ln)
            elif old_doc is None and fallback(old_lines, ln):
                loose_old.append(ln)
        for ln in added:
            ins = new_owner.get(ln)
            if ins is not None:
                touched_new.setdefault(ins.index, []).append(ln)
            elif new_doc is None and fallback(new_lines, ln):
                loose_new.append(ln)
        olds = [(old_doc.instructions[k].text, v) for k, v in touched_old.items()]
        olds += [(fallback(old_lines, ln), [ln]) for ln in loose_old]
        news = [(new_doc.instructions[k].text, v) for k, v in touched_new.items()]
        news += [(fallback(new_lines, ln), [ln]) for ln in loose_new]
        for pos, (text, lines) in enumerate(news):
            kind = "modification" if pos < len(olds) else "addition"
            records.append(_record(commit, text, date, kind, lines))
        for text, lines in olds[len(news):]:
            records.append(_record(commit, text, date, "deletion", lines))
    return records


def _record(commit, text, date, change_kind, lines) -> ModificationRecord:
    kind = text.split(None, 1)[0].upper() if text.strip() else "UNKNOWN"
    return ModificationRecord(commit, kind, text, date, change_kind, tuple(lines))


def context_sources(doc: ParsedDockerfile) -> dict[int, list[str]]:
    """Build-context patterns read by each COPY/ADD (remote and --from sources dropped)."""
    out: dict[int, list[str]] = {}
    for ins, (_, el) in zip(doc.instructions, analyze(doc)):
        if ins.kind in ("COPY", "ADD"):
            pats = [p for p in el.context_paths if not p.startswith("remote:")]
            if pats:
                out[ins.index] = sorted(pats)
    return out


def collect_history(repo_path, dockerfile_path, window_months: int = DEFAULT_WINDOW_MONTHS,
                    now: datetime | None = None, context_dir: str | None = None,
                    since_commit: str | None = None, git: Git | None = None) -> list[ModificationRecord]:
    """Records for the Dockerfile and its COPY/ADD inputs, newest window only.

    ``dockerfile_path`` and ``context_dir`` are relative to the repository
    root; the context defaults to the Dockerfile's directory.  With
    ``since_commit`` only commits after it are examined (incremental runs).
    """
    if window_months < 1:
        raise ValueError("window_months must be at least 1")
    if not os.path.isdir(repo_path):
        raise NotARepository(f"{repo_path} is not a directory")
    git = git or Git(repo_path)
    try:
        top = git("rev-parse", "--show-toplevel").strip()
    except subprocess.CalledProcessError as exc:
        raise NotARepository(f"{repo_path} is not a git work tree") from exc
    rel = os.path.relpath(os.path.join(repo_path, dockerfile_path), top).replace(os.sep, "/")
    full = os.path.join(top, rel)
    if not os.path.isfile(full):
        raise DockerfileNotFound(f"{dockerfile_path} not found in {repo_path}")
    if context_dir is None:
        context_rel = os.path.dirname(rel)
    else:
        context_rel = os.path.relpath(os.path.join(repo_path, context_dir), top).replace(os.sep, "/")
    context_rel = "" if context_rel in ("", ".") else context_rel.rstrip("/") + "/"

    with open(full, encoding="utf-8", newline="") as fh:
        current = parse_dockerfile(fh.read())
    sources = context_sources(current)
    trie_by_ins = {k: PathTrie(v) for k, v in sources.items()}

    try:
        log = git("log", "--first-parent", "--reverse", "--format=%H %P%x09%ct", "HEAD")
    except subprocess.CalledProcessError:
        return []  # no commits yet
    now = _aware(now or datetime.now(timezone.utc))
    cutoff = subtract_months(now, window_months)

    commits = []
    for line in log.splitlines():
        ids, _, stamp = line.partition("\t")
        parts = ids.split()
        commits.append((parts[0], parts[1] if len(parts) > 1 else None,
                        datetime.fromtimestamp(int(stamp), timezone.utc)))
    if since_commit is not None:
        ids = [c[0] for c in commits]
        if since_commit in ids:
            commits = commits[ids.index(since_commit) + 1:]

    records: list[ModificationRecord] = []
    for commit, parent, date in commits:
        if parent is None or date < cutoff:
            continue
        diff = git("diff", "-U0", "--no-color", "--no-ext-diff", parent, commit, "--", rel)
        if diff.strip():
            old_text = _show(git, parent, rel)
            new_text = _show(git, commit, rel)
            records += _direct_records(commit, date, _safe_parse(old_text), _safe_parse(new_text),
                                       diff, old_text, new_text)
        names = git("diff", "--name-status", "--no-renames", parent, commit)
        for line in names.splitlines():
            status, _, path = line.partition("\t")
            if not path or path == rel or (context_rel and not path.startswith(context_rel)):
                continue
            local = path[len(context_rel):]
            hits = [k for k, trie in trie_by_ins.items() if trie.covers(local)]
            if not hits:
                continue
            kind = {"A": "addition", "D": "deletion"}.get(status[:1], "modification")
            records.append(ModificationRecord(commit, "FILE", local, date, kind, (), min(hits)))
    return records


def _show(git: Git, commit: str, path: str) -> str | None:
    try:
        return git("show", f"{commit}:{path}")
    except subprocess.CalledProcessError:
        return None


def head_commit(repo_path, git: Git | None = None) -> str | None:
    git = git or Git(repo_path)
    try:
        return git("rev-parse", "HEAD").strip()
    except subprocess.CalledProcessError:
        return None


# -- similarity --------------------------------------------------------------------

_TOKEN_RE = re.compile(r"[^\s;&|<>()`'\"\\]+")


def shell_tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _body(text: str) -> str:
    parts = text.strip().split(None, 1)
    return parts[1] if len(parts) > 1 else ""


class ShellSimilarity:
    """TF-IDF cosine between shell-like instruction bodies over a fixed corpus."""

    def __init__(self, corpus: Iterable[str]):
        docs = [d for d in corpus if shell_tokens(d)]
        self._vectorizer = TfidfVectorizer(tokenizer=shell_tokens, lowercase=False, token_pattern=None)
        self._fitted = bool(docs)
        if self._fitted:
            self._vectorizer.fit(docs)
        self._cache: dict[str, object] = {}

    def _vec(self, text: str):
        if text not in self._cache:
            self._cache[text] = self._vectorizer.transform([text])
        return self._cache[text]

    def cosine(self, a: str, b: str) -> float:
        if not self._fitted:
            return 1.0 if shell_tokens(a) and shell_tokens(a) == shell_tokens(b) else 0.0
        va, vb = self._vec(a), self._vec(b)
        if va.nnz == 0 or vb.nnz == 0:
            return 0.0
        value = float(cosine_similarity(va, vb)[0, 0])
        return min(1.0, max(0.0, value))


def _record_instruction(r: ModificationRecord) -> Instruction | None:
    try:
        doc = parse_dockerfile(r.content)
    except DockerfileSyntaxError:
        return None
    return doc.instructions[0] if doc.instructions else None


def _keys(ins: Instruction) -> frozenset[str]:
    if ins.arguments.variant == "key_value_pairs":
        return frozenset(k for k, _ in ins.arguments.pairs)
    return frozenset({ins.kind})


def _fs_paths(ins: Instruction) -> list[str]:
    payload = ins.arguments
    if ins.kind in ("COPY", "ADD"):
        return [s for s in payload.sources if "://" not in s and not s.startswith("<<")]
    if payload.variant == "exec_array":
        return list(payload.items[:1]) if ins.kind == "ENTRYPOINT" else list(payload.items)
    words = split_words(payload.text) if payload.text else []
    return words[:1] if ins.kind == "ENTRYPOINT" else words


def similarity(c: Instruction, r: ModificationRecord, shell: ShellSimilarity | None = None,
               tau: float = DEFAULT_TAU) -> float:
    if r.implicit:
        if c.kind not in ("COPY", "ADD"):
            return 0.0
        return 1.0 if PathTrie(_fs_paths(c)).covers(r.content) else 0.0
    if r.instruction_kind != c.kind:
        return 0.0
    category = classify(c.kind)
    if category is MatchCategory.SPECIAL:
        return 1.0
    if category is MatchCategory.SHELL_SCRIPT:
        a, b = _body(c.text), _body(r.content)
        shell = shell or ShellSimilarity([a, b])
        score = shell.cosine(a, b)
        return score if score >= tau else 0.0
    other = _record_instruction(r)
    if other is None or other.kind != c.kind:
        return 0.0
    if category is MatchCategory.KEY_VALUE:
        return 1.0 if _keys(c) == _keys(other) else 0.0
    trie = PathTrie(_fs_paths(c))
    paths = _fs_paths(other)
    return 1.0 if paths and any(trie.covers(p) for p in paths) else 0.0


# -- frequencies -------------------------------------------------------------------

class FrequencyTable(Mapping):
    """index -> normalized frequency, with the raw values alongside."""

    def __init__(self, raw: Mapping[int, float], total_modifications: int,
                 window_months: int = DEFAULT_WINDOW_MONTHS, similarities=None):
        self.raw = dict(raw)
        self.total_modifications = total_modifications
        self.window_months = window_months
        self.similarities = similarities or {}
        s = sum(self.raw.values())
        if s > 0:
            self.normalized = {k: v / s for k, v in self.raw.items()}
        else:
            n = len(self.raw)
            self.normalized = {k: 1.0 / n for k in self.raw} if n else {}

    def __getitem__(self, index: int) -> float:
        return self.normalized[index]

    def __iter__(self) -> Iterator[int]:
        return iter(self.normalized)

    def __len__(self) -> int:
        return len(self.normalized)

    @classmethod
    def uniform(cls, indices: Iterable[int], window_months: int = DEFAULT_WINDOW_MONTHS):
        return cls({i: 0.0 for i in indices}, 0, window_months)

    def to_json(self) -> dict:
        return {
            "window_months": self.window_months,
            "total_modifications": self.total_modifications,
            "entries": [{"index": k, "raw": self.raw[k], "normalized": self.normalized[k]}
                        for k in sorted(self.raw)],
        }


def shell_corpus(instructions: Sequence[Instruction], records: Iterable[ModificationRecord]) -> list[str]:
    docs = [_body(c.text) for c in instructions if classify(c.kind) is MatchCategory.SHELL_SCRIPT]
    docs += [_body(r.content) for r in records
             if not r.implicit and r.instruction_kind in CATEGORY
             and classify(r.instruction_kind) is MatchCategory.SHELL_SCRIPT]
    return docs


def compute_frequencies(instructions: Sequence[Instruction], records: Sequence[ModificationRecord],
                        window_months: int = DEFAULT_WINDOW_MONTHS, tau: float = DEFAULT_TAU,
                        now: datetime | None = None, apply_window: bool = False) -> FrequencyTable:
    """Frequency per instruction: summed similarity over records / number of records.

    Records are expected pre-filtered to the window; pass ``apply_window``
    to filter here instead.
    """
    if apply_window:
        records = filter_window(records, window_months, now)
    records = list(records)
    shell = ShellSimilarity(shell_corpus(instructions, records))
    total = len(records)
    raw, sims = {}, {}
    for c in instructions:
        scores = [similarity(c, r, shell, tau) if _comparable(c, r) else 0.0 for r in records]
        sims[c.index] = scores
        raw[c.index] = sum(scores) / total if total else 0.0
    return FrequencyTable(raw, total, window_months, sims)


def _comparable(c: Instruction, r: ModificationRecord) -> bool:
    return r.implicit or r.instruction_kind == c.kind


def record_events(instructions: Sequence[Instruction], records: Sequence[ModificationRecord],
                  tau: float = DEFAULT_TAU) -> list[tuple[str, frozenset[int]]]:
    """Group records per commit into sets of current instruction indices they modify.

    A direct record goes to the most similar instruction (ties to the
    earliest); a FILE record to every COPY/ADD whose sources contain it.
    Commits whose records match nothing are dropped.
    """
    shell = ShellSimilarity(shell_corpus(instructions, records))
    by_commit: dict[str, set[int]] = {}
    order: list[str] = []
    for r in records:
        if r.commit_id not in by_commit:
            by_commit[r.commit_id] = set()
            order.append(r.commit_id)
        scored = [(similarity(c, r, shell, tau), c.index) for c in instructions if _comparable(c, r)]
        if r.implicit:
            by_commit[r.commit_id].update(i for s, i in scored if s > 0)
            continue
        best = max(scored, key=lambda t: (t[0], -t[1]), default=(0.0, -1))
        if best[0] > 0:
            by_commit[r.commit_id].add(best[1])
    return [(cid, frozenset(by_commit[cid])) for cid in order if by_commit[cid]]


__all__ = [
    "CATEGORY", "DEFAULT_TAU", "DEFAULT_WINDOW_MONTHS", "FrequencyTable", "Git",
    "MatchCategory", "ModificationRecord", "ShellSimilarity", "classify", "collect_history",
    "compute_frequencies", "context_sources", "filter_window", "head_commit", "record_events",
    "similarity", "subtract_months",
]
