"""Dockerfile front end: text -> typed instructions -> text.

Parsing is lossless: every instruction keeps the exact source lines it came
from (plus the comment/blank lines directly above it), so an untouched
document serializes back byte-for-byte and a reordered one moves comments
together with their instruction.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .errors import DockerfileSyntaxError

KEYWORDS = (
    "FROM", "ARG", "ENV", "LABEL", "COPY", "ADD", "WORKDIR", "USER", "VOLUME",
    "RUN", "SHELL", "CMD", "ENTRYPOINT", "EXPOSE", "ONBUILD", "HEALTHCHECK",
    "STOPSIGNAL", "MAINTAINER",
)
DEPRECATED = frozenset({"MAINTAINER"})

# Only these accept leading --flag options.
_FLAG_KINDS = frozenset({"FROM", "COPY", "ADD", "RUN", "HEALTHCHECK"})
_KNOWN_DIRECTIVES = frozenset({"syntax", "escape", "check"})

_DIRECTIVE_RE = re.compile(r"^#\s*([A-Za-z][A-Za-z0-9_-]*)\s*=\s*(.*?)\s*$")
_FLAG_RE = re.compile(r"--([^\s=]+)(?:=(\S*))?(?:\s+|$)")
_HEREDOC_RE = re.compile(r"<<(-?)([\"']?)([A-Za-z_][A-Za-z0-9_]*)\2")

VARIANTS = ("key_value_pairs", "shell_text", "exec_array", "path_args", "single_value")


@dataclass(frozen=True)
class SourceSpan:
    start_line: int
    end_line: int
    raw_text: str = ""


@dataclass(frozen=True)
class ArgumentPayload:
    variant: str
    pairs: tuple[tuple[str, str | None], ...] = ()
    text: str = ""
    items: tuple[str, ...] = ()
    sources: tuple[str, ...] = ()
    destination: str = ""

    def to_json(self) -> dict:
        if self.variant == "key_value_pairs":
            return {"variant": self.variant, "pairs": [list(p) for p in self.pairs]}
        if self.variant == "exec_array":
            return {"variant": self.variant, "items": list(self.items)}
        if self.variant == "path_args":
            return {"variant": self.variant, "sources": list(self.sources),
                    "destination": self.destination}
        return {"variant": self.variant, "text": self.text}


@dataclass(frozen=True)
class Instruction:
    kind: str
    flags: tuple[tuple[str, str | None], ...]
    arguments: ArgumentPayload
    span: SourceSpan
    stage_index: int
    index: int
    body: str = ""
    heredoc: bool = False

    @property
    def deprecated(self) -> bool:
        return self.kind in DEPRECATED

    def flag(self, name: str, default: str | None = None) -> str | None:
        name = name.lstrip("-").lower()
        for key, value in self.flags:
            if key == name:
                return value
        return default

    @property
    def text(self) -> str:
        """Single-line canonical form, used for similarity and reports."""
        parts = [self.kind]
        for key, value in self.flags:
            parts.append(f"--{key}" if value is None else f"--{key}={value}")
        if self.body:
            parts.append(self.body)
        return " ".join(parts)

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "kind": self.kind,
            "stage_index": self.stage_index,
            "flags": [[k, v] for k, v in self.flags],
            "arguments": self.arguments.to_json(),
            "span": {"start_line": self.span.start_line, "end_line": self.span.end_line},
            "deprecated": self.deprecated,
        }


@dataclass(frozen=True)
class ParsedDockerfile:
    directives: tuple[tuple[str, str], ...] = ()
    instructions: tuple[Instruction, ...] = ()
    trailing_comments: str = ""
    directive_text: str = ""
    escape: str = "\\"

    def __len__(self) -> int:
        return len(self.instructions)

    def stages(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for ins in self.instructions:
            out.setdefault(ins.stage_index, []).append(ins.index)
        return out

    def reordered(self, order: Sequence[int]) -> "ParsedDockerfile":
        by_index = {ins.index: ins for ins in self.instructions}
        if sorted(order) != sorted(by_index):
            raise ValueError("order is not a permutation of the instruction indices")
        return replace(self, instructions=tuple(by_index[i] for i in order))


# -- argument helpers -------------------------------------------------------

def split_words(text: str, line: int = 0) -> list[str]:
    """Whitespace split honoring quotes and backslash escapes.

    Quotes are removed; ``\\$`` is kept escaped so later variable expansion
    leaves it alone.
    """
    words: list[str] = []
    cur: list[str] = []
    in_word = False
    quote = None
    i = 0
    while i < len(text):
        ch = text[i]
        nxt = text[i + 1] if i + 1 < len(text) else ""
        if quote == "'":
            if ch == "'":
                quote = None
            else:
                cur.append(ch)
        elif quote == '"':
            if ch == '"':
                quote = None
            elif ch == "\\" and nxt in ('"', "\\"):
                cur.append(nxt)
                i += 1
            elif ch == "\\" and nxt == "$":
                cur.append("\\$")
                i += 1
            else:
                cur.append(ch)
        elif ch in "\"'":
            quote = ch
            in_word = True
        elif ch == "\\" and nxt:
            cur.append("\\$" if nxt == "$" else nxt)
            in_word = True
            i += 1
        elif ch.isspace():
            if in_word:
                words.append("".join(cur))
                cur, in_word = [], False
        else:
            cur.append(ch)
            in_word = True
        i += 1
    if quote:
        raise DockerfileSyntaxError(line, "unterminated quote")
    if in_word:
        words.append("".join(cur))
    return words


def _parse_key_values(kind: str, body: str, line: int) -> tuple[tuple[str, str | None], ...]:
    first = body.split(None, 1)[0]
    if "=" not in first and kind in ("ENV", "LABEL"):
        # legacy "ENV key value with spaces"
        parts = body.split(None, 1)
        if len(parts) < 2:
            raise DockerfileSyntaxError(line, f"{kind} {first!r} needs a value")
        return ((first, parts[1].strip()),)
    pairs = []
    for word in split_words(body, line):
        if "=" not in word:
            if kind == "ARG":
                pairs.append((word, None))
                continue
            raise DockerfileSyntaxError(line, f"{kind} expects name=value, got {word!r}")
        key, value = word.split("=", 1)
        if not key:
            raise DockerfileSyntaxError(line, f"{kind} names can not be blank")
        pairs.append((key, value))
    return tuple(pairs)


def _maybe_exec(body: str) -> tuple[str, ...] | None:
    if not body.startswith("["):
        return None
    try:
        value = json.loads(body)
    except ValueError:
        return None
    if isinstance(value, list) and all(isinstance(v, str) for v in value):
        return tuple(value)
    return None


def _parse_arguments(kind: str, body: str, line: int, heredoc: bool) -> ArgumentPayload:
    if not body:
        raise DockerfileSyntaxError(line, f"{kind} requires at least one argument")

    if kind in ("ENV", "LABEL", "ARG"):
        return ArgumentPayload("key_value_pairs", pairs=_parse_key_values(kind, body, line))

    if kind in ("RUN", "CMD", "ENTRYPOINT"):
        items = None if heredoc else _maybe_exec(body)
        if items is not None:
            return ArgumentPayload("exec_array", items=items)
        return ArgumentPayload("shell_text", text=body)

    if kind == "SHELL":
        items = _maybe_exec(body)
        if not items:
            raise DockerfileSyntaxError(line, "SHELL requires the arguments to be in JSON form")
        return ArgumentPayload("exec_array", items=items)

    if kind in ("COPY", "ADD"):
        items = None if heredoc else _maybe_exec(body)
        if items is None:
            items = tuple(body.splitlines()[0].split())
        if len(items) < 2:
            raise DockerfileSyntaxError(line, f"{kind} requires at least two arguments")
        return ArgumentPayload("path_args", sources=items[:-1], destination=items[-1])

    if kind == "VOLUME":
        items = _maybe_exec(body)
        if items is not None:
            return ArgumentPayload("exec_array", items=items)
        return ArgumentPayload("single_value", text=body)

    if kind == "HEALTHCHECK":
        if body.upper() == "NONE":
            return ArgumentPayload("single_value", text="NONE")
        head = body.split(None, 1)
        if head[0].upper() != "CMD" or len(head) < 2:
            raise DockerfileSyntaxError(line, "HEALTHCHECK expects NONE or CMD <command>")
        cmd = head[1].strip()
        items = _maybe_exec(cmd)
        if items is not None:
            return ArgumentPayload("exec_array", items=items)
        return ArgumentPayload("shell_text", text=cmd)

    if kind == "ONBUILD":
        trigger = body.split(None, 1)[0].upper()
        if trigger not in KEYWORDS:
            raise DockerfileSyntaxError(line, f"unknown ONBUILD trigger {trigger!r}")
        if trigger in ("ONBUILD", "FROM", "MAINTAINER"):
            raise DockerfileSyntaxError(line, f"{trigger} isn't allowed as an ONBUILD trigger")
        return ArgumentPayload("single_value", text=body)

    return ArgumentPayload("single_value", text=body)


def _split_flags(kind: str, rest: str) -> tuple[tuple[tuple[str, str | None], ...], str]:
    flags = []
    if kind not in _FLAG_KINDS:
        return (), rest
    while True:
        m = _FLAG_RE.match(rest)
        if not m:
            break
        flags.append((m.group(1).lower(), m.group(2)))
        rest = rest[m.end():]
    return tuple(flags), rest


# -- main entry points -------------------------------------------------------

def _is_comment_or_blank(line: str) -> bool:
    s = line.strip()
    return not s or s.startswith("#")


def parse_dockerfile(text: str) -> ParsedDockerfile:
    lines = text.splitlines(keepends=True)
    n = len(lines)
    i = 0

    directives: list[tuple[str, str]] = []
    while i < n:
        m = _DIRECTIVE_RE.match(lines[i].rstrip("\r\n"))
        if not m or m.group(1).lower() not in _KNOWN_DIRECTIVES:
            break
        name = m.group(1).lower()
        if any(name == d for d, _ in directives):
            break
        directives.append((name, m.group(2)))
        i += 1
    directive_text = "".join(lines[:i])
    escape = dict(directives).get("escape", "\\")
    if escape not in ("\\", "`"):
        raise DockerfileSyntaxError(1, f"invalid escape token {escape!r}")

    instructions: list[Instruction] = []
    pending: list[str] = []
    stage = -1
    while i < n:
        if _is_comment_or_blank(lines[i]):
            pending.append(lines[i])
            i += 1
            continue

        start = i
        parts: list[str] = []
        while i < n:
            content = lines[i].rstrip("\r\n")
            stripped = content.rstrip()
            i += 1
            if stripped.endswith(escape):
                parts.append(stripped[:-1])
                # comment and blank lines inside a continuation are dropped
                while i < n and _is_comment_or_blank(lines[i]):
                    i += 1
                continue
            parts.append(content)
            break
        logical = "".join(parts).strip()
        line_no = start + 1

        m = re.match(r"(\S+)(?:\s+(.*))?$", logical, re.S)
        keyword = m.group(1).upper()
        if keyword not in KEYWORDS:
            raise DockerfileSyntaxError(line_no, f"unknown instruction {m.group(1)!r}")
        flags, rest = _split_flags(keyword, (m.group(2) or "").strip())

        heredoc = False
        if keyword in ("RUN", "COPY", "ADD"):
            markers = _HEREDOC_RE.findall(rest)
            if markers:
                heredoc = True
                body_lines: list[str] = []
                for dash, _, word in markers:
                    while i < n:
                        raw = lines[i].rstrip("\r\n")
                        i += 1
                        body_lines.append(raw)
                        if (raw.lstrip("\t") if dash else raw) == word:
                            break
                    else:
                        raise DockerfileSyntaxError(line_no, f"unterminated heredoc {word!r}")
                rest = rest + "\n" + "\n".join(body_lines)

        if keyword == "FROM":
            stage += 1
        arguments = _parse_arguments(keyword, rest.strip(), line_no, heredoc)
        raw = "".join(pending) + "".join(lines[start:i])
        pending = []
        instructions.append(Instruction(
            kind=keyword,
            flags=flags,
            arguments=arguments,
            span=SourceSpan(line_no, i, raw),
            stage_index=stage,
            index=len(instructions),
            body=rest.strip(),
            heredoc=heredoc,
        ))

    return ParsedDockerfile(
        directives=tuple(directives),
        instructions=tuple(instructions),
        trailing_comments="".join(pending),
        directive_text=directive_text,
        escape=escape,
    )


def render_instruction(ins: Instruction) -> str:
    return ins.text + "\n"


def serialize(doc: ParsedDockerfile) -> str:
    chunks = [doc.directive_text]
    for ins in doc.instructions:
        chunk = ins.span.raw_text or render_instruction(ins)
        if chunks[-1] and not chunks[-1].endswith("\n"):
            chunks[-1] += "\n"
        chunks.append(chunk)
    if doc.trailing_comments:
        if chunks[-1] and not chunks[-1].endswith("\n"):
            chunks[-1] += "\n"
        chunks.append(doc.trailing_comments)
    return "".join(chunks)


def read_dockerfile(path) -> ParsedDockerfile:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_dockerfile(fh.read())


def stage_aliases(instructions: Iterable[Instruction]) -> dict[str, int]:
    """Map ``FROM ... AS name`` aliases (lowercased) and stage ordinals to stage index."""
    out: dict[str, int] = {}
    for ins in instructions:
        if ins.kind != "FROM":
            continue
        out[str(ins.stage_index)] = ins.stage_index
        words = ins.arguments.text.split()
        if len(words) >= 3 and words[-2].upper() == "AS":
            out[words[-1].lower()] = ins.stage_index
    return out


def from_image(ins: Instruction) -> str:
    words = ins.arguments.text.split()
    return words[0] if words else ""
