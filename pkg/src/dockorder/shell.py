"""A small POSIX-subset shell splitter for RUN/CMD/ENTRYPOINT bodies.

Covered: pipelines, ``&&``/``||``/``;``, single and double quotes, ``$VAR``
and ``${VAR}`` references, redirections, and flag/positional separation.
Anything outside that subset raises UnsupportedConstruct so callers can fall
back to treating the whole body as one opaque command.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace

from .errors import ShellParseError, UnsupportedConstruct

CONNECTORS = {"&&": "and", "||": "or", "|": "pipe", ";": "sequence"}
_CONNECTOR_TEXT = {v: k for k, v in CONNECTORS.items()}

_ASSIGN_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*=")
_RESERVED = frozenset({
    "if", "then", "else", "elif", "fi", "for", "while", "until", "do", "done",
    "case", "esac", "function", "select", "!", "[[", "]]", "{", "}",
})
_REDIR_OPS = (">>", ">&", ">|", "<&", "<>", ">", "<")


@dataclass(frozen=True)
class SimpleCommand:
    program: str
    flags: tuple[str, ...] = ()
    positional_args: tuple[str, ...] = ()
    connector_to_next: str = "none"
    redirections: tuple[tuple[str, str], ...] = ()
    words: tuple[str, ...] = ()
    assignments: tuple[str, ...] = ()

    @property
    def is_assignment_only(self) -> bool:
        return bool(_ASSIGN_RE.match(self.program))

    def render(self) -> str:
        parts = [*self.assignments, self.program, *self.words]
        parts += [f"{op}{target}" for op, target in self.redirections]
        return " ".join(parts)


@dataclass
class _Token:
    kind: str  # word | op | redir
    value: str
    offset: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    i, n = 0, len(text)
    cur: list[str] = []
    start = 0
    quoted = False

    def flush():
        nonlocal cur, quoted
        if cur:
            tokens.append(_Token("word", "".join(cur), start))
        cur, quoted = [], False

    while i < n:
        ch = text[i]
        nxt = text[i + 1] if i + 1 < n else ""
        if ch in " \t":
            flush()
            i += 1
            continue
        if ch == "\n":
            flush()
            tokens.append(_Token("op", "\n", i))
            i += 1
            continue
        if not cur:
            start = i
        if ch == "#" and not cur:
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch == "'":
            end = text.find("'", i + 1)
            if end < 0:
                raise ShellParseError(i)
            cur.append(text[i:end + 1])
            quoted = True
            i = end + 1
            continue
        if ch == '"':
            j = i + 1
            while j < n and text[j] != '"':
                if text[j] == "\\":
                    j += 2
                    continue
                if text[j] == "`" or text.startswith("$(", j):
                    raise UnsupportedConstruct("command substitution")
                j += 1
            if j >= n:
                raise ShellParseError(i)
            cur.append(text[i:j + 1])
            quoted = True
            i = j + 1
            continue
        if ch == "\\":
            if nxt == "\n":
                i += 2
                continue
            cur.append(text[i:i + 2])
            i += 2
            continue
        if ch == "`" or (ch == "$" and nxt == "("):
            raise UnsupportedConstruct("command substitution")
        if ch == "$" and nxt == "{":
            end = text.find("}", i)
            if end < 0:
                raise ShellParseError(i, "unbalanced ${")
            cur.append(text[i:end + 1])
            i = end + 1
            continue
        if ch in "()":
            raise UnsupportedConstruct("subshell")
        if ch in "<>":
            if nxt == "(":
                raise UnsupportedConstruct("process substitution")
            if text.startswith("<<", i):
                raise UnsupportedConstruct("heredoc")
            fd = ""
            if cur and not quoted and "".join(cur).isdigit():
                fd = "".join(cur)
                cur = []
            else:
                flush()
            op = next(o for o in _REDIR_OPS if text.startswith(o, i))
            tokens.append(_Token("redir", fd + op, i))
            i += len(op)
            continue
        if ch == "&":
            if nxt == "&":
                flush()
                tokens.append(_Token("op", "&&", i))
                i += 2
                continue
            if nxt == ">":
                flush()
                op = "&>>" if text.startswith("&>>", i) else "&>"
                tokens.append(_Token("redir", op, i))
                i += len(op)
                continue
            raise UnsupportedConstruct("background job")
        if ch == "|":
            flush()
            if nxt == "|":
                tokens.append(_Token("op", "||", i))
                i += 2
            elif nxt == "&":
                raise UnsupportedConstruct("|&")
            else:
                tokens.append(_Token("op", "|", i))
                i += 1
            continue
        if ch == ";":
            flush()
            if nxt == ";":
                raise UnsupportedConstruct(";;")
            tokens.append(_Token("op", ";", i))
            i += 1
            continue
        cur.append(ch)
        i += 1
    flush()
    return tokens


def _build_command(tokens: list[_Token], connector: str, offset: int) -> SimpleCommand:
    words: list[str] = []
    redirections: list[tuple[str, str]] = []
    k = 0
    while k < len(tokens):
        tok = tokens[k]
        if tok.kind == "redir":
            if k + 1 >= len(tokens) or tokens[k + 1].kind != "word":
                raise ShellParseError(tok.offset, "redirection without target")
            redirections.append((tok.value, tokens[k + 1].value))
            k += 2
            continue
        words.append(tok.value)
        k += 1
    if not words:
        raise ShellParseError(offset, "empty command")

    assignments = []
    while len(words) > 1 and _ASSIGN_RE.match(words[0]):
        assignments.append(words.pop(0))
    program, args = words[0], words[1:]
    if program in _RESERVED:
        raise UnsupportedConstruct(program)

    flags, positional = [], []
    end_of_options = False
    for word in args:
        if word == "--" and not end_of_options:
            end_of_options = True
        elif not end_of_options and word.startswith("-") and word != "-":
            flags.append(word)
        else:
            positional.append(word)
    return SimpleCommand(
        program=program,
        flags=tuple(flags),
        positional_args=tuple(positional),
        connector_to_next=connector,
        redirections=tuple(redirections),
        words=tuple(args),
        assignments=tuple(assignments),
    )


def parse_shell(text: str) -> list[SimpleCommand]:
    """Split a shell body into simple commands joined by control operators."""
    commands: list[SimpleCommand] = []
    group: list[_Token] = []
    group_offset = 0
    for tok in _tokenize(text):
        if tok.kind != "op":
            if not group:
                group_offset = tok.offset
            group.append(tok)
            continue
        if not group:
            # a newline after an operator (or a blank line) is just layout
            if tok.value == "\n":
                continue
            raise ShellParseError(tok.offset, "empty command")
        connector = "sequence" if tok.value == "\n" else CONNECTORS[tok.value]
        commands.append(_build_command(group, connector, group_offset))
        group = []
    if group:
        commands.append(_build_command(group, "none", group_offset))
    elif commands:
        if commands[-1].connector_to_next != "sequence":
            raise ShellParseError(len(text), "dangling operator")
        commands[-1] = replace(commands[-1], connector_to_next="none")
    return commands


def join_commands(commands: list[SimpleCommand]) -> str:
    """Inverse of parse_shell up to whitespace."""
    parts: list[str] = []
    for cmd in commands:
        parts.append(cmd.render())
        if cmd.connector_to_next == "sequence":
            parts[-1] += ";"
        elif cmd.connector_to_next != "none":
            parts.append(_CONNECTOR_TEXT[cmd.connector_to_next])
    return " ".join(parts)


def unquote(word: str) -> str:
    """Strip shell quoting from a word; variable references stay verbatim."""
    out: list[str] = []
    i = 0
    while i < len(word):
        ch = word[i]
        if ch == "'":
            end = word.find("'", i + 1)
            end = len(word) if end < 0 else end
            out.append(word[i + 1:end])
            i = end + 1
        elif ch == '"':
            j = i + 1
            while j < len(word) and word[j] != '"':
                if word[j] == "\\" and j + 1 < len(word) and word[j + 1] in '"\\`':
                    out.append(word[j + 1])
                    j += 2
                    continue
                out.append(word[j])
                j += 1
            i = j + 1
        elif ch == "\\" and i + 1 < len(word):
            out.append(word[i + 1])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)
