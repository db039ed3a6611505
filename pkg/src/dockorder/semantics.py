"""Per-instruction semantic elements.

Instructions are folded left to right into an EnvState (variables, workdir,
user, shell); each instruction is then read against the state *before* it to
produce the sets the dependency rules compare: variables defined/used, paths
read/written, users, packages and build-context keys.
"""

from __future__ import annotations

import json
import posixpath
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Mapping

from .errors import ShellParseError, UnsupportedConstruct
from .parser import Instruction, ParsedDockerfile, split_words, stage_aliases
from .shell import SimpleCommand, parse_shell, unquote

MAX_PASSES = 8

_REF_RE = re.compile(
    r"(?<!\\)\$(?:\{([A-Za-z_][A-Za-z0-9_]*)(?:(:?[-+])([^}]*))?\}|([A-Za-z_][A-Za-z0-9_]*))"
)
_POSIX_SHELLS = {"sh", "bash", "dash", "ash", "zsh", "ksh", "busybox"}
_ARCHIVE_SUFFIXES = (".tar", ".tar.gz", ".tgz", ".tar.xz", ".txz", ".tar.bz2", ".tbz2")
_IGNORED_TARGETS = {"/dev/null", "/dev/stdout", "/dev/stderr", "/dev/stdin"}


@dataclass(frozen=True)
class EnvState:
    variables: Mapping[str, str | None] = field(default_factory=dict)
    workdir: str = "/"
    user: str = "root"
    shell: tuple[str, ...] = ("/bin/sh", "-c")
    stage_index: int = -1
    global_args: Mapping[str, str | None] = field(default_factory=dict)


def references(text: str) -> list[str]:
    """Variable names referenced by ``$NAME`` / ``${NAME...}`` in text."""
    return [m.group(1) or m.group(4) for m in _REF_RE.finditer(text)]


def _substitute(text: str, variables: Mapping[str, str | None], missing: set[str]) -> str:
    def repl(m: re.Match) -> str:
        name = m.group(1) or m.group(4)
        op, word = m.group(2), m.group(3) or ""
        value = variables.get(name)
        if name not in variables:
            missing.add(name)
        if op is None:
            return m.group(0) if value is None else value
        if op.endswith("-"):
            use_value = value is not None and (value != "" or op == "-")
            return value if use_value else word
        present = value is not None and (value != "" or op == "+")
        return word if present else ""

    return _REF_RE.sub(repl, text)


def resolve_variables(text: str, state: EnvState | Mapping[str, str | None]) -> tuple[str, set[str]]:
    """Substitute known variables until nothing changes.

    Returns the new text and the names that were referenced but never
    defined.  A definition cycle that is still changing after MAX_PASSES
    leaves the text untouched.
    """
    variables = state.variables if isinstance(state, EnvState) else state
    missing: set[str] = set()
    current = text
    for _ in range(MAX_PASSES):
        nxt = _substitute(current, variables, missing)
        if nxt == current:
            return current, missing
        current = nxt
    return text, missing


def expand_path(pattern: str, state: EnvState | str) -> str:
    workdir = state.workdir if isinstance(state, EnvState) else state
    path = pattern if pattern.startswith("/") else workdir.rstrip("/") + "/" + pattern
    trailing = pattern.endswith("/")
    norm = posixpath.normpath(path)
    if norm.startswith("//"):
        norm = "/" + norm.lstrip("/")
    if trailing and norm != "/":
        norm += "/"
    return norm


def _strip_dir(path: str) -> str:
    return path.rstrip("/") or "/"


# -- command registry ----------------------------------------------------------

class CommandKnowledgeRegistry:
    """Read-only program -> effect-template table loaded from JSON."""

    def __init__(self, data: Mapping):
        self.programs: dict = dict(data.get("programs", {}))
        self.package_provides: dict = {k.lower(): list(v) for k, v in data.get("package_provides", {}).items()}
        self.process_env = frozenset(data.get("process_env", ()))
        self.process_env_prefixes = tuple(data.get("process_env_prefixes", ()))

    @classmethod
    def default(cls) -> "CommandKnowledgeRegistry":
        global _DEFAULT
        if _DEFAULT is None:
            text = resources.files("dockorder").joinpath("data/commands.json").read_text("utf-8")
            _DEFAULT = cls(json.loads(text))
        return _DEFAULT

    @classmethod
    def from_file(cls, path) -> "CommandKnowledgeRegistry":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def _entry(self, program: str) -> dict | None:
        name = posixpath.basename(program).lower()
        seen = set()
        entry = self.programs.get(name)
        if entry is None:
            stripped = re.sub(r"[\d.]+$", "", name)
            entry = self.programs.get(stripped) if stripped and stripped != name else None
        while entry is not None and "ref" in entry and entry["ref"] not in seen:
            seen.add(entry["ref"])
            entry = self.programs.get(entry["ref"])
        return entry

    def lookup(self, program: str, positional: tuple[str, ...] = ()) -> tuple[dict, bool]:
        """Effect template for a program, plus whether the first positional was a subcommand."""
        entry = self._entry(program)
        if entry is None:
            return {}, False
        base = {k: v for k, v in entry.items() if k not in ("subcommands", "default")}
        subs = entry.get("subcommands")
        if subs and positional:
            sub = unquote(positional[0]).lower()
            if sub in subs:
                merged = dict(base)
                for key, value in subs[sub].items():
                    if isinstance(value, list) and isinstance(merged.get(key), list):
                        merged[key] = merged[key] + value
                    else:
                        merged[key] = value
                return merged, True
        if "default" in entry:
            return {**base, **entry["default"]}, False
        return base, False

    def is_known(self, program: str) -> bool:
        return self._entry(program) is not None

    def provides(self, package: str) -> list[str]:
        return self.package_provides.get(package.lower(), [])

    def affects_process(self, name: str) -> bool:
        return name in self.process_env or name.startswith(self.process_env_prefixes)


_DEFAULT: CommandKnowledgeRegistry | None = None


# -- elements ------------------------------------------------------------------

@dataclass(frozen=True)
class SemanticElements:
    vars_defined: frozenset[str] = frozenset()
    vars_used: frozenset[str] = frozenset()
    unresolved: frozenset[str] = frozenset()
    paths_in: frozenset[str] = frozenset()
    paths_out: frozenset[str] = frozenset()
    context_paths: frozenset[str] = frozenset()
    user_read: str = "root"
    user_written: str | None = None
    users_created: frozenset[str] = frozenset()
    users_needed: frozenset[str] = frozenset()
    pkgs_installed: frozenset[str] = frozenset()
    pkgs_used: frozenset[str] = frozenset()
    context_writes: frozenset[str] = frozenset()
    context_reads: frozenset[str] = frozenset()
    misc: frozenset[str] = frozenset()

    @property
    def opaque(self) -> bool:
        return "opaque" in self.misc

    def to_json(self) -> dict:
        out = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            out[name] = sorted(value) if isinstance(value, frozenset) else value
        return out


class _Acc:
    """Mutable scratch space while extracting one instruction."""

    def __init__(self, state: EnvState):
        self.state = state
        self.sets: dict[str, set[str]] = {
            name: set() for name, f in SemanticElements.__dataclass_fields__.items()
            if f.type.startswith("frozenset")
        }
        self.user_written: str | None = None

    def add(self, name: str, *values: str) -> None:
        self.sets[name].update(v for v in values if v)

    def resolve(self, text: str) -> str:
        self.add("vars_used", *references(text))
        value, missing = resolve_variables(text, self.state)
        self.add("unresolved", *missing)
        return value

    def build(self) -> SemanticElements:
        kw = {name: frozenset(values) for name, values in self.sets.items()}
        kw["pkgs_installed"] = frozenset(p.lower() for p in kw["pkgs_installed"])
        kw["pkgs_used"] = frozenset(p.lower() for p in kw["pkgs_used"])
        kw["unresolved"] = kw["unresolved"] - kw["vars_defined"]
        return SemanticElements(user_read=self.state.user, user_written=self.user_written, **kw)


def _package_name(word: str) -> str | None:
    w = unquote(word)
    if not w or "://" in w or w.startswith(("/", ".", "~", "$")) or w.endswith((".txt", ".whl", ".tar.gz")):
        return None
    if w.startswith("@"):
        scope, _, rest = w[1:].partition("/")
        name = "@" + scope + "/" + rest.split("@", 1)[0] if rest else w
    else:
        name = re.split(r"[=<>!~@\[;:]", w, maxsplit=1)[0]
    return name.lower() or None


def _looks_like_path(word: str) -> bool:
    return word.startswith(("/", "./", "../", "~/")) or word in (".", "..")


def _select(spec: str, positional: list[str]) -> list[str]:
    if spec == "args":
        return positional
    if spec.startswith("arg:"):
        k = int(spec[4:])
        try:
            return [positional[k]]
        except IndexError:
            return []
    if spec.startswith("args:"):
        part = spec[5:]
        if part.endswith(":"):
            return positional[int(part[:-1]):]
        return positional[:int(part)]
    return [spec]  # a literal path


def _flag_values(cmd: SimpleCommand, names: list[str]) -> list[str]:
    """Values given to any of ``names`` (``-o x``, ``-ox``, ``--out=x``)."""
    out = []
    words = list(cmd.words)
    for k, word in enumerate(words):
        for name in names:
            if word == name and k + 1 < len(words):
                out.append(words[k + 1])
            elif name.startswith("--") and word.startswith(name + "="):
                out.append(word[len(name) + 1:])
            elif not name.startswith("--") and len(name) == 2 and word.startswith(name) and len(word) > 2 \
                    and not word.startswith("--"):
                out.append(word[2:])
    return out


def _positional(cmd: SimpleCommand, value_flags: list[str]) -> list[str]:
    """Positional arguments, skipping the values consumed by value-taking flags."""
    out = []
    skip = False
    end_of_options = False
    for word in cmd.words:
        if skip:
            skip = False
            continue
        if word == "--" and not end_of_options:
            end_of_options = True
            continue
        if not end_of_options and word.startswith("-") and word != "-":
            if word in value_flags:
                skip = True
            continue
        out.append(word)
    return out


def _is_opaque(template: dict, cmd: SimpleCommand, positional: list[str]) -> bool:
    if template.get("opaque"):
        return True
    opaque_flags = template.get("opaque_flags", [])
    for flag in cmd.flags:
        if flag in opaque_flags or (flag.startswith("-") and not flag.startswith("--")
                                    and any(f[1:] in flag[1:] for f in opaque_flags if len(f) == 2)):
            return True
    # a shell reading its script from stdin (``curl ... | sh``) runs unknown code
    return bool(template.get("script")) and not positional


def _run_commands(acc: _Acc, commands: list[SimpleCommand], registry: CommandKnowledgeRegistry,
                  expand: bool) -> None:
    """Map each simple command through the registry, tracking ``cd``."""
    cwd = acc.state.workdir

    def word_value(word: str) -> str:
        if expand:
            word = acc.resolve(word)
        return unquote(word)

    def path(word: str) -> str | None:
        value = word_value(word)
        if not value or value == "-" or "://" in value or value.startswith("$"):
            return None
        if value.startswith("~"):
            value = "/root" + value[1:] if acc.state.user == "root" else "/home/" + acc.state.user + value[1:]
        absolute = expand_path(value, cwd)
        return None if absolute in _IGNORED_TARGETS else absolute

    for cmd in commands:
        if expand:
            for a in cmd.assignments:
                acc.resolve(a)
        if cmd.is_assignment_only:
            if expand:
                acc.resolve(cmd.program)
            continue
        program = word_value(cmd.program)
        for op, target in cmd.redirections:
            if op.endswith("&") or target.isdigit():
                continue
            p = path(target)
            if p is None:
                continue
            acc.add("paths_in" if op.lstrip("0123456789").startswith("<") else "paths_out", p)

        template, has_sub = registry.lookup(program, cmd.positional_args)
        value_flags = list(template.get("value_flags", []))
        positional = _positional(cmd, value_flags)
        if has_sub and positional:
            positional = positional[1:]
        if not template and not registry.is_known(program):
            if "/" in program:
                acc.add("paths_in", path(cmd.program) or "")
            acc.add("pkgs_used", posixpath.basename(program))
            if expand:
                for w in cmd.words:
                    acc.resolve(w)
            continue

        acc.add("pkgs_used", posixpath.basename(program))
        if expand:
            for w in cmd.words:
                acc.resolve(w)
        if _is_opaque(template, cmd, positional):
            acc.add("misc", "opaque")
            continue
        if template.get("chdir"):
            if positional:
                cwd = _strip_dir(path(positional[0]) or cwd)
            continue
        if template.get("installs"):
            for word in positional:
                name = _package_name(word_value(word))
                if name is None:
                    if _looks_like_path(word_value(word)):
                        acc.add("paths_in", path(word) or "")
                    continue
                acc.add("pkgs_installed", name, *registry.provides(name))
        acc.add("pkgs_used", *template.get("uses", []))
        for spec in template.get("reads", []):
            for word in _select(spec, positional):
                acc.add("paths_in", path(word) or "")
        for spec in template.get("writes", []):
            for word in _select(spec, positional):
                acc.add("paths_out", path(word) or "")
        for word in _flag_values(cmd, template.get("flag_reads", [])):
            acc.add("paths_in", path(word) or "")
        for word in _flag_values(cmd, template.get("flag_writes", [])):
            acc.add("paths_out", path(word) or "")
        if template.get("creates_user") and positional:
            acc.add("users_created", word_value(positional[-1]))
        if "user_arg" in template:
            for word in _select(template["user_arg"], positional):
                acc.add("users_needed", word_value(word).split(":", 1)[0])


def _shell_body(acc: _Acc, ins: Instruction, registry: CommandKnowledgeRegistry) -> None:
    """Shared handling of RUN-like bodies (shell text or exec array)."""
    payload = ins.arguments
    if payload.variant == "exec_array":
        if not payload.items:
            return
        # no shell: the vector is one command and variables are not expanded
        args = payload.items[1:]
        cmd = SimpleCommand(
            program=payload.items[0],
            flags=tuple(w for w in args if w.startswith("-") and w != "-"),
            positional_args=tuple(w for w in args if not w.startswith("-") or w == "-"),
            words=tuple(args),
        )
        _run_commands(acc, [cmd], registry, expand=False)
        return
    text = payload.text
    shell_name = posixpath.basename(acc.state.shell[0]) if acc.state.shell else "sh"
    if ins.heredoc or shell_name not in _POSIX_SHELLS:
        acc.resolve(text)
        acc.add("misc", "opaque")
        return
    try:
        commands = parse_shell(text)
    except (UnsupportedConstruct, ShellParseError):
        acc.resolve(text)
        acc.add("misc", "opaque")
        return
    _run_commands(acc, commands, registry, expand=True)


def _copy_like(acc: _Acc, ins: Instruction) -> None:
    payload = ins.arguments
    for name in ("chown", "chmod", "from"):
        value = ins.flag(name)
        if value:
            value = acc.resolve(value)
            if name == "chown":
                acc.add("users_needed", value.split(":", 1)[0])
            if name == "from":
                acc.add("misc", f"copy_from:{value.lower()}")
    from_stage = ins.flag("from") is not None
    if ins.heredoc:
        sources = [s for s in payload.sources if not s.startswith("<<")]
    else:
        sources = list(payload.sources)
    sources = [acc.resolve(s) for s in sources]
    dest_raw = acc.resolve(payload.destination)
    if not dest_raw.startswith("/"):
        acc.add("context_reads", "workdir")
    dest = expand_path(dest_raw, acc.state)
    dest_is_dir = (dest_raw.endswith("/") or dest_raw in (".", "..") or len(payload.sources) > 1
                   or any(_has_glob(s) for s in sources))
    if ins.heredoc and not sources:
        acc.add("paths_out", _strip_dir(dest))
        return
    for src in sources:
        is_url = "://" in src
        if is_url:
            acc.add("context_paths", "remote:" + src)
        elif not from_stage:
            acc.add("context_paths", _context_pattern(src))
        base = posixpath.basename(src.rstrip("/"))
        dir_like = (
            not is_url and (src in (".", "./", "..") or src.endswith("/") or ("." not in base and not _has_glob(base))
                            or (ins.kind == "ADD" and base.endswith(_ARCHIVE_SUFFIXES)))
        )
        if dir_like or not dest_is_dir:
            acc.add("paths_out", _strip_dir(dest))
        else:
            acc.add("paths_out", _strip_dir(dest).rstrip("/") + "/" + base)


def _has_glob(s: str) -> bool:
    return any(c in s for c in "*?[")


def _context_pattern(src: str) -> str:
    trailing = src.endswith("/")
    norm = posixpath.normpath(src.lstrip("/")) if src.strip("/") else "."
    if trailing and norm != ".":
        norm += "/"
    return norm


def extract_elements(ins: Instruction, state: EnvState,
                     registry: CommandKnowledgeRegistry | None = None) -> SemanticElements:
    registry = registry or CommandKnowledgeRegistry.default()
    kind = ins.kind
    if kind == "FROM" and state.stage_index >= 0:
        # only global ARGs are visible to FROM lines
        state = replace(state, variables=dict(state.global_args))
    acc = _Acc(state)
    payload = ins.arguments

    if kind == "FROM":
        acc.add("misc", "from")
        words = payload.text.split()
        if words:
            image = acc.resolve(words[0])
            acc.add("misc", f"from_image:{image.lower()}")
        for name in ("platform",):
            if ins.flag(name):
                acc.resolve(ins.flag(name))
    elif kind in ("ARG", "ENV"):
        for key, value in payload.pairs:
            acc.add("vars_defined", key)
            if value is not None:
                acc.resolve(value)
            elif kind == "ARG" and state.stage_index >= 0 and key in state.global_args:
                # a bare ARG inside a stage re-imports the global value
                acc.add("vars_used", key)
            if registry.affects_process(key):
                acc.add("context_writes", f"env:{key}")
        if state.stage_index < 0:
            acc.add("misc", "pre_from")
    elif kind == "LABEL":
        for key, value in payload.pairs:
            acc.resolve(key)
            acc.resolve(value or "")
            acc.add("misc", f"label:{key}")
    elif kind == "MAINTAINER":
        acc.add("misc", "maintainer")
    elif kind in ("COPY", "ADD"):
        _copy_like(acc, ins)
    elif kind == "WORKDIR":
        acc.resolve(payload.text)
        acc.add("context_writes", "workdir")
        acc.add("context_reads", "workdir")
    elif kind == "USER":
        value = acc.resolve(payload.text).strip()
        acc.user_written = value
        acc.add("users_needed", value.split(":", 1)[0])
    elif kind == "VOLUME":
        items = payload.items if payload.variant == "exec_array" else split_words(payload.text)
        for item in items:
            p = expand_path(acc.resolve(item), state)
            acc.add("paths_in", p)
            acc.add("paths_out", p)
    elif kind == "RUN":
        acc.add("context_reads", "workdir", "shell", "env:*")
        _shell_body(acc, ins, registry)
    elif kind in ("CMD", "ENTRYPOINT"):
        acc.add("misc", kind.lower())
        acc.add("context_reads", "workdir", "env:*")
        if payload.variant == "shell_text":
            acc.add("context_reads", "shell")
            acc.resolve(payload.text)
        else:
            acc.add("misc", "exec_form")
    elif kind == "SHELL":
        acc.add("context_writes", "shell")
        acc.add("context_reads", "shell")
        if payload.items:
            acc.add("pkgs_used", posixpath.basename(payload.items[0]))
            if payload.items[0].startswith("/"):
                acc.add("paths_in", payload.items[0])
    elif kind == "EXPOSE":
        acc.resolve(payload.text)
    elif kind == "HEALTHCHECK":
        acc.add("misc", "healthcheck")
        if payload.variant == "shell_text":
            acc.add("context_reads", "shell")
            acc.resolve(payload.text)
    elif kind == "ONBUILD":
        acc.add("misc", "onbuild")
    elif kind == "STOPSIGNAL":
        acc.add("misc", "stopsignal")
        acc.resolve(payload.text)
    return acc.build()


def fold_state(state: EnvState, ins: Instruction) -> EnvState:
    kind = ins.kind
    payload = ins.arguments
    if kind == "FROM":
        globals_ = state.global_args if state.stage_index >= 0 else state.variables
        return EnvState(variables={}, stage_index=state.stage_index + 1, global_args=dict(globals_))
    if kind in ("ARG", "ENV"):
        variables = dict(state.variables)
        for key, value in payload.pairs:
            if value is not None:
                variables[key] = resolve_variables(value, state)[0]
            elif kind == "ARG" and state.global_args.get(key) is not None:
                variables[key] = state.global_args[key]
            elif key not in variables:
                variables[key] = None
        return replace(state, variables=variables)
    if kind == "WORKDIR":
        target, _ = resolve_variables(payload.text, state)
        return replace(state, workdir=_strip_dir(expand_path(target.strip(), state)))
    if kind == "USER":
        user = resolve_variables(payload.text, state)[0].strip()
        return replace(state, user=user or state.user)
    if kind == "SHELL" and payload.items:
        return replace(state, shell=tuple(payload.items))
    return state


def analyze(doc: ParsedDockerfile, registry: CommandKnowledgeRegistry | None = None
            ) -> list[tuple[EnvState, SemanticElements]]:
    """Fold through the document and extract elements for every instruction."""
    registry = registry or CommandKnowledgeRegistry.default()
    state = EnvState()
    out = []
    for ins in doc.instructions:
        out.append((state, extract_elements(ins, state, registry)))
        state = fold_state(state, ins)
    return out


def stage_alias_map(doc: ParsedDockerfile) -> dict[str, int]:
    return stage_aliases(doc.instructions)
