"""Typed dependency DAG over instructions.

Each ordered pair inside a stage is judged by a two-step filter: a cheap
kind-level table rules out pairs that can never interact (LABEL vs RUN), and
the survivors have their semantic elements compared.  Read-after-write,
write-after-read and write-after-write hazards all produce edges, because
any of the three changes the image when the pair is swapped.
"""

from __future__ import annotations

import json
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import CyclicDependency
from .parser import Instruction, ParsedDockerfile, stage_aliases
from .pathtrie import overlapping
from .semantics import CommandKnowledgeRegistry, SemanticElements, analyze

EDGE_KINDS = ("Variable", "FileDir", "User", "Package", "Context", "Other")

# Kinds that keep their relative position: every earlier node in the stage
# precedes them.
PINNED = frozenset({"HEALTHCHECK", "ONBUILD", "STOPSIGNAL"})
# Last one wins, so duplicates must stay in order.
LAST_WINS = frozenset({"CMD", "ENTRYPOINT", "MAINTAINER"})

# Step one of the filter: which element categories each kind can produce and
# consume.  Pairs with no overlap never reach the element comparison.
_PROVIDES = {
    "FROM": set(),
    "ARG": {"Variable", "Context"},
    "ENV": {"Variable", "Context"},
    "LABEL": set(),
    "MAINTAINER": set(),
    "COPY": {"FileDir"},
    "ADD": {"FileDir"},
    "WORKDIR": {"Context", "FileDir"},
    "USER": {"User"},
    "VOLUME": {"FileDir"},
    "RUN": {"FileDir", "Package", "User"},
    "SHELL": {"Context"},
    "CMD": set(),
    "ENTRYPOINT": set(),
    "EXPOSE": set(),
    "ONBUILD": set(),
    "HEALTHCHECK": set(),
    "STOPSIGNAL": set(),
}
_CONSUMES = {
    "FROM": {"Variable"},
    "ARG": {"Variable"},
    "ENV": {"Variable"},
    "LABEL": {"Variable"},
    "MAINTAINER": set(),
    "COPY": {"Variable", "FileDir", "User", "Context"},
    "ADD": {"Variable", "FileDir", "User", "Context"},
    "WORKDIR": {"Variable", "Context", "FileDir"},
    "USER": {"Variable", "User"},
    "VOLUME": {"Variable", "FileDir"},
    "RUN": {"Variable", "FileDir", "User", "Package", "Context"},
    "SHELL": {"Context", "Package", "FileDir"},
    "CMD": {"Variable", "Context"},
    "ENTRYPOINT": {"Variable", "Context"},
    "EXPOSE": {"Variable"},
    "ONBUILD": set(),
    "HEALTHCHECK": {"Variable", "Context"},
    "STOPSIGNAL": {"Variable"},
}
# Hazards run both ways (a later write can clobber an earlier read), so the
# filter asks whether either side can touch a category the other touches.
_TOUCHES = {k: _PROVIDES[k] | _CONSUMES[k] for k in _PROVIDES}


@dataclass(frozen=True, order=True)
class DependencyEdge:
    from_index: int
    to_index: int
    kind: str
    evidence: str = field(default="", compare=False)

    def to_json(self) -> dict:
        return {"from": self.from_index, "to": self.to_index, "kind": self.kind, "evidence": self.evidence}


@dataclass(frozen=True)
class Node:
    instruction: Instruction
    elements: SemanticElements

    @property
    def index(self) -> int:
        return self.instruction.index

    @property
    def kind(self) -> str:
        return self.instruction.kind


@dataclass
class DependencyGraph:
    nodes: tuple[int, ...]
    edges: frozenset[DependencyEdge]
    stages: Mapping[int, int] = field(default_factory=dict)
    instructions: Mapping[int, Instruction] = field(default_factory=dict, compare=False, repr=False)
    elements: Mapping[int, SemanticElements] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        self.nodes = tuple(sorted(self.nodes))
        self.edges = frozenset(self.edges)
        if not self.stages:
            self.stages = {n: 0 for n in self.nodes}
        self._succ: dict[int, set[int]] = defaultdict(set)
        self._pred: dict[int, set[int]] = defaultdict(set)
        for e in self.edges:
            self._succ[e.from_index].add(e.to_index)
            self._pred[e.to_index].add(e.from_index)

    @classmethod
    def from_pairs(cls, nodes: Iterable[int] | int, pairs: Iterable[tuple[int, int]],
                   stages: Mapping[int, int] | None = None) -> "DependencyGraph":
        nodes = range(nodes) if isinstance(nodes, int) else nodes
        edges = frozenset(DependencyEdge(a, b, "Other") for a, b in pairs)
        return cls(tuple(nodes), edges, dict(stages or {}))

    def successors(self, n: int) -> list[int]:
        return sorted(self._succ.get(n, ()))

    def predecessors(self, n: int) -> list[int]:
        return sorted(self._pred.get(n, ()))

    def pairs(self) -> set[tuple[int, int]]:
        return {(e.from_index, e.to_index) for e in self.edges}

    def indegree(self, within: Iterable[int] | None = None) -> dict[int, int]:
        members = set(self.nodes if within is None else within)
        return {n: sum(1 for p in self._pred.get(n, ()) if p in members) for n in members}

    def ancestors(self, n: int) -> set[int]:
        seen: set[int] = set()
        stack = [n]
        while stack:
            for p in self._pred.get(stack.pop(), ()):
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return seen

    def stage_members(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = defaultdict(list)
        for n in self.nodes:
            out[self.stages.get(n, 0)].append(n)
        return dict(out)

    def check_acyclic(self) -> None:
        indeg = {n: len(self._pred.get(n, ())) for n in self.nodes}
        queue = deque(n for n, d in indeg.items() if d == 0)
        seen = 0
        while queue:
            n = queue.popleft()
            seen += 1
            for s in self._succ.get(n, ()):
                indeg[s] -= 1
                if indeg[s] == 0:
                    queue.append(s)
        if seen != len(self.nodes):
            raise CyclicDependency(n for n, d in indeg.items() if d > 0)

    def is_topological(self, order: Sequence[int]) -> bool:
        if sorted(order) != list(self.nodes):
            return False
        pos = {n: i for i, n in enumerate(order)}
        return all(pos[e.from_index] < pos[e.to_index] for e in self.edges)


# -- pair judgement ---------------------------------------------------------------

def _last_writer_between(between: Sequence[Node], test) -> bool:
    return any(test(n.elements) for n in between)


def _context_match(written: str, read: str) -> bool:
    return written == read or (read == "env:*" and written.startswith("env:"))


def judge_pair(a: Node, b: Node, between: Sequence[Node] = ()) -> list[DependencyEdge]:
    """Edges a -> b justified by the rules; ``between`` are the nodes strictly between them.

    ``between`` is what makes "most recent writer" work: a definition that is
    shadowed by an intervening one produces no edge.
    """
    ea, eb = a.elements, b.elements
    i, j = a.index, b.index
    edges: list[DependencyEdge] = []

    def edge(kind: str, why: str) -> None:
        edges.append(DependencyEdge(i, j, kind, why))

    # Other: structural rules that do not depend on element contents
    if a.kind == "FROM":
        edge("Other", f"stage base #{i}")
    if b.kind in PINNED:
        edge("Other", f"{b.kind} keeps its place after #{i}")
    if a.kind == b.kind and b.kind in LAST_WINS and not any(n.kind == b.kind for n in between):
        edge("Other", f"later {b.kind} overrides #{i}")
    if a.kind == b.kind == "LABEL":
        la = {m for m in ea.misc if m.startswith("label:")}
        shared = la & {m for m in eb.misc if m.startswith("label:")}
        for key in sorted(shared):
            if not any(key in n.elements.misc for n in between):
                edge("Other", f"LABEL {key[6:]} overrides #{i}")

    opaque_a, opaque_b = ea.opaque, eb.opaque
    if not (opaque_a or opaque_b) and not (_TOUCHES[a.kind] & _TOUCHES[b.kind]):
        return _dedupe(edges)

    # Variable, bound to the most recent definition
    for v in sorted(eb.vars_used & ea.vars_defined):
        if not _last_writer_between(between, lambda e: v in e.vars_defined):
            edge("Variable", f"uses var {v} defined at #{i}")
    for v in sorted(ea.vars_used & eb.vars_defined):
        if not _last_writer_between(between, lambda e: v in e.vars_defined):
            edge("Variable", f"redefines var {v} read at #{i}")
    for v in sorted(ea.vars_defined & eb.vars_defined):
        if not _last_writer_between(between, lambda e: v in e.vars_defined):
            edge("Variable", f"redefines var {v} defined at #{i}")

    # FileDir, by trie overlap; an opaque command reads and writes everything
    out_a = {"/"} if opaque_a else ea.paths_out
    in_a = {"/"} if opaque_a else ea.paths_in
    out_b = {"/"} if opaque_b else eb.paths_out
    in_b = {"/"} if opaque_b else eb.paths_in
    for kind_pair, left, right, verb in (
        ("raw", out_a, in_b, "reads {r} written at #{i}"),
        ("war", in_a, out_b, "overwrites {r} read at #{i}"),
        ("waw", out_a, out_b, "overwrites {r} written at #{i}"),
    ):
        hits = overlapping(left, right)
        if hits:
            edge("FileDir", verb.format(r=hits[0][1], i=i))

    # User
    a_runs = a.kind == "RUN"
    b_runs = b.kind == "RUN"
    if ea.user_written is not None and (b_runs or eb.user_written is not None or b.kind in ("COPY", "ADD")):
        if not _last_writer_between(between, lambda e: e.user_written is not None):
            edge("User", f"runs as {ea.user_written} set at #{i}")
    if a_runs and eb.user_written is not None:
        if not _last_writer_between(between, lambda e: e.user_written is not None):
            edge("User", f"changes user after #{i} ran")
    created = ea.users_created & eb.users_needed
    if created:
        edge("User", f"needs user {sorted(created)[0]} created at #{i}")
    if opaque_a and eb.users_needed - {"root"}:
        edge("User", f"user may be created by opaque #{i}")

    # Package
    if opaque_a and (eb.pkgs_used or eb.pkgs_installed) or opaque_b and (ea.pkgs_installed or ea.pkgs_used):
        edge("Package", f"opaque command at #{i if opaque_a else j} may touch packages")
    else:
        used = eb.pkgs_used & ea.pkgs_installed
        if used:
            edge("Package", f"uses {sorted(used)[0]} installed at #{i}")
        reinstalled = ea.pkgs_used & eb.pkgs_installed
        if reinstalled:
            edge("Package", f"reinstalls {sorted(reinstalled)[0]} used at #{i}")
        both = ea.pkgs_installed & eb.pkgs_installed
        if both:
            edge("Package", f"reinstalls {sorted(both)[0]} installed at #{i}")

    # Context (workdir / shell / process env), most recent writer per key
    for w in sorted(ea.context_writes):
        if any(_context_match(w, r) for r in eb.context_reads) or w in eb.context_writes:
            if not _last_writer_between(between, lambda e: w in e.context_writes):
                edge("Context", f"{w} set at #{i}")
    for w in sorted(eb.context_writes):
        if any(_context_match(w, r) for r in ea.context_reads) and w not in ea.context_writes:
            if not _last_writer_between(between, lambda e: w in e.context_writes):
                edge("Context", f"changes {w} read at #{i}")

    return _dedupe(edges)


def _dedupe(edges: list[DependencyEdge]) -> list[DependencyEdge]:
    seen: dict[tuple[int, int, str], DependencyEdge] = {}
    for e in edges:
        seen.setdefault((e.from_index, e.to_index, e.kind), e)
    return sorted(seen.values())


# -- whole-document graph -----------------------------------------------------------

def build_graph(doc: ParsedDockerfile, elements: Sequence[SemanticElements] | None = None,
                registry: CommandKnowledgeRegistry | None = None) -> DependencyGraph:
    if elements is None:
        elements = [e for _, e in analyze(doc, registry)]
    nodes = [Node(ins, el) for ins, el in zip(doc.instructions, elements)]
    by_stage: dict[int, list[Node]] = defaultdict(list)
    for n in nodes:
        by_stage[n.instruction.stage_index].append(n)

    edges: set[DependencyEdge] = set()
    for stage, members in by_stage.items():
        for x, a in enumerate(members):
            for y in range(x + 1, len(members)):
                edges.update(judge_pair(a, members[y], members[x + 1:y]))

    # global ARGs: before every FROM, and feeding FROM lines / in-stage redeclarations
    pre = by_stage.get(-1, [])
    for x, a in enumerate(pre):
        if a.kind != "ARG":
            continue
        for b in nodes:
            if b.kind == "FROM":
                edges.add(DependencyEdge(a.index, b.index, "Other", "global ARG precedes FROM"))
            if b.kind in ("FROM", "ARG") and b.instruction.stage_index >= 0:
                for e in judge_pair(a, b, pre[x + 1:]):
                    if e.kind == "Variable":
                        edges.add(e)

    # cross-stage references: COPY --from=<stage> and FROM <stage>
    aliases = stage_aliases(doc.instructions)
    for b in nodes:
        refs = [m.split(":", 1)[1] for m in b.elements.misc if m.startswith(("copy_from:", "from_image:"))]
        for ref in refs:
            stage = aliases.get(ref)
            if stage is None or stage >= b.instruction.stage_index:
                continue
            last = max(n.index for n in by_stage[stage])
            edges.add(DependencyEdge(last, b.index, "Other", f"reads stage {ref} ending at #{last}"))

    graph = DependencyGraph(
        nodes=tuple(n.index for n in nodes),
        edges=frozenset(edges),
        stages={n.index: n.instruction.stage_index for n in nodes},
        instructions={n.index: n.instruction for n in nodes},
        elements={n.index: n.elements for n in nodes},
    )
    if any(e.from_index >= e.to_index for e in graph.edges):
        bad = {e.from_index for e in graph.edges if e.from_index >= e.to_index}
        raise CyclicDependency(bad)
    graph.check_acyclic()
    return graph


# -- export ------------------------------------------------------------------------

def export_graph(g: DependencyGraph, fmt: str = "dot") -> str:
    if fmt == "json":
        return json.dumps(graph_to_json(g), indent=2) + "\n"
    if fmt != "dot":
        raise ValueError(f"unknown graph format {fmt!r}")
    if not g.nodes:
        return "digraph {}\n"
    lines = ["digraph {"]
    for n in g.nodes:
        ins = g.instructions.get(n)
        label = f"#{n} {ins.kind}" if ins else f"#{n}"
        lines.append(f'  n{n} [label="{label}"];')
    for e in sorted(g.edges):
        lines.append(f'  n{e.from_index} -> n{e.to_index} [label="{e.kind}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def graph_to_json(g: DependencyGraph) -> dict:
    return {
        "nodes": [
            {"index": n, "stage": g.stages.get(n, 0),
             "kind": g.instructions[n].kind if n in g.instructions else None}
            for n in g.nodes
        ],
        "edges": [e.to_json() for e in sorted(g.edges)],
    }


def graph_from_json(text: str | dict) -> DependencyGraph:
    data = json.loads(text) if isinstance(text, str) else text
    edges = frozenset(DependencyEdge(e["from"], e["to"], e["kind"], e.get("evidence", ""))
                      for e in data["edges"])
    return DependencyGraph(
        nodes=tuple(n["index"] for n in data["nodes"]),
        edges=edges,
        stages={n["index"]: n.get("stage", 0) for n in data["nodes"]},
    )
