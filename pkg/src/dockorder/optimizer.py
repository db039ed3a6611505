"""Cost model and dependency-respecting reordering.

The cost of an order is the expected rebuild time: each instruction's change
frequency times the build time of everything from it to the end of the file
(a change invalidates its own layer and every later one).  Stages are
optimized independently and concatenated; the later-stage build time each
node also pays is the same for every node of a stage, so this loses nothing.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import CyclicDependency, GroupCycle, InvalidGroups, MissingWeight, TooLarge
from .graph import DependencyEdge, DependencyGraph
from .parser import ParsedDockerfile, serialize

KEY_RULES = ("paper", "ratio")


def _weight(table: Mapping[int, float], index: int, what: str) -> float:
    try:
        return float(table[index])
    except KeyError:
        raise MissingWeight(index, what) from None


def total_cost(order: Sequence[int], freq: Mapping[int, float], cost: Mapping[int, float]) -> float:
    """Sum over positions of frequency times the build-time suffix starting there."""
    terms = []
    suffix = 0.0
    for index in reversed(order):
        suffix += _weight(cost, index, "build time")
        terms.append(_weight(freq, index, "frequency") * suffix)
    return math.fsum(terms)


def _ratio(f: float, b: float) -> float:
    if f == 0:
        return 0.0
    if b == 0:
        return math.inf
    return f / b


@dataclass(frozen=True)
class OptimizationOptions:
    key_rule: str = "paper"
    preserve_groups: bool = False
    group_map: tuple[tuple[int, ...], ...] | None = None
    safeguard: bool = True
    stale_keys: bool = False

    def __post_init__(self):
        if self.key_rule not in KEY_RULES:
            raise ValueError(f"key_rule must be one of {KEY_RULES}")


@dataclass
class OptimizationPlan:
    original_order: list[int]
    optimized_order: list[int]
    cost_before: float
    cost_after: float
    chosen_variant: str
    details: list[dict] = field(default_factory=list)

    @property
    def improvement(self) -> float:
        return 0.0 if self.cost_before == 0 else (self.cost_before - self.cost_after) / self.cost_before

    @property
    def moved(self) -> list[int]:
        return [i for i, (a, b) in enumerate(zip(self.original_order, self.optimized_order)) if a != b]

    def to_json(self) -> dict:
        return {
            "original_order": list(self.original_order),
            "optimized_order": list(self.optimized_order),
            "cost_before": self.cost_before,
            "cost_after": self.cost_after,
            "improvement": self.improvement,
            "chosen_variant": self.chosen_variant,
            "details": self.details,
        }


def _topo_sort(nodes: Sequence[int], succ: Mapping[int, Iterable[int]], freq, cost,
               key_rule: str, stale: bool) -> list[int]:
    """Priority topological sort; the smallest key among ready nodes goes next.

    ``paper``: frequency times the build time of all not-yet-placed nodes,
    recomputed at every pop (or frozen at insertion with ``stale``).
    ``ratio``: frequency / build time.  Ties go to the lower source index.
    """
    members = set(nodes)
    indeg = {n: 0 for n in nodes}
    for n in nodes:
        for s in succ.get(n, ()):
            if s in members:
                indeg[s] += 1
    remaining = math.fsum(cost[n] for n in nodes)

    def key(n: int) -> float:
        if key_rule == "ratio":
            return _ratio(freq[n], cost[n])
        return freq[n] * remaining

    ready = [n for n in nodes if indeg[n] == 0]
    order: list[int] = []
    if stale:
        heap = [(key(n), n) for n in ready]
        heapq.heapify(heap)
        while heap:
            _, n = heapq.heappop(heap)
            order.append(n)
            for s in succ.get(n, ()):
                if s in members:
                    indeg[s] -= 1
                    if indeg[s] == 0:
                        heapq.heappush(heap, (key(s), s))
            remaining -= cost[n]
    else:
        while ready:
            n = min(ready, key=lambda m: (key(m), m))
            ready.remove(n)
            order.append(n)
            remaining -= cost[n]
            for s in succ.get(n, ()):
                if s in members:
                    indeg[s] -= 1
                    if indeg[s] == 0:
                        ready.append(s)
    if len(order) != len(nodes):
        raise CyclicDependency(n for n in nodes if n not in order)
    return order


def _successors(graph: DependencyGraph) -> dict[int, list[int]]:
    return {n: graph.successors(n) for n in graph.nodes}


def _check_weights(nodes: Iterable[int], freq, cost) -> tuple[dict, dict]:
    f = {n: _weight(freq, n, "frequency") for n in nodes}
    b = {n: _weight(cost, n, "build time") for n in nodes}
    return f, b


def optimize(graph: DependencyGraph, freq: Mapping[int, float], cost: Mapping[int, float],
             opts: OptimizationOptions | None = None) -> OptimizationPlan:
    opts = opts or OptimizationOptions()
    graph.check_acyclic()
    f, b = _check_weights(graph.nodes, freq, cost)
    original = list(graph.nodes)

    if opts.preserve_groups and opts.group_map:
        candidate = _optimize_grouped(graph, f, b, opts)
    else:
        succ = _successors(graph)
        candidate = []
        for stage, members in sorted(graph.stage_members().items()):
            candidate += _topo_sort(members, succ, f, b, opts.key_rule, opts.stale_keys)

    before = total_cost(original, f, b)
    after = total_cost(candidate, f, b)
    variant = opts.key_rule + ("-stale" if opts.stale_keys else "")
    if opts.preserve_groups and opts.group_map:
        variant += "+groups"
    if opts.safeguard and after > before:
        candidate, after = original, before
        variant += "+fallback"

    pos = {n: i for i, n in enumerate(candidate)}
    details = [
        {"index": n, "frequency": f[n], "build_time": b[n], "original_position": i, "final_position": pos[n]}
        for i, n in enumerate(original)
    ]
    return OptimizationPlan(original, candidate, before, after, variant, details)


# -- groups --------------------------------------------------------------------------

def _normalize_groups(graph: DependencyGraph, group_map) -> list[tuple[int, ...]]:
    if isinstance(group_map, Mapping):
        buckets: dict = {}
        for index, gid in group_map.items():
            buckets.setdefault(gid, []).append(int(index))
        groups = list(buckets.values())
    else:
        groups = [list(g) for g in group_map]
    covered = [n for g in groups for n in g]
    nodes = set(graph.nodes)
    missing = nodes - set(covered)
    groups += [[n] for n in sorted(missing)]  # unlisted nodes stay on their own
    covered = [n for g in groups for n in g]
    if len(covered) != len(set(covered)) or set(covered) != nodes:
        raise InvalidGroups("groups must partition the instruction indices")
    out = []
    for g in groups:
        if not g:
            continue
        if len({graph.stages.get(n, 0) for n in g}) > 1:
            raise InvalidGroups(f"group {sorted(g)} spans stages")
        out.append(tuple(sorted(g)))
    return sorted(out)


def group_contract(graph: DependencyGraph, freq: Mapping[int, float], cost: Mapping[int, float],
                   group_map) -> tuple[DependencyGraph, dict[int, float], dict[int, float], dict[int, tuple[int, ...]]]:
    """Collapse each group into a super-node named by its lowest member.

    Super-node build time is the members' sum, frequency their max.
    Returns the contracted graph, its weights, and super-node -> members.
    """
    groups = _normalize_groups(graph, group_map)
    owner = {n: g[0] for g in groups for n in g}
    members = {g[0]: g for g in groups}
    edges = set()
    for e in graph.edges:
        a, b = owner[e.from_index], owner[e.to_index]
        if a != b:
            edges.add(DependencyEdge(a, b, e.kind, e.evidence))
    contracted = DependencyGraph(tuple(members), frozenset(edges),
                                 {g: graph.stages.get(g, 0) for g in members})
    try:
        contracted.check_acyclic()
    except CyclicDependency as exc:
        raise GroupCycle([members[n] for n in exc.nodes]) from None
    f = {g: max(_weight(freq, n, "frequency") for n in ms) for g, ms in members.items()}
    b = {g: math.fsum(_weight(cost, n, "build time") for n in ms) for g, ms in members.items()}
    return contracted, f, b, members


def _optimize_grouped(graph: DependencyGraph, f, b, opts: OptimizationOptions) -> list[int]:
    contracted, gf, gb, members = group_contract(graph, f, b, opts.group_map)
    succ = _successors(contracted)
    order: list[int] = []
    for stage, nodes in sorted(contracted.stage_members().items()):
        for g in _topo_sort(nodes, succ, gf, gb, opts.key_rule, opts.stale_keys):
            order += members[g]
    if not graph.is_topological(order):
        raise GroupCycle([members[g] for g in members])
    return order


# -- exact oracle ----------------------------------------------------------------------

def brute_force_optimal(graph: DependencyGraph, freq: Mapping[int, float], cost: Mapping[int, float],
                        max_n: int = 10) -> tuple[list[int], float]:
    """Exhaustive minimum over topological orders (branch and bound over ready sets).

    Uses the prefix form of the objective: placing node j adds b_j times
    the frequency mass placed so far including j.  The remaining nodes are
    bounded below by their unconstrained optimum (ratio order).
    """
    nodes = list(graph.nodes)
    if len(nodes) > max_n:
        raise TooLarge(len(nodes), max_n)
    f, b = _check_weights(nodes, freq, cost)
    if not nodes:
        return [], 0.0
    preds = {n: set(graph.predecessors(n)) & set(nodes) for n in nodes}

    def relaxed(rest: Iterable[int], mass: float) -> float:
        total = 0.0
        for n in sorted(rest, key=lambda m: (_ratio(f[m], b[m]), m)):
            mass += f[n]
            total += b[n] * mass
        return total

    best_order: list[int] | None = None
    best_inc = math.inf
    best_exact = math.inf
    slack = 1e-9

    def search(placed: list[int], placed_set: set[int], mass: float, acc: float) -> None:
        nonlocal best_order, best_inc, best_exact
        if len(placed) == len(nodes):
            if acc <= best_inc * (1 + slack):
                exact = total_cost(placed, f, b)
                if exact < best_exact:
                    best_exact, best_order = exact, list(placed)
                best_inc = min(best_inc, acc)
            return
        rest = [n for n in nodes if n not in placed_set]
        if acc + relaxed(rest, mass) > best_inc * (1 + slack) + 1e-12:
            return
        ready = [n for n in rest if preds[n] <= placed_set]
        # trying low f/b first finds good orders early
        for n in sorted(ready, key=lambda m: (_ratio(f[m], b[m]), m)):
            placed.append(n)
            placed_set.add(n)
            search(placed, placed_set, mass + f[n], acc + b[n] * (mass + f[n]))
            placed.pop()
            placed_set.discard(n)

    search([], set(), 0.0, 0.0)
    if best_order is None:
        raise CyclicDependency(nodes)
    return best_order, best_exact


# -- output -----------------------------------------------------------------------------

def emit_dockerfile(doc: ParsedDockerfile, plan: OptimizationPlan | Sequence[int]) -> str:
    order = plan.optimized_order if isinstance(plan, OptimizationPlan) else list(plan)
    return serialize(doc.reordered(order))
