"""Layer-cache rebuild simulation and history replay.

A modification event invalidates the earliest modified layer and everything
after it, so its rebuild cost is the build-time suffix from the first
modified position.  Replaying a history under the original and optimized
orders gives a per-event efficiency (before - after) / before.
"""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from typing import Callable, Iterable, Mapping, Sequence

from .errors import EmptyHistory, UnknownIndex
from .graph import DependencyGraph
from .history import FrequencyTable, ModificationRecord, record_events
from .optimizer import OptimizationOptions, optimize
from .parser import Instruction


@dataclass(frozen=True)
class ModificationEvent:
    modified_indices: frozenset[int]
    timestamp: datetime | None = None
    commit_id: str | None = None

    @classmethod
    def of(cls, *indices: int) -> "ModificationEvent":
        return cls(frozenset(indices))

    def to_json(self) -> dict:
        return {
            "modified_indices": sorted(self.modified_indices),
            "timestamp": self.timestamp.isoformat() if self.timestamp else None,
            "commit_id": self.commit_id,
        }

    @classmethod
    def from_json(cls, data) -> "ModificationEvent":
        if isinstance(data, (list, tuple)):
            return cls(frozenset(int(i) for i in data))
        ts = data.get("timestamp")
        return cls(frozenset(int(i) for i in data["modified_indices"]),
                   datetime.fromisoformat(ts) if ts else None, data.get("commit_id"))


@dataclass
class EfficiencyReport:
    rows: list[tuple[float, float]]
    efficiencies: list[float]
    aggregate: float
    events: list[ModificationEvent] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.rows)

    def to_json(self) -> dict:
        return {
            "events": self.count,
            "aggregate_efficiency": self.aggregate,
            "per_event": [
                {"modified_indices": sorted(ev.modified_indices) if ev else None,
                 "commit_id": ev.commit_id if ev else None,
                 "cost_before": b, "cost_after": a, "efficiency": e}
                for (b, a), e, ev in zip(self.rows, self.efficiencies, self.events or [None] * self.count)
            ],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["event", "commit_id", "modified_indices", "cost_before", "cost_after", "efficiency"])
        events = self.events or [None] * self.count
        for k, ((b, a), e, ev) in enumerate(zip(self.rows, self.efficiencies, events)):
            indices = " ".join(map(str, sorted(ev.modified_indices))) if ev else ""
            writer.writerow([k, ev.commit_id if ev and ev.commit_id else "", indices, b, a, e])
        return buf.getvalue()


def _indices(event) -> frozenset[int]:
    if isinstance(event, ModificationEvent):
        return event.modified_indices
    return frozenset(event)


def simulate_rebuild_cost(order: Sequence[int], event, cost: Mapping[int, float]) -> float:
    """Build time from the first modified position to the end of ``order``."""
    position = {n: i for i, n in enumerate(order)}
    indices = _indices(event)
    for i in indices:
        if i not in position:
            raise UnknownIndex(i)
    if not indices:
        return 0.0
    first = min(position[i] for i in indices)
    return math.fsum(cost[n] for n in order[first:])


def efficiency(before: float, after: float) -> float:
    return (before - after) / before if before > 0 else 0.0


def replay(history: Sequence, original_order: Sequence[int], optimized_order: Sequence[int],
           cost: Mapping[int, float]) -> EfficiencyReport:
    if sorted(original_order) != sorted(optimized_order):
        raise ValueError("orders are not permutations of the same indices")
    if not history:
        raise EmptyHistory("no modification events to replay")
    rows, effs = [], []
    for event in history:
        before = simulate_rebuild_cost(original_order, event, cost)
        after = simulate_rebuild_cost(optimized_order, event, cost)
        rows.append((before, after))
        effs.append(efficiency(before, after))
    events = [e if isinstance(e, ModificationEvent) else ModificationEvent(frozenset(e)) for e in history]
    return EfficiencyReport(rows, effs, math.fsum(effs) / len(effs), events)


def empirical_frequencies(events: Iterable, indices: Iterable[int]) -> FrequencyTable:
    """Share of events touching each index; uniform when there are none."""
    events = list(events)
    counts = Counter(i for e in events for i in _indices(e))
    total = len(events)
    raw = {i: (counts[i] / total if total else 0.0) for i in indices}
    return FrequencyTable(raw, total)


FrequencyHook = Callable[[Sequence[ModificationEvent]], Mapping[int, float]]


def sweep_usage_interval(history: Sequence, graph: DependencyGraph, cost: Mapping[int, float],
                         intervals: int | Iterable[int] = 1, freq_hook: FrequencyHook | None = None,
                         opts: OptimizationOptions | None = None) -> dict[int, float]:
    """Aggregate efficiency when the file is re-optimized only every ``interval`` events.

    Before event k (k = 0, interval, 2*interval, ...) frequencies are
    recomputed from events[:k] via ``freq_hook`` (default: empirical shares,
    uniform when empty) and the order is re-optimized; events in between use
    the stale order.
    """
    if not history:
        raise EmptyHistory("no modification events to sweep")
    intervals = [intervals] if isinstance(intervals, int) else list(intervals)
    events = [e if isinstance(e, ModificationEvent) else ModificationEvent(frozenset(e)) for e in history]
    original = list(graph.nodes)
    hook = freq_hook or (lambda past: empirical_frequencies(past, graph.nodes))
    out = {}
    for interval in intervals:
        if interval < 1:
            raise ValueError("interval must be at least 1")
        order = original
        effs = []
        for k, event in enumerate(events):
            if k % interval == 0:
                order = optimize(graph, hook(events[:k]), cost, opts).optimized_order
            before = simulate_rebuild_cost(original, event, cost)
            after = simulate_rebuild_cost(order, event, cost)
            effs.append(efficiency(before, after))
        out[interval] = math.fsum(effs) / len(effs)
    return out


def events_from_records(instructions: Sequence[Instruction], records: Sequence[ModificationRecord],
                        tau: float = 0.5) -> list[ModificationEvent]:
    dates = {}
    for r in records:
        dates.setdefault(r.commit_id, r.date)
    return [ModificationEvent(indices, dates.get(cid), cid)
            for cid, indices in record_events(instructions, records, tau)]
