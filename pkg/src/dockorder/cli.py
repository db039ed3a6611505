"""Command-line entry point.

Subcommands mirror the pipeline steps (parse, elements, graph, freq, cost,
optimize, simulate, verify) and ``run`` chains them, writing each step's
artifact to an output directory as soon as it is computed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Sequence

from . import __version__
from .buildcost import DEFAULT_REPEATS, CostTable, DockerCLIAdapter, load_costs, measure_costs
from .consistency import DockerInspector, compare_images, default_excludes
from .errors import DockerfileNotFound, DockorderError, UserInputError
from .fakes import DirectoryInspector
from .graph import build_graph, export_graph
from .history import (DEFAULT_TAU, DEFAULT_WINDOW_MONTHS, FrequencyTable, ModificationRecord,
                      collect_history, compute_frequencies, filter_window, head_commit)
from .optimizer import OptimizationOptions, emit_dockerfile, optimize
from .parser import ParsedDockerfile, read_dockerfile
from .semantics import CommandKnowledgeRegistry, analyze
from .simulator import EfficiencyReport, ModificationEvent, events_from_records, replay, sweep_usage_interval

log = logging.getLogger("dockorder")


# -- shared helpers -------------------------------------------------------------------

def _load_doc(path: str) -> ParsedDockerfile:
    if not os.path.isfile(path):
        raise DockerfileNotFound(f"{path} does not exist")
    return read_dockerfile(path)


def _write(path: str | None, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _parse_now(text: str | None) -> datetime | None:
    if not text:
        return None
    moment = datetime.fromisoformat(text)
    return moment if moment.tzinfo else moment.replace(tzinfo=timezone.utc)


def _registry(path: str | None) -> CommandKnowledgeRegistry:
    return CommandKnowledgeRegistry.from_file(path) if path else CommandKnowledgeRegistry.default()


def _read_json(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, ValueError) as exc:
        raise UserInputError(f"can not read {path}: {exc}") from exc


def _freq_from_file(path: str, n: int) -> FrequencyTable:
    data = _read_json(path)
    if isinstance(data, dict) and "entries" in data:
        raw = {int(e["index"]): float(e.get("raw", e.get("normalized", 0.0))) for e in data["entries"]}
        return FrequencyTable(raw, int(data.get("total_modifications", 0)),
                              int(data.get("window_months", DEFAULT_WINDOW_MONTHS)))
    if isinstance(data, dict):
        raw = {int(k): float(v) for k, v in data.items()}
        for i in range(n):
            raw.setdefault(i, 0.0)
        return FrequencyTable(raw, 0)
    raise UserInputError(f"{path}: frequency file must be a JSON object")


def _costs(source: str, doc: ParsedDockerfile, context: str, repeats: int) -> CostTable:
    if source == "uniform":
        return CostTable.uniform(range(len(doc)))
    if source == "measure":
        return measure_costs(doc, context, DockerCLIAdapter(), repeats)
    if source.startswith("load:"):
        return load_costs(source[5:], doc)
    if os.path.isfile(source):
        return load_costs(source, doc)
    raise UserInputError(f"unknown cost source {source!r} (use uniform, measure or load:PATH)")


def _load_records(path: str) -> list[ModificationRecord]:
    data = _read_json(path)
    rows = data["records"] if isinstance(data, dict) else data
    return [ModificationRecord.from_json(r) for r in rows]


def mine_records(repo: str, dockerfile: str, window_months: int, now: datetime | None,
                 cache_path: str | None = None) -> list[ModificationRecord]:
    """Mine records, reusing a cache keyed by (HEAD, Dockerfile path, window).

    When only HEAD moved, just the new commits are mined and appended.
    """
    rel = os.path.relpath(os.path.abspath(dockerfile), os.path.abspath(repo))
    head = head_commit(repo)
    cached = None
    if cache_path and os.path.isfile(cache_path):
        try:
            cached = _read_json(cache_path)
        except UserInputError:
            cached = None
    if cached and cached.get("dockerfile") == rel and cached.get("window_months") == window_months:
        records = [ModificationRecord.from_json(r) for r in cached.get("records", [])]
        if cached.get("head") == head:
            log.info("reusing %d cached records", len(records))
            return filter_window(records, window_months, now)
        records += collect_history(repo, rel, window_months, now=now, since_commit=cached.get("head"))
        records = filter_window(records, window_months, now)
    else:
        records = collect_history(repo, rel, window_months, now=now)
    if cache_path:
        _write(cache_path, _dump({"head": head, "dockerfile": rel, "window_months": window_months,
                                  "records": [r.to_json() for r in records]}))
    return records


def _order_diff(plan) -> list[dict]:
    pos = {n: i for i, n in enumerate(plan.optimized_order)}
    return [{"index": n, "from": i, "to": pos[n]} for i, n in enumerate(plan.original_order) if pos[n] != i]


def emit_report(plan, efficiency: EfficiencyReport | None, paths: dict, extra: dict | None = None,
                sweep: dict[int, float] | None = None) -> dict:
    """Write the JSON plan report and, when available, the efficiency CSVs."""
    report = {
        "cost_before": plan.cost_before,
        "cost_after": plan.cost_after,
        "improvement": plan.improvement,
        "chosen_variant": plan.chosen_variant,
        "original_order": plan.original_order,
        "optimized_order": plan.optimized_order,
        "order_diff": _order_diff(plan),
        "efficiency": efficiency.to_json() if efficiency else None,
        "sweep": [{"interval": k, "efficiency": v} for k, v in sorted((sweep or {}).items())],
    }
    report.update(extra or {})
    if paths.get("report"):
        _write(paths["report"], _dump(report))
    if efficiency is not None and paths.get("events_csv"):
        _write(paths["events_csv"], efficiency.to_csv())
    if sweep and paths.get("sweep_csv"):
        rows = ["interval,efficiency"] + [f"{k},{v!r}" for k, v in sorted(sweep.items())]
        _write(paths["sweep_csv"], "\n".join(rows) + "\n")
    return report


# -- pipeline -------------------------------------------------------------------------

@dataclass
class RunConfig:
    dockerfile_path: str
    repo_path: str | None = None
    window_months: int = DEFAULT_WINDOW_MONTHS
    tau: float = DEFAULT_TAU
    key_rule: str = "paper"
    repeats: int = DEFAULT_REPEATS
    cost_source: str = "uniform"
    groups_path: str | None = None
    out_dir: str | None = None
    suffix: str = ".optimized"
    context: str | None = None
    dry_run: bool = False
    safeguard: bool = True
    uniform_freq: bool = False
    stale_keys: bool = False
    intervals: list[int] = field(default_factory=list)
    now: datetime | None = None
    registry_path: str | None = None

    def validate(self) -> None:
        if self.window_months < 1:
            raise UserInputError("window_months must be at least 1")
        if not 0.0 <= self.tau <= 1.0:
            raise UserInputError("tau must lie in [0, 1]")
        if self.repeats < 1:
            raise UserInputError("repeats must be at least 1")
        if self.key_rule not in ("paper", "ratio"):
            raise UserInputError("key must be paper or ratio")
        if any(i < 1 for i in self.intervals):
            raise UserInputError("intervals must be at least 1")


def _groups(path: str | None):
    if not path:
        return None
    data = _read_json(path)
    if isinstance(data, dict):
        return {int(k): v for k, v in data.items()}
    return tuple(tuple(int(i) for i in g) for g in data)


def run_pipeline(config: RunConfig) -> tuple[int, dict]:
    config.validate()
    doc = _load_doc(config.dockerfile_path)
    out_dir = config.out_dir or os.path.join(os.path.dirname(os.path.abspath(config.dockerfile_path)), ".dockorder")
    artifacts = {name: os.path.join(out_dir, name) for name in (
        "graph.json", "records-cache.json", "frequencies.json", "costs.json", "report.json",
        "events.csv", "sweep.csv")}

    # 1. dependencies
    registry = _registry(config.registry_path)
    elements = [e for _, e in analyze(doc, registry)]
    graph = build_graph(doc, elements)
    _write(artifacts["graph.json"], export_graph(graph, "json"))

    # 2. frequencies
    records: list[ModificationRecord] = []
    if config.repo_path:
        records = mine_records(config.repo_path, config.dockerfile_path, config.window_months,
                               config.now, artifacts["records-cache.json"])
    if config.uniform_freq:
        freq = FrequencyTable.uniform(range(len(doc)), config.window_months)
    else:
        freq = compute_frequencies(doc.instructions, records, config.window_months, config.tau)
    _write(artifacts["frequencies.json"], _dump(freq.to_json()))

    # 3. build times
    context = config.context or os.path.dirname(os.path.abspath(config.dockerfile_path))
    costs = _costs(config.cost_source, doc, context, config.repeats)
    _write(artifacts["costs.json"], _dump(costs.to_json()))

    # 4. reorder
    opts = OptimizationOptions(config.key_rule, bool(config.groups_path), _groups(config.groups_path),
                               config.safeguard, config.stale_keys)
    plan = optimize(graph, freq, costs, opts)
    output_path = config.dockerfile_path + config.suffix
    if not config.dry_run:
        _write(output_path, emit_dockerfile(doc, plan))

    events = events_from_records(doc.instructions, records, config.tau) if records else []
    efficiency = replay(events, plan.original_order, plan.optimized_order, costs) if events else None
    sweep = sweep_usage_interval(events, graph, costs, config.intervals, opts=opts) \
        if events and config.intervals else None
    report = emit_report(plan, efficiency, {
        "report": artifacts["report.json"],
        "events_csv": artifacts["events.csv"],
        "sweep_csv": artifacts["sweep.csv"],
    }, extra={
        "dockerfile": os.path.basename(config.dockerfile_path),
        "optimized_dockerfile": None if config.dry_run else os.path.basename(output_path),
        "key_rule": config.key_rule,
        "cost_source": costs.source,
        "records": len(records),
        "frequencies": {str(k): v for k, v in sorted(freq.items())},
        "costs": {str(k): v for k, v in sorted(costs.items())},
        "edges": len(graph.edges),
    }, sweep=sweep)
    return 0, report


# -- subcommands ----------------------------------------------------------------------

def cmd_parse(args) -> int:
    doc = _load_doc(args.dockerfile)
    _write(args.output, _dump({
        "directives": [list(d) for d in doc.directives],
        "instructions": [ins.to_json() for ins in doc.instructions],
    }))
    return 0


def cmd_elements(args) -> int:
    doc = _load_doc(args.dockerfile)
    rows = [{"index": ins.index, "kind": ins.kind, "elements": el.to_json()}
            for ins, (_, el) in zip(doc.instructions, analyze(doc, _registry(args.registry)))]
    _write(args.output, _dump(rows))
    return 0


def cmd_graph(args) -> int:
    doc = _load_doc(args.dockerfile)
    graph = build_graph(doc, registry=_registry(args.registry))
    _write(args.output, export_graph(graph, args.format))
    return 0


def _records_for(args, doc_path: str) -> list[ModificationRecord]:
    now = _parse_now(args.now)
    if args.records_in:
        return filter_window(_load_records(args.records_in), args.window_months, now)
    return collect_history(args.repo, os.path.relpath(os.path.abspath(doc_path), os.path.abspath(args.repo)),
                           args.window_months, now=now)


def cmd_freq(args) -> int:
    doc = _load_doc(args.dockerfile)
    records = _records_for(args, args.dockerfile)
    if args.records_out:
        _write(args.records_out, _dump([r.to_json() for r in records]))
    freq = compute_frequencies(doc.instructions, records, args.window_months, args.tau)
    _write(args.output, _dump(freq.to_json()))
    return 0


def cmd_cost(args) -> int:
    doc = _load_doc(args.dockerfile)
    if args.action == "measure":
        table = measure_costs(doc, args.context or os.path.dirname(os.path.abspath(args.dockerfile)),
                              DockerCLIAdapter(), args.repeats)
    else:
        if not args.path:
            raise UserInputError("cost load needs a path")
        table = load_costs(args.path, doc)
    _write(args.output, _dump(table.to_json()))
    return 0


def _freq_and_cost(args, doc: ParsedDockerfile):
    n = len(doc)
    if args.uniform_freq:
        freq = FrequencyTable.uniform(range(n))
    elif args.freq:
        freq = _freq_from_file(args.freq, n)
    elif args.repo:
        records = collect_history(args.repo, os.path.relpath(os.path.abspath(args.dockerfile),
                                                             os.path.abspath(args.repo)),
                                  args.window_months, now=_parse_now(args.now))
        freq = compute_frequencies(doc.instructions, records, args.window_months, args.tau)
    else:
        freq = FrequencyTable.uniform(range(n))
    costs = _costs(args.costs, doc, os.path.dirname(os.path.abspath(args.dockerfile)), args.repeats)
    return freq, costs


def cmd_optimize(args) -> int:
    doc = _load_doc(args.dockerfile)
    freq, costs = _freq_and_cost(args, doc)
    opts = OptimizationOptions(args.key, bool(args.groups), _groups(args.groups), not args.no_safeguard,
                               args.stale_keys)
    plan = optimize(build_graph(doc), freq, costs, opts)
    if args.emit and not args.dry_run:
        _write(args.emit, emit_dockerfile(doc, plan))
    report = emit_report(plan, None, {"report": args.report})
    if not args.report:
        _write("-", _dump(report))
    return 0


def _events(args, doc: ParsedDockerfile) -> list[ModificationEvent]:
    if os.path.isdir(args.history):
        rel = os.path.relpath(os.path.abspath(args.dockerfile), os.path.abspath(args.history))
        records = collect_history(args.history, rel, args.window_months, now=_parse_now(args.now))
        return events_from_records(doc.instructions, records, args.tau)
    data = _read_json(args.history)
    rows = data.get("events", data) if isinstance(data, dict) else data
    return [ModificationEvent.from_json(r) for r in rows]


def cmd_simulate(args) -> int:
    doc = _load_doc(args.dockerfile)
    events = _events(args, doc)
    graph = build_graph(doc)
    costs = _costs(args.costs, doc, os.path.dirname(os.path.abspath(args.dockerfile)), args.repeats)
    if args.freq:
        freq = _freq_from_file(args.freq, len(doc))
    else:
        from .simulator import empirical_frequencies
        freq = empirical_frequencies(events, graph.nodes)
    opts = OptimizationOptions(args.key, safeguard=not args.no_safeguard)
    plan = optimize(graph, freq, costs, opts)
    eff = replay(events, plan.original_order, plan.optimized_order, costs)
    sweep = sweep_usage_interval(events, graph, costs, args.interval, opts=opts) if args.interval else None
    report = emit_report(plan, eff, {"report": args.report, "events_csv": args.csv,
                                     "sweep_csv": args.sweep_csv}, sweep=sweep)
    if not args.report:
        _write("-", _dump(report))
    return 0


def _inspector(spec: str):
    return DirectoryInspector(spec) if os.path.isdir(spec) else DockerInspector(spec)


def cmd_verify(args) -> int:
    excludes = default_excludes() | set(args.exclude_env or [])
    report = compare_images(_inspector(args.image_a), _inspector(args.image_b), excludes)
    _write(args.report or "-", _dump(report.to_json()))
    return 0


def cmd_run(args) -> int:
    config = RunConfig(
        dockerfile_path=args.dockerfile, repo_path=args.repo, window_months=args.window_months,
        tau=args.tau, key_rule=args.key, repeats=args.repeats, cost_source=args.costs,
        groups_path=args.groups, out_dir=args.out_dir, suffix=args.suffix, context=args.context,
        dry_run=args.dry_run, safeguard=not args.no_safeguard, uniform_freq=args.uniform_freq,
        stale_keys=args.stale_keys, intervals=list(args.interval or []), now=_parse_now(args.now),
        registry_path=args.registry,
    )
    status, report = run_pipeline(config)
    summary = {k: report[k] for k in ("cost_before", "cost_after", "improvement", "optimized_order")}
    if report.get("efficiency"):
        summary["aggregate_efficiency"] = report["efficiency"]["aggregate_efficiency"]
    _write("-", _dump(summary))
    return status


# -- argument parsing -----------------------------------------------------------------

def _history_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window-months", type=int, default=DEFAULT_WINDOW_MONTHS)
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--now", help="ISO timestamp treated as the present (for reproducible windows)")


def _opt_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--key", choices=("paper", "ratio"), default="paper")
    p.add_argument("--no-safeguard", action="store_true")
    p.add_argument("--stale-keys", action="store_true", help="freeze paper keys at queue insertion")
    p.add_argument("--costs", default="uniform", help="uniform | measure | load:PATH")
    p.add_argument("--repeats", type=int, default=DEFAULT_REPEATS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dockorder", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="dump parsed instructions as JSON")
    p.add_argument("dockerfile")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("elements", help="dump per-instruction semantic elements")
    p.add_argument("dockerfile")
    p.add_argument("--registry", help="command knowledge JSON (default: built in)")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_elements)

    p = sub.add_parser("graph", help="dependency graph as DOT or JSON")
    p.add_argument("dockerfile")
    p.add_argument("--format", choices=("dot", "json"), default="dot")
    p.add_argument("--registry")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("freq", help="modification frequencies from git history")
    p.add_argument("dockerfile")
    p.add_argument("--repo", default=".")
    _history_opts(p)
    p.add_argument("--records-out")
    p.add_argument("--records-in", help="reuse previously dumped records instead of mining")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_freq)

    p = sub.add_parser("cost", help="measure or load per-instruction build times")
    p.add_argument("action", choices=("measure", "load"))
    p.add_argument("path", nargs="?", help="cost table JSON (load)")
    p.add_argument("--dockerfile", default="Dockerfile")
    p.add_argument("--context")
    p.add_argument("--repeats", type=int, default=DEFAULT_REPEATS)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("optimize", help="reorder instructions")
    p.add_argument("dockerfile")
    p.add_argument("--freq", help="frequency JSON (freq output or index map)")
    p.add_argument("--repo", help="mine frequencies from this repository")
    p.add_argument("--uniform-freq", action="store_true")
    _history_opts(p)
    _opt_opts(p)
    p.add_argument("--groups", help="JSON partition of instruction indices")
    p.add_argument("--emit", help="write the reordered Dockerfile here")
    p.add_argument("--report")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("simulate", help="replay history against the optimized order")
    p.add_argument("dockerfile")
    p.add_argument("--history", required=True, help="events JSON or a repository to mine")
    p.add_argument("--freq")
    _history_opts(p)
    _opt_opts(p)
    p.add_argument("--interval", type=int, action="append")
    p.add_argument("--report")
    p.add_argument("--csv")
    p.add_argument("--sweep-csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="compare two images (or fixture directories)")
    p.add_argument("--image-a", required=True)
    p.add_argument("--image-b", required=True)
    p.add_argument("--exclude-env", action="append")
    p.add_argument("--report")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("run", help="full pipeline")
    p.add_argument("dockerfile")
    p.add_argument("--repo")
    _history_opts(p)
    _opt_opts(p)
    p.add_argument("--uniform-freq", action="store_true")
    p.add_argument("--groups")
    p.add_argument("--context")
    p.add_argument("--out-dir")
    p.add_argument("--suffix", default=".optimized")
    p.add_argument("--interval", type=int, action="append")
    p.add_argument("--registry")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except DockorderError as exc:
        print(f"dockorder: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"dockorder: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
