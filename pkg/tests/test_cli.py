import json
import os
import subprocess
import sys

import pytest

from dockorder.cli import RunConfig, emit_report, main, run_pipeline
from dockorder.errors import UserInputError
from dockorder.graph import DependencyGraph
from dockorder.optimizer import optimize
from support import SEVEN_LINE, three_commit_repo

NOW = "2026-04-01T00:00:00+00:00"


@pytest.fixture
def repo(tmp_path):
    r, _ = three_commit_repo(tmp_path / "repo")
    return r.path


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_run_end_to_end(repo, capsys):
    code, out, _ = run_cli(capsys, "run", str(repo / "Dockerfile"), "--repo", str(repo), "--now", NOW)
    assert code == 0
    summary = json.loads(out)
    assert summary["cost_before"] == 2.5 and summary["cost_after"] == 1.5
    assert summary["optimized_order"] == [0, 1, 2, 3, 6, 4, 5]
    report = json.loads((repo / ".dockorder" / "report.json").read_text())
    assert report["frequencies"] == {"0": 0.0, "1": 0.0, "2": 0.0, "3": 0.0, "4": 0.5, "5": 0.5, "6": 0.0}
    assert report["efficiency"]["events"] == 2
    assert report["efficiency"]["aggregate_efficiency"] == pytest.approx((0.5 + 1 / 3) / 2)
    emitted = (repo / "Dockerfile.optimized").read_text()
    assert emitted.index("CMD") < emitted.index("COPY src/")


def test_run_is_deterministic(repo, capsys):
    argv = ["run", str(repo / "Dockerfile"), "--repo", str(repo), "--now", NOW, "--interval", "1"]
    run_cli(capsys, *argv)
    first = (repo / ".dockorder" / "report.json").read_bytes()
    run_cli(capsys, *argv)
    assert (repo / ".dockorder" / "report.json").read_bytes() == first
    sweep = (repo / ".dockorder" / "sweep.csv").read_text().splitlines()
    assert sweep[0] == "interval,efficiency" and len(sweep) == 2


def test_record_cache_reused(repo, monkeypatch):
    config = RunConfig(str(repo / "Dockerfile"), str(repo), now=None)
    run_pipeline(config)
    cache = json.loads((repo / ".dockorder" / "records-cache.json").read_text())
    assert len(cache["records"]) == 2
    from dockorder import cli

    def boom(*a, **k):
        raise AssertionError("history mined again")

    monkeypatch.setattr(cli, "collect_history", boom)
    _, report = run_pipeline(config)
    assert report["records"] == 2


def test_missing_dockerfile(tmp_path, capsys):
    code, _, err = run_cli(capsys, "run", str(tmp_path / "nope" / "Dockerfile"))
    assert code == 2 and "dockorder: error" in err


def test_dry_run_writes_no_dockerfile(repo, capsys):
    code, _, _ = run_cli(capsys, "run", str(repo / "Dockerfile"), "--repo", str(repo), "--now", NOW, "--dry-run")
    assert code == 0
    assert not (repo / "Dockerfile.optimized").exists()
    assert (repo / ".dockorder" / "report.json").exists()


def test_step_isolation(tmp_path, capsys, monkeypatch):
    (tmp_path / "Dockerfile").write_text(SEVEN_LINE)
    monkeypatch.setenv("DOCKORDER_DOCKER", str(tmp_path / "no-such-docker"))
    code, _, _ = run_cli(capsys, "run", str(tmp_path / "Dockerfile"), "--costs", "measure")
    assert code == 3
    out = tmp_path / ".dockorder"
    assert (out / "graph.json").exists() and (out / "frequencies.json").exists()
    assert not (out / "report.json").exists()


def test_config_validation():
    for bad in (dict(window_months=0), dict(tau=1.5), dict(repeats=0), dict(key_rule="fast")):
        with pytest.raises(UserInputError):
            RunConfig("Dockerfile", **bad).validate()


def test_parse_elements_graph(tmp_path, capsys):
    path = tmp_path / "Dockerfile"
    path.write_text(SEVEN_LINE)
    code, out, _ = run_cli(capsys, "parse", str(path))
    assert code == 0 and len(json.loads(out)["instructions"]) == 7
    code, out, _ = run_cli(capsys, "elements", str(path))
    assert json.loads(out)[2]["kind"] == "COPY"
    code, out, _ = run_cli(capsys, "graph", str(path))
    assert out.startswith("digraph")
    run_cli(capsys, "graph", str(path), "--format", "json", "-o", str(tmp_path / "g.json"))
    assert json.loads((tmp_path / "g.json").read_text())["nodes"]


def test_freq_and_optimize(repo, tmp_path, capsys):
    freq_path = tmp_path / "freq.json"
    code, _, _ = run_cli(capsys, "freq", str(repo / "Dockerfile"), "--repo", str(repo), "--now", NOW,
                         "-o", str(freq_path), "--records-out", str(tmp_path / "rec.json"))
    assert code == 0
    costs = tmp_path / "costs.json"
    costs.write_text(json.dumps({str(i): 1 for i in range(7)}))
    code, out, _ = run_cli(capsys, "optimize", str(repo / "Dockerfile"), "--freq", str(freq_path),
                           "--costs", f"load:{costs}", "--key", "ratio")
    assert code == 0 and json.loads(out)["optimized_order"] == [0, 1, 2, 3, 6, 4, 5]
    code, _, _ = run_cli(capsys, "freq", str(repo / "Dockerfile"), "--records-in", str(tmp_path / "rec.json"),
                         "--now", NOW, "-o", str(tmp_path / "freq2.json"))
    assert freq_path.read_text() == (tmp_path / "freq2.json").read_text()


def test_cost_load(tmp_path, capsys):
    (tmp_path / "Dockerfile").write_text("FROM a\nRUN b\n")
    (tmp_path / "c.json").write_text('{"0": 1, "1": 4}')
    code, out, _ = run_cli(capsys, "cost", "load", str(tmp_path / "c.json"), "--dockerfile",
                           str(tmp_path / "Dockerfile"))
    assert code == 0 and json.loads(out)["seconds"] == {"0": 1.0, "1": 4.0}
    (tmp_path / "neg.json").write_text('{"0": -1}')
    code, _, _ = run_cli(capsys, "cost", "load", str(tmp_path / "neg.json"), "--dockerfile",
                         str(tmp_path / "Dockerfile"))
    assert code == 2


def test_simulate_with_events(tmp_path, capsys):
    (tmp_path / "Dockerfile").write_text(SEVEN_LINE)
    (tmp_path / "events.json").write_text(json.dumps([[4], [4], [5], [4, 5]]))
    code, _, _ = run_cli(capsys, "simulate", str(tmp_path / "Dockerfile"), "--history",
                         str(tmp_path / "events.json"), "--report", str(tmp_path / "r.json"),
                         "--csv", str(tmp_path / "e.csv"), "--interval", "1", "--interval", "2",
                         "--sweep-csv", str(tmp_path / "s.csv"))
    assert code == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["efficiency"]["events"] == 4
    assert len((tmp_path / "e.csv").read_text().splitlines()) == 5
    assert len((tmp_path / "s.csv").read_text().splitlines()) == 3


def test_simulate_empty_history(tmp_path, capsys):
    (tmp_path / "Dockerfile").write_text(SEVEN_LINE)
    (tmp_path / "events.json").write_text("[]")
    code, _, _ = run_cli(capsys, "simulate", str(tmp_path / "Dockerfile"), "--history", str(tmp_path / "events.json"))
    assert code == 2


def image_dir(root, env):
    (root / "rootfs").mkdir(parents=True)
    (root / "rootfs" / "f").write_text("x")
    (root / "image.json").write_text(json.dumps({"env": env, "workdir": "/"}))
    return str(root)


def test_verify_directories(tmp_path, capsys):
    a = image_dir(tmp_path / "a", {"PATH": "/bin", "BUILD_DATE": "1"})
    b = image_dir(tmp_path / "b", {"PATH": "/bin", "BUILD_DATE": "2"})
    code, out, _ = run_cli(capsys, "verify", "--image-a", a, "--image-b", b)
    assert code == 0 and json.loads(out)["verdict"] == "divergent"
    code, out, _ = run_cli(capsys, "verify", "--image-a", a, "--image-b", b, "--exclude-env", "BUILD_DATE")
    assert json.loads(out)["verdict"] == "equivalent"


def test_emit_report_identity(tmp_path):
    g = DependencyGraph.from_pairs(3, [])
    plan = optimize(g, {0: 0.5, 1: 0.3, 2: 0.2}, {0: 10.0, 1: 5.0, 2: 2.0})
    report = emit_report(plan, None, {"report": str(tmp_path / "r.json")})
    assert report["cost_before"] == 11.0 and report["cost_after"] == 11.0
    assert report["improvement"] == 0.0 and report["order_diff"] == []


def test_module_entry_point(tmp_path):
    (tmp_path / "Dockerfile").write_text("FROM a\n")
    proc = subprocess.run([sys.executable, "-m", "dockorder", "graph", str(tmp_path / "Dockerfile")],
                          capture_output=True, text=True, env={**os.environ})
    assert proc.returncode == 0 and "digraph" in proc.stdout
