from datetime import datetime, timezone

import pytest

from dockorder import history
from dockorder.errors import DockerfileNotFound, GitUnavailable, NotARepository
from dockorder.history import (CATEGORY, FrequencyTable, MatchCategory, ModificationRecord, ShellSimilarity,
                               classify, collect_history, compute_frequencies, filter_window, record_events,
                               similarity, subtract_months)
from dockorder.parser import KEYWORDS, parse_dockerfile
from support import SEVEN_LINE, GitRepo, three_commit_repo

NOW = datetime(2026, 4, 1, tzinfo=timezone.utc)


def rec(content: str, kind: str | None = None, when: datetime = NOW, commit: str = "c") -> ModificationRecord:
    kind = kind or content.split()[0]
    return ModificationRecord(commit, kind, content, when)


def one(line: str):
    return parse_dockerfile("FROM alpine\n" + line + "\n").instructions[-1]


# -- categories ----------------------------------------------------------------

def test_category_totality():
    for kind in KEYWORDS:
        if kind == "MAINTAINER":
            continue
        assert isinstance(classify(kind), MatchCategory)
    assert {k for k, v in CATEGORY.items() if v is MatchCategory.KEY_VALUE} == {"ARG", "ENV", "USER", "EXPOSE",
                                                                               "LABEL"}
    assert classify("entrypoint") is MatchCategory.FILE_SYSTEM


# -- similarity ----------------------------------------------------------------

def test_key_value_strict_key_match():
    assert similarity(one("ENV PORT=8080"), rec("ENV PORT=9090")) == 1.0
    assert similarity(one("ENV PORT=8080"), rec("ENV HOST=x")) == 0.0


def test_shell_identical_and_disjoint():
    assert similarity(one("RUN make install"), rec("RUN make install")) == pytest.approx(1.0)
    assert similarity(one("RUN make install"), rec("RUN pip freeze")) == 0.0


def test_shell_threshold_zeroes_weak_matches():
    shell = ShellSimilarity(["apt-get update", "apt-get install curl wget git", "pip install flask"])
    c = one("RUN apt-get install curl wget git")
    weak = rec("RUN apt-get update")
    raw = shell.cosine("apt-get install curl wget git", "apt-get update")
    assert 0.0 < raw < 0.5
    assert similarity(c, weak, shell, tau=0.5) == 0.0
    assert similarity(c, weak, shell, tau=0.0) == pytest.approx(raw)


def test_file_record_under_copy_source():
    c = one("COPY src/ /app")
    assert similarity(c, rec("src/main.c", "FILE")) == 1.0
    assert similarity(c, rec("docs/readme.md", "FILE")) == 0.0
    assert similarity(one("RUN make"), rec("src/main.c", "FILE")) == 0.0


def test_special_kind_match():
    assert similarity(one("HEALTHCHECK NONE"), rec("HEALTHCHECK CMD true")) == 1.0


def test_kind_mismatch():
    assert similarity(one("ENV A=1"), rec("ARG A=1")) == 0.0


# -- frequencies ---------------------------------------------------------------

def test_frequency_arithmetic(monkeypatch):
    instructions = parse_dockerfile("FROM a\nRUN x\n").instructions
    records = [rec(f"RUN r{k}") for k in range(10)]
    scores = {"RUN r0": 1.0, "RUN r1": 0.6}
    monkeypatch.setattr(history, "similarity",
                        lambda c, r, shell=None, tau=0.5: scores.get(r.content, 0.0) if c.kind == "RUN" else 0.0)
    table = compute_frequencies(instructions, records)
    assert table.raw[1] == pytest.approx(0.16)
    assert table.total_modifications == 10
    assert table[1] == 1.0 and table[0] == 0.0


def test_single_instruction_normalizes_to_one():
    table = compute_frequencies(parse_dockerfile("FROM a\n").instructions, [rec("FROM b")])
    assert table[0] == 1.0


def test_no_records_uniform():
    table = compute_frequencies(parse_dockerfile("FROM a\nRUN b\nRUN c\nCMD d\n").instructions, [])
    assert dict(table) == {0: 0.25, 1: 0.25, 2: 0.25, 3: 0.25}


def test_uniform_constructor():
    assert dict(FrequencyTable.uniform(range(2))) == {0: 0.5, 1: 0.5}


def test_window_excludes_old_records():
    old = rec("RUN a", when=subtract_months(NOW, 40))
    edge = rec("RUN b", when=subtract_months(NOW, 30))
    fresh = rec("RUN c", when=subtract_months(NOW, 1))
    assert filter_window([old, edge, fresh], 30, NOW) == [edge, fresh]


def test_subtract_months_clamps_day():
    assert subtract_months(datetime(2026, 3, 31), 1) == datetime(2026, 2, 28)


def test_record_json_round_trip():
    r = ModificationRecord("abc", "FILE", "src/a.py", NOW, "deletion", (3, 4), 2)
    assert ModificationRecord.from_json(r.to_json()) == r


def test_record_events_mapping():
    doc = parse_dockerfile(SEVEN_LINE)
    records = [rec("RUN python -m compileall -q /app", commit="c2"), rec("src/main.py", "FILE", commit="c3"),
               rec("LABEL nothing=here", commit="c4")]
    assert record_events(doc.instructions, records) == [("c2", frozenset({5})), ("c3", frozenset({4}))]


# -- git mining ----------------------------------------------------------------

def test_three_commit_fixture(tmp_path):
    repo, commits = three_commit_repo(tmp_path / "r")
    records = collect_history(repo.path, "Dockerfile", 30, now=NOW)
    assert len(records) == 2
    direct, implicit = records
    assert (direct.commit_id, direct.instruction_kind, direct.line_numbers, direct.change_kind) == (
        commits[1], "RUN", (6,), "modification")
    assert (implicit.commit_id, implicit.instruction_kind, implicit.content) == (commits[2], "FILE", "src/main.py")
    assert implicit.related_instruction_hint == 4


def test_frequencies_from_fixture(tmp_path):
    repo, _ = three_commit_repo(tmp_path / "r")
    doc = parse_dockerfile((repo.path / "Dockerfile").read_text())
    table = compute_frequencies(doc.instructions, collect_history(repo.path, "Dockerfile", 30, now=NOW))
    assert dict(table) == {0: 0.0, 1: 0.0, 2: 0.0, 3: 0.0, 4: 0.5, 5: 0.5, 6: 0.0}


def test_window_applies_to_commits(tmp_path):
    repo, _ = three_commit_repo(tmp_path / "r")
    later = datetime(2028, 8, 15, tzinfo=timezone.utc)  # 30 months back lands between commit 2 and 3
    records = collect_history(repo.path, "Dockerfile", 30, now=later)
    assert [r.instruction_kind for r in records] == ["FILE"]


def test_incremental_since_commit(tmp_path):
    repo, commits = three_commit_repo(tmp_path / "r")
    records = collect_history(repo.path, "Dockerfile", 30, now=NOW, since_commit=commits[1])
    assert [r.commit_id for r in records] == [commits[2]]


def test_untouched_repo_has_no_records(tmp_path):
    repo = GitRepo(tmp_path / "r")
    repo.commit("one", "2026-01-01T00:00:00+00:00", {"Dockerfile": "FROM alpine\n"})
    repo.commit("two", "2026-01-02T00:00:00+00:00", {"README": "hi\n"})
    assert collect_history(repo.path, "Dockerfile", 30, now=NOW) == []


def test_added_and_deleted_instructions(tmp_path):
    repo = GitRepo(tmp_path / "r")
    repo.commit("one", "2026-01-01T00:00:00+00:00", {"Dockerfile": "FROM alpine\nRUN a\nRUN b\n"})
    repo.commit("two", "2026-01-02T00:00:00+00:00", {"Dockerfile": "FROM alpine\nRUN a\nEXPOSE 80\nRUN b\n"})
    repo.commit("three", "2026-01-03T00:00:00+00:00", {"Dockerfile": "FROM alpine\nEXPOSE 80\nRUN b\n"})
    kinds = [(r.instruction_kind, r.change_kind) for r in collect_history(repo.path, "Dockerfile", 30, now=NOW)]
    assert kinds == [("EXPOSE", "addition"), ("RUN", "deletion")]


def test_errors(tmp_path, monkeypatch):
    plain = tmp_path / "plain"
    plain.mkdir()
    (plain / "Dockerfile").write_text("FROM a\n")
    with pytest.raises(NotARepository):
        collect_history(plain, "Dockerfile")
    repo = GitRepo(tmp_path / "r")
    with pytest.raises(DockerfileNotFound):
        collect_history(repo.path, "Dockerfile")
    monkeypatch.setenv("DOCKORDER_GIT", "/nonexistent/git")
    with pytest.raises(GitUnavailable):
        collect_history(repo.path, "Dockerfile")
