import json

import pytest

from dockorder.errors import CyclicDependency
from dockorder.graph import (DependencyEdge, DependencyGraph, Node, build_graph, export_graph, graph_from_json,
                             judge_pair)
from dockorder.parser import parse_dockerfile, read_dockerfile
from dockorder.semantics import analyze
from support import CORPUS

EXPECTED = json.loads((CORPUS / "expected_edges.json").read_text())

APP_SEVEN = """\
FROM python:3.12
ENV APP_HOME=/app
WORKDIR /app
COPY requirements.txt .
RUN pip install -r requirements.txt
COPY . .
CMD ["python", "app.py"]
"""


def triples(g):
    return {(e.from_index, e.to_index, e.kind) for e in g.edges}


def pair_edges(text: str):
    doc = parse_dockerfile("FROM alpine\n" + text)
    nodes = [Node(i, e) for i, (_, e) in zip(doc.instructions, analyze(doc))]
    return [e.kind for e in judge_pair(nodes[1], nodes[2], nodes[2:2])]


def test_env_then_use_is_variable():
    assert pair_edges("ENV APP=/app\nRUN echo $APP\n") == ["Variable"]


def test_label_run_independent():
    assert pair_edges("LABEL x=y\nRUN make\n") == []


def test_copy_then_pip_is_filedir():
    kinds = pair_edges("COPY requirements.txt /app/requirements.txt\nRUN pip install -r /app/requirements.txt\n")
    assert kinds == ["FileDir"]


def test_single_from():
    g = build_graph(parse_dockerfile("FROM alpine\n"))
    assert g.nodes == (0,) and not g.edges


def test_seven_line_example():
    g = build_graph(parse_dockerfile(APP_SEVEN))
    got = triples(g)
    assert {(0, j, "Other") for j in range(1, 7)} <= got
    assert (3, 4, "FileDir") in got
    assert {(2, 3, "Context"), (2, 5, "Context")} <= got
    # full hand-derived set: WORKDIR feeds every reader, COPY . . clobbers what came before it
    oracle = {(0, j, "Other") for j in range(1, 7)} | {
        (2, 3, "Context"), (2, 4, "Context"), (2, 5, "Context"), (2, 6, "Context"),
        (3, 4, "FileDir"), (3, 5, "FileDir"), (4, 5, "FileDir"),
    }
    assert got == oracle
    assert export_graph(g, "dot").count("->") == len(oracle)


def test_copy_from_stage_edge():
    doc = parse_dockerfile("FROM golang AS build\nRUN go build -o /out/app .\nFROM alpine\n"
                           "RUN echo hi\nCOPY --from=0 /out/app /app\n")
    g = build_graph(doc)
    assert (1, 4, "Other") in triples(g)


def test_from_stage_reference():
    doc = parse_dockerfile("FROM alpine AS base\nRUN apk add curl\nFROM base\nRUN curl -V\n")
    assert (1, 2, "Other") in triples(build_graph(doc))


def test_most_recent_definition_wins():
    doc = parse_dockerfile("FROM a\nENV V=1\nENV V=2\nRUN echo $V\n")
    got = triples(build_graph(doc))
    assert (2, 3, "Variable") in got and (1, 3, "Variable") not in got


def test_opaque_is_barrier():
    doc = parse_dockerfile("FROM a\nCOPY x /x\nRUN for f in /x/*; do cat $f; done\nRUN cat /etc/hosts\n")
    got = triples(build_graph(doc))
    assert (1, 2, "FileDir") in got
    assert (2, 3, "FileDir") in got


@pytest.mark.parametrize("name", sorted(EXPECTED))
def test_corpus_oracle(name):
    g = build_graph(read_dockerfile(CORPUS / name))
    assert triples(g) == {tuple(e) for e in EXPECTED[name]}


@pytest.mark.parametrize("name", sorted(EXPECTED))
def test_forward_only_and_from_dominance(name):
    g = build_graph(read_dockerfile(CORPUS / name))
    assert all(e.from_index < e.to_index for e in g.edges)
    for stage, members in g.stage_members().items():
        if stage < 0:
            continue
        root = members[0]
        assert g.instructions[root].kind == "FROM"
        for n in members[1:]:
            assert root in g.ancestors(n)


def test_export_empty_and_single_edge():
    assert export_graph(DependencyGraph((), frozenset()), "dot").strip() == "digraph {}"
    g = DependencyGraph.from_pairs(2, [(0, 1)])
    assert export_graph(g, "dot").count("->") == 1


def test_json_round_trip():
    g = build_graph(read_dockerfile(CORPUS / "c06_multistage.Dockerfile"))
    assert graph_from_json(export_graph(g, "json")) == g


def test_cycle_detected():
    g = DependencyGraph((0, 1), frozenset({DependencyEdge(0, 1, "Other"), DependencyEdge(1, 0, "Other")}))
    with pytest.raises(CyclicDependency):
        g.check_acyclic()


def test_adding_instruction_keeps_prior_edges():
    base = "FROM a\nWORKDIR /w\nCOPY x .\nRUN make\n"
    before = triples(build_graph(parse_dockerfile(base)))
    after = triples(build_graph(parse_dockerfile(base + "RUN rm -rf /w\n")))
    assert before <= after
