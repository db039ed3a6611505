import math
from datetime import datetime, timedelta, timezone

from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from dockorder.consistency import compare_images, default_excludes
from dockorder.fakes import FakeInspector
from dockorder.graph import DependencyGraph, build_graph
from dockorder.history import ModificationRecord, compute_frequencies
from dockorder.optimizer import OptimizationOptions, emit_dockerfile, optimize, total_cost
from dockorder.parser import parse_dockerfile, serialize
from dockorder.pathtrie import contains
from dockorder.shell import join_commands, parse_shell
from dockorder.simulator import simulate_rebuild_cost

settings.register_profile("default", max_examples=80, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

LINES = [
    "RUN apt-get update && apt-get install -y curl",
    "RUN pip install -r requirements.txt",
    "COPY requirements.txt .",
    "COPY src/ /app/src",
    "ADD https://example.com/a.tgz /opt/",
    "ENV APP_HOME=/app",
    "ENV PATH=/opt/bin:$PATH",
    "ARG VERSION=1",
    "WORKDIR /app",
    "USER app",
    "EXPOSE 8080",
    "LABEL team=core",
    "RUN echo $APP_HOME > /tmp/home",
    "RUN make -C /app/src",
    "RUN ls -la \\\n    /app",
    "VOLUME /data",
    'CMD ["python", "app.py"]',
    "# a comment",
    "",
    "run   echo lower",
]


@st.composite
def dockerfiles(draw):
    body = draw(st.lists(st.sampled_from(LINES), min_size=0, max_size=12))
    ending = draw(st.sampled_from(["\n", "\r\n"]))
    lines = ["FROM python:3.11"] + body
    if draw(st.booleans()):
        lines += ["FROM alpine AS final", "COPY --from=0 /app /app"]
    text = ending.join(lines)
    return text + (ending if draw(st.booleans()) else "")


@st.composite
def weighted_dags(draw, max_n=12):
    n = draw(st.integers(1, max_n))
    pairs = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=2 * n))
    graph = DependencyGraph.from_pairs(n, [(a, b) for a, b in pairs if a < b])
    # subnormal shares would underflow to 0 when scaled, which is float behaviour rather than ordering
    freq = {i: draw(st.one_of(st.just(0.0), st.floats(1e-6, 1.0))) for i in range(n)}
    cost = {i: draw(st.floats(0.01, 100.0)) for i in range(n)}
    return graph, freq, cost


# -- parser and shell ----------------------------------------------------------------

@given(dockerfiles())
def test_round_trip(text):
    assert serialize(parse_dockerfile(text)) == text


@given(dockerfiles(), st.randoms(use_true_random=False))
def test_reorder_reparses_to_plan(text, rnd):
    doc = parse_dockerfile(text)
    graph = build_graph(doc)
    freq = {i: rnd.random() for i in range(len(doc))}
    cost = {i: rnd.uniform(0.1, 10) for i in range(len(doc))}
    plan = optimize(graph, freq, cost, OptimizationOptions("ratio", safeguard=False))
    again = parse_dockerfile(emit_dockerfile(doc, plan))
    assert [i.text for i in again.instructions] == [doc.instructions[n].text for n in plan.optimized_order]


WORDS = st.sampled_from(["apt-get", "install", "-y", "curl", "'a b'", '"x y"', "make", "--jobs=4", "/tmp/f",
                         "echo", "$HOME", "pip"])
CONNECTORS = st.sampled_from([" && ", " || ", " ; ", " | "])


@given(st.lists(st.lists(WORDS, min_size=1, max_size=5), min_size=1, max_size=5), st.data())
def test_shell_rejoin_fixpoint(words, data):
    parts = [" ".join(w) for w in words]
    text = parts[0]
    for p in parts[1:]:
        text += data.draw(CONNECTORS) + p
    once = join_commands(parse_shell(text))
    assert join_commands(parse_shell(once)) == once
    assert parse_shell(once) == parse_shell(text)


SEGMENTS = st.lists(st.sampled_from(["app", "src", "etc", "lib", "x.py"]), min_size=0, max_size=4)


@given(SEGMENTS, SEGMENTS)
def test_trie_prefix_containment(parent, tail):
    p = "/" + "/".join(parent)
    c = "/" + "/".join(parent + tail)
    assert contains(p, c)
    if tail:
        assert not contains(c, p)


# -- optimizer ------------------------------------------------------------------------

@given(weighted_dags(), st.sampled_from(["paper", "ratio"]))
def test_order_is_topological_and_safe(case, rule):
    graph, freq, cost = case
    plan = optimize(graph, freq, cost, OptimizationOptions(rule))
    assert graph.is_topological(plan.optimized_order)
    assert plan.cost_after <= plan.cost_before
    assert plan.cost_after == total_cost(plan.optimized_order, freq, cost)


@given(weighted_dags(), st.sampled_from(["paper", "ratio"]), st.sampled_from([0.25, 0.5, 2.0, 8.0]))
def test_frequency_scaling_invariance(case, rule, factor):
    graph, freq, cost = case
    scaled = {i: f * factor for i, f in freq.items()}
    opts = OptimizationOptions(rule, safeguard=False)
    assert optimize(graph, freq, cost, opts).optimized_order == optimize(graph, scaled, cost, opts).optimized_order


@given(weighted_dags())
def test_optimize_deterministic(case):
    graph, freq, cost = case
    assert optimize(graph, freq, cost).to_json() == optimize(graph, dict(freq), dict(cost)).to_json()


# -- history --------------------------------------------------------------------------

BASE_DOC = parse_dockerfile("FROM python:3.11\nWORKDIR /app\nCOPY src/ /app\nENV PORT=80\n"
                            "RUN pip install flask\nRUN apt-get install -y curl\nEXPOSE 80\n")
RECORD_CONTENTS = st.sampled_from([
    ("RUN", "RUN pip install flask gunicorn"), ("RUN", "RUN apt-get install -y git"), ("ENV", "ENV PORT=81"),
    ("ENV", "ENV HOST=x"), ("FILE", "src/main.py"), ("FILE", "README.md"), ("EXPOSE", "EXPOSE 81"),
    ("FROM", "FROM python:3.12"), ("WORKDIR", "WORKDIR /srv"),
])
NOW = datetime(2026, 4, 1, tzinfo=timezone.utc)


@given(st.lists(st.tuples(RECORD_CONTENTS, st.integers(0, 900)), max_size=30))
def test_normalized_frequencies_sum_to_one(rows):
    records = [ModificationRecord(f"c{k}", kind, content, NOW - timedelta(days=age))
               for k, ((kind, content), age) in enumerate(rows)]
    table = compute_frequencies(BASE_DOC.instructions, records)
    assert math.isclose(math.fsum(table.values()), 1.0, abs_tol=1e-9)
    assert all(v >= 0 for v in table.values())


# -- simulator ------------------------------------------------------------------------

@given(weighted_dags(max_n=10), st.lists(st.integers(0, 9), min_size=1, max_size=40))
def test_expected_rebuild_equals_total_cost(case, picks):
    graph, _, cost = case
    n = len(graph.nodes)
    events = [{p % n} for p in picks]
    empirical = {i: sum(1 for e in events if i in e) / len(events) for i in range(n)}
    order = list(graph.nodes)
    expected = math.fsum(simulate_rebuild_cost(order, e, cost) for e in events) / len(events)
    target = total_cost(order, empirical, cost)
    assert math.isclose(expected, target, rel_tol=1e-9, abs_tol=1e-12)


@given(weighted_dags(max_n=10), st.data())
def test_no_double_counting(case, data):
    graph, _, cost = case
    order = data.draw(st.permutations(list(graph.nodes)))
    event = data.draw(st.sets(st.sampled_from(order), min_size=1))
    first = min(event, key=order.index)
    assert simulate_rebuild_cost(order, event, cost) == simulate_rebuild_cost(order, {first}, cost)


# -- consistency ----------------------------------------------------------------------

ENV_NAMES = st.sampled_from(["PATH", "HOME", "HOSTNAME", "PWD", "LANG"])
inspectors = st.builds(
    FakeInspector,
    files=st.dictionaries(st.sampled_from(["/a", "/b", "/c/d"]), st.sampled_from(["h1", "h2"])),
    env=st.dictionaries(ENV_NAMES, st.sampled_from(["1", "2"])),
    packages=st.dictionaries(st.sampled_from(["dpkg", "pip"]), st.sets(st.sampled_from(["x", "y", "z"]))),
    workdir=st.sampled_from(["/", "/app", "/app/"]),
)


@given(inspectors, inspectors)
def test_consistency_symmetry_and_exclusions(a, b):
    ab, ba = compare_images(a, b), compare_images(b, a)
    assert (ab.fs_equal, ab.env_equal, ab.pkg_equal, ab.workdir_equal) == \
           (ba.fs_equal, ba.env_equal, ba.pkg_equal, ba.workdir_equal)
    assert not {d["name"] for d in ab.env_diffs} & default_excludes()


@given(inspectors)
def test_consistency_reflexive(a):
    assert compare_images(a, a).verdict == "equivalent"
