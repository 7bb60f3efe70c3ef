import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from provtrace.reasoning import (
    CandidatePath,
    ConfidenceParams,
    ScenarioGraph,
    confidence,
    edge_avg,
    filter_and_merge,
    length_score,
    node_score,
    score_paths,
    to_dot,
    traverse,
)

from conftest import (
    BACKTRACK_PATHS,
    BACKTRACK_SCORES,
    MERGE_EDGES,
    MERGE_NODE_SCORES,
    MERGE_PATHS,
    MERGE_SCORES,
    breakdowns,
    make_subgraph,
)
from provtrace.anomaly import AnomalyReport
from provtrace.subgraph import AnomalySubgraph, SynthEdge


def test_one_path_per_leaf_example():
    sg = make_subgraph(list(BACKTRACK_SCORES))
    paths = traverse(sg, breakdowns(BACKTRACK_SCORES))
    assert sorted(p.nodes for p in paths) == sorted(BACKTRACK_PATHS)
    assert len(paths) == len(sg.leaves) == 4


def test_single_edge_path():
    sg = make_subgraph([("u", "v")])
    [p] = traverse(sg, breakdowns({("u", "v"): 0.3}))
    assert p.nodes == ("u", "v")
    assert p.edges == (("u", "v"),)


def test_missing_scores_rejected():
    sg = make_subgraph([("u", "v"), ("v", "w")])
    with pytest.raises(KeyError):
        traverse(sg, breakdowns({("u", "v"): 0.3}))


def test_isolated_node_is_own_path():
    sg = make_subgraph([], nodes=["solo"])
    [p] = traverse(sg, {})
    assert p.nodes == ("solo",) and p.edges == ()


def test_tie_breaks_on_earliest_ts_then_source():
    edges = {("a", "j"): SynthEdge("a", "j", 5, 0, ("a", "j")),
             ("b", "j"): SynthEdge("b", "j", 3, 0, ("b", "j")),
             ("c", "j"): SynthEdge("c", "j", 3, 0, ("c", "j"))}
    sg = AnomalySubgraph({"a", "b", "c", "j"}, edges, {"a", "b", "c"})
    [p] = traverse(sg, breakdowns({k: 0.5 for k in edges}))
    assert p.nodes == ("b", "j")


def _all_backtracks(sg, leaf):
    """Every complete backward walk from ``leaf`` (no repeated node)."""
    out = []

    def rec(cur, nodes, edges):
        opts = [e for e in sg.in_edges(cur) if e.src not in nodes]
        if not opts:
            out.append((tuple(reversed(nodes)), tuple(reversed(edges))))
            return
        for e in opts:
            rec(e.src, nodes + [e.src], edges + [e])

    rec(leaf, [leaf], [])
    return out


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 10), st.floats(0.15, 0.6))
def test_greedy_equals_exhaustive_argmax(seed, n, p):
    rng = random.Random(seed)
    names = [f"n{i}" for i in range(n)]
    pairs = [(names[i], names[j]) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    if not pairs:
        pairs = [(names[0], names[1])]
    sg = make_subgraph(pairs)
    totals = {k: rng.random() for k in pairs}
    scores = breakdowns(totals)
    for path in traverse(sg, scores):
        walks = _all_backtracks(sg, path.nodes[-1])
        # greedy is the lexicographic maximum of the score sequence read from the leaf backwards
        best = max(walks, key=lambda w: [totals[e.key] for e in reversed(w[1])])
        assert path.nodes == best[0]


def test_path_formulas():
    assert edge_avg([0.7]) == 0.7
    assert edge_avg([0.4, 0.4, 0.4]) == pytest.approx(0.4)
    assert edge_avg([0.2, 0.4]) == pytest.approx(0.3)
    assert length_score(3, 0.8, 3.0) == pytest.approx((1 - math.exp(-1)) * 0.8)
    assert length_score(3, 1.0, 3.0) == pytest.approx(0.6321, abs=1e-4)
    assert length_score(0, 0.8, 3.0) == 0.0
    assert length_score(10_000, 0.8, 3.0) == pytest.approx(0.8)
    assert node_score([1.0, 1.0]) == 1.0
    assert node_score([0.8, 0.6]) == pytest.approx(0.7)
    assert node_score([0.9]) == 0.9
    assert confidence(0.4, 0.6, ConfidenceParams(w1=1, w2=1)) == pytest.approx(1.0)
    assert confidence(0.4, 0.6, ConfidenceParams(w1=0, w2=1)) == 0.6
    assert confidence(0.4, 0.6, ConfidenceParams(w1=1, w2=0)) == 0.4


def test_params_validation():
    with pytest.raises(ValueError):
        ConfidenceParams(lam=0)
    with pytest.raises(ValueError):
        ConfidenceParams(w1=0, w2=0)


def _merge_example():
    sg = make_subgraph(MERGE_EDGES)
    scores = breakdowns(MERGE_SCORES)
    report = AnomalyReport(dict(MERGE_NODE_SCORES), set(MERGE_NODE_SCORES), 0.0)
    return sg, scores, report


def test_candidates_and_merge():
    sg, scores, report = _merge_example()
    params = ConfidenceParams()
    paths = score_paths(traverse(sg, scores), scores, report, params)
    assert sorted(p.nodes for p in paths) == sorted(MERGE_PATHS)
    conf = {p.nodes: p.confidence for p in paths}
    first = conf[MERGE_PATHS[0]]
    others = [conf[p] for p in MERGE_PATHS[1:]]
    assert first < min(others)
    theta = (first + min(others)) / 2
    sc = filter_and_merge(paths, ConfidenceParams(theta=theta), scores)
    assert sc.nodes == {"p1", "f1", "p2", "p3", "p6", "f2", "p4", "s1", "s2"}
    assert sc.edges == set(MERGE_EDGES) - {("f1", "p5")}
    assert not sc.degenerate
    assert set(sc.edge_scores) == sc.edges


def test_all_below_theta_is_empty(caplog):
    sg, scores, report = _merge_example()
    paths = score_paths(traverse(sg, scores), scores, report, ConfidenceParams())
    sc = filter_and_merge(paths, ConfidenceParams(theta=10.0))
    assert sc.nodes == set() and sc.edges == set()
    assert "empty" in caplog.text


def _path(nodes, conf):
    return CandidatePath(tuple(nodes), tuple(zip(nodes, nodes[1:])), confidence=conf)


def test_disjoint_survivors_dropped():
    sc = filter_and_merge([_path("ab", 0.9), _path("cd", 0.9)], ConfidenceParams(theta=0.5))
    assert sc.nodes == set()


def test_single_survivor_kept_and_flagged():
    sc = filter_and_merge([_path("ab", 0.9), _path("cd", 0.1)], ConfidenceParams(theta=0.5))
    assert sc.nodes == {"a", "b"} and sc.degenerate
    sc = filter_and_merge([_path("ab", 0.9)], ConfidenceParams(theta=0.5), keep_single=False)
    assert sc.nodes == set()


def test_versions_of_one_entity_count_as_shared():
    a = _path(["x", "f", "y"], 0.9)
    b = _path(["z", "f#v1", "w"], 0.9)
    sc = filter_and_merge([a, b, _path(["q", "r"], 0.9)], ConfidenceParams(theta=0.5))
    assert sc.nodes == {"x", "f", "y", "z", "f#v1", "w"}


def _random_paths(rng, k):
    letters = "abcdefghij"
    return [_path(rng.sample(letters, rng.randint(2, 4)), rng.random()) for _ in range(k)]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 8), st.randoms(use_true_random=False))
def test_merge_is_order_independent(seed, k, rnd):
    paths = _random_paths(random.Random(seed), k)
    shuffled = paths[:]
    rnd.shuffle(shuffled)
    p = ConfidenceParams(theta=0.3)
    assert filter_and_merge(paths, p).to_dict() == filter_and_merge(shuffled, p).to_dict()


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 8), st.floats(0, 1), st.floats(0, 1))
def test_raising_theta_never_adds_nodes(seed, k, t1, t2):
    lo, hi = sorted((t1, t2))
    paths = _random_paths(random.Random(seed), k)
    low = filter_and_merge(paths, ConfidenceParams(theta=lo), keep_single=False)
    high = filter_and_merge(paths, ConfidenceParams(theta=hi), keep_single=False)
    assert high.nodes <= low.nodes


def test_scenario_round_trip_and_dot(tmp_path):
    sg, scores, report = _merge_example()
    paths = score_paths(traverse(sg, scores), scores, report, ConfidenceParams())
    sc = filter_and_merge(paths, ConfidenceParams(theta=0.5), scores)
    sc.save(tmp_path / "sc.json")
    back = ScenarioGraph.load(tmp_path / "sc.json")
    assert back.to_dict() == sc.to_dict()
    dot = to_dot(sc)
    assert dot.count("->") == len(sc.edges)
    assert "0.800" in dot
