import pytest
from hypothesis import given, settings, strategies as st

from provtrace.pattern import AttSpt
from provtrace.scoring import (
    ScoringParams,
    _segments,
    branch_count,
    load_scores,
    ni_raw,
    ni_score,
    normalize,
    save_scores,
    score_edges,
    tactic_score,
    technique_score,
)
from provtrace.ttp import TACTICS, TtpAnnotation

from conftest import TACTIC_SEQUENCES, make_subgraph

IA, EX, DE, CA, DI = "Initial Access", "Execution", "Defense Evasion", "Credential Access", "Discovery"


@pytest.fixture(scope="module")
def tactic_tree(tmap):
    return AttSpt.build(TACTIC_SEQUENCES, tmap).tactic_pt


def test_tactic_tree_shape(tactic_tree):
    assert branch_count(tactic_tree, IA) == 4
    assert sorted(_segments(tactic_tree, IA, CA)) == [2, 3]
    assert branch_count(tactic_tree, DE) == 2


def test_two_segments_over_four_branches(tactic_tree):
    assert tactic_score(IA, CA, tactic_tree, b=1.0) == pytest.approx(0.208333333, abs=1e-9)
    assert tactic_score(IA, CA, tactic_tree, b=2.0) == pytest.approx(2 * (1 / 3 + 1 / 2) / 4, abs=1e-12)


def test_same_tactic_is_b(tactic_tree):
    assert tactic_score(EX, EX, tactic_tree, b=0.7) == 0.7
    assert tactic_score("Impact", "Impact", tactic_tree, b=0.7) == 0.7


def test_no_segment_is_zero(tactic_tree):
    assert tactic_score(DE, EX, tactic_tree) == 0.0


def test_direct_over_two_branches(tactic_tree):
    assert tactic_score(DE, CA, tactic_tree, b=1.0) == 0.5


def test_unmapped_tactic_scores_zero(tactic_tree):
    assert tactic_score(None, CA, tactic_tree) == 0.0


def test_technique_scores_on_reference_tree(reference_attspt):
    tpt = reference_attspt.technique_pt
    assert technique_score("T1583", "T1190", tpt, a=1.0) == 1.0
    assert technique_score("T1583", "T1059", tpt, a=1.0) == pytest.approx(0.5)
    assert technique_score("T1583", "T1070", tpt, a=1.0) == pytest.approx(1 / 3)
    assert technique_score("T1583", "T1070", tpt, a=3.0) == pytest.approx(1.0)
    assert technique_score("T1087", "T1583", tpt, a=2.0, epsilon=0.01) == pytest.approx(0.02)
    assert technique_score("T0000", "T1190", tpt, a=1.0, epsilon=0.05) == pytest.approx(0.05)


def test_ni_raw_examples():
    assert ni_raw((4, 1), (1, 3)) == 7.0
    assert ni_raw((0, 2), (1, 0)) == pytest.approx(1 / 3 + 1 / 2)
    assert ni_raw((0, 2), (1, 0)) == pytest.approx(0.8333, abs=1e-4)


def test_single_edge_normalizes_to_half():
    sg = make_subgraph([("u", "v")])
    assert ni_score(("u", "v"), sg) == 0.5


def test_normalize_range():
    out = normalize({("a", "b"): 1.0, ("b", "c"): 3.0, ("c", "d"): 2.0})
    assert out == {("a", "b"): 0.0, ("b", "c"): 1.0, ("c", "d"): 0.5}
    assert normalize({}) == {}


def test_params_validation():
    with pytest.raises(ValueError):
        ScoringParams(alpha=0.7, beta=0.4)
    with pytest.raises(ValueError):
        ScoringParams(epsilon=0)
    with pytest.raises(ValueError):
        ScoringParams(a=0)


@pytest.fixture
def scored_case(tmap):
    spt = AttSpt.build(TACTIC_SEQUENCES, tmap)
    sg = make_subgraph([("n3", "n6"), ("n6", "n7")])
    ann = TtpAnnotation({"n3": "T1190", "n6": "T1003", "n7": "T0000"},
                        {"n3": IA, "n6": CA, "n7": None})
    return sg, ann, spt


def test_tactic_only_edge_total(scored_case):
    sg, ann, spt = scored_case
    out = score_edges(sg, ann, spt, ScoringParams(alpha=1.0, beta=0.0, b=1.0))
    assert out[("n3", "n6")].total == pytest.approx(0.2083, abs=1e-4)


def test_mixture_collapse(scored_case):
    sg, ann, spt = scored_case
    tac_only = score_edges(sg, ann, spt, ScoringParams(alpha=1.0, beta=0.0))
    tech_only = score_edges(sg, ann, spt, ScoringParams(alpha=0.0, beta=1.0))
    ni_only = score_edges(sg, ann, spt, ScoringParams(alpha=0.0, beta=0.0))
    for k in sg.edges:
        assert tac_only[k].total == tac_only[k].tactic
        assert tech_only[k].total == tech_only[k].technique
        assert ni_only[k].total == ni_only[k].ni


def test_flags_and_round_trip(scored_case, tmp_path):
    sg, ann, spt = scored_case
    out = score_edges(sg, ann, spt)
    assert out[("n3", "n6")].flags == ()
    assert set(out[("n6", "n7")].flags) == {"unmapped-tactic", "unknown-technique"}
    save_scores(out, tmp_path / "s.json")
    assert load_scores(tmp_path / "s.json") == out


_TECHS = ["T1190", "T1059", "T1070", "T1003", "T1087", "T1505", "T1566", "T1105", "T1055", "T1053"]
_seq = st.lists(st.sampled_from(_TECHS), min_size=1, max_size=6)


@settings(max_examples=100, deadline=None)
@given(st.lists(_seq, min_size=1, max_size=8), st.sampled_from(_TECHS), st.sampled_from(_TECHS),
       st.floats(0.1, 5), st.floats(0.1, 5), st.floats(0.001, 0.5))
def test_score_ranges(tmap, seqs, t1, t2, a, b, eps):
    spt = AttSpt.build(seqs, tmap)
    ta1, ta2 = tmap.tactic_of(t1), tmap.tactic_of(t2)
    assert 0.0 <= tactic_score(ta1, ta2, spt.tactic_pt, b) <= b + 1e-12
    assert a * eps - 1e-12 <= technique_score(t1, t2, spt.technique_pt, a, eps) <= a + 1e-12
    # scaling b scales every tactic score by the same factor
    assert tactic_score(ta1, ta2, spt.tactic_pt, 2 * b) == pytest.approx(2 * tactic_score(ta1, ta2, spt.tactic_pt, b))


@settings(max_examples=60, deadline=None)
@given(st.lists(_seq, min_size=2, max_size=8), st.sampled_from(TACTICS), st.sampled_from(TACTICS))
def test_removing_sequence_never_increases_numerator(tmap, seqs, x, y):
    full = AttSpt.build(seqs, tmap).tactic_pt
    fewer = AttSpt.build(seqs[:-1], tmap).tactic_pt
    if x != y:
        assert sum(1 / n for n in _segments(fewer, x, y)) <= sum(1 / n for n in _segments(full, x, y)) + 1e-12
    assert tactic_score(x, x, full) == 1.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)).filter(lambda e: e[0] < e[1]),
                min_size=1, max_size=12, unique=True),
       st.floats(0, 1), st.floats(0, 1))
def test_total_bounded(tmap, pairs, alpha, beta):
    if alpha + beta > 1:
        alpha, beta = alpha / 2, beta / 2
    sg = make_subgraph([(f"n{u}", f"n{v}") for u, v in pairs])
    techs = {n: _TECHS[int(n[1:]) % len(_TECHS)] for n in sg.nodes}
    ann = TtpAnnotation(techs, {n: tmap.tactic_of(t) for n, t in techs.items()})
    spt = AttSpt.build([_TECHS[:4], _TECHS[3:8]], tmap)
    p = ScoringParams(alpha=alpha, beta=beta)
    for bd in score_edges(sg, ann, spt, p).values():
        assert 0.0 <= bd.ni <= 1.0
        assert -1e-12 <= bd.total <= max(p.a, p.b, 1.0) + 1e-12


def test_recurring_tactic_on_one_branch_stays_within_b(tmap):
    spt = AttSpt.build([["T1190", "T1059", "T1190", "T1059"]], tmap)
    # nearest target per branch: IA(1)->EX(2) and IA(3)->EX(4), over 2 leaves
    assert tactic_score("Initial Access", "Execution", spt.tactic_pt, 1.0) == pytest.approx(1.0)
