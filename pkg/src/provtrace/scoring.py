"""Edge threat scores from tactic/technique pattern trees and node degrees."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

from .pattern import AttSpt, PatternNode, PatternTree
from .subgraph import AnomalySubgraph
from .ttp import UNKNOWN_TECHNIQUE, TtpAnnotation

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScoringParams:
    a: float = 1.0
    b: float = 1.0
    epsilon: float = 0.01
    alpha: float = 0.4
    beta: float = 0.4
    smoothing: bool = True

    def __post_init__(self) -> None:
        if self.a <= 0 or self.b <= 0:
            raise ValueError("a and b must be positive")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must be in (0, 1)")
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta > 1.0 + 1e-12:
            raise ValueError("need alpha, beta >= 0 and alpha + beta <= 1")


@dataclass(frozen=True)
class EdgeScoreBreakdown:
    tactic: float
    technique: float
    ni_raw: float
    ni: float
    total: float
    flags: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flags"] = list(self.flags)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "EdgeScoreBreakdown":
        return cls(float(d["tactic"]), float(d["technique"]), float(d["ni_raw"]),
                   float(d["ni"]), float(d["total"]), tuple(d.get("flags", ())))


def _segments(tree: PatternTree, src: str, dst: str) -> list[int]:
    """Lengths of downward segments from each ``src`` node to the nearest ``dst`` on each branch.

    Descent stops at the first ``dst`` hit, so one branch yields at most one
    segment per ``src`` occurrence and the score stays within ``[0, b]``.
    """
    lengths = []
    for start in tree.occurrences(src):
        stack: list[PatternNode] = list(start.children.values())
        while stack:
            n = stack.pop()
            if n.label == dst:
                lengths.append(n.depth - start.depth)
                continue
            stack.extend(n.children.values())
    return lengths


def _leaves_below(node: PatternNode) -> int:
    count = 0
    stack = list(node.children.values())
    while stack:
        n = stack.pop()
        if n.children:
            stack.extend(n.children.values())
        else:
            count += 1
    return count


def branch_count(tree: PatternTree, label: str) -> int:
    """Number of branches leaving nodes labeled ``label``, summed over occurrences."""
    return sum(_leaves_below(n) for n in tree.occurrences(label))


def tactic_score(src: str | None, dst: str | None, tactic_pt: PatternTree, b: float = 1.0) -> float:
    """Reachability-weighted transition score between two tactics.

    Same tactic scores ``b``; otherwise ``b * sum(1/len(p)) / out(src)`` over
    every downward tree segment p from ``src`` to ``dst``; 0 when there is none.
    """
    if src is None or dst is None:
        return 0.0
    if src == dst:
        return b
    lengths = _segments(tactic_pt, src, dst)
    if not lengths:
        return 0.0
    return b * sum(1.0 / n for n in lengths) / branch_count(tactic_pt, src)


def technique_score(src: str, dst: str, technique_pt: PatternTree,
                    a: float = 1.0, epsilon: float = 0.01) -> float:
    """``a * max(direct, max indirect 1/len, epsilon)`` over the technique tree."""
    if src == UNKNOWN_TECHNIQUE or dst == UNKNOWN_TECHNIQUE:
        return a * epsilon
    lengths = _segments(technique_pt, src, dst)
    direct = 1.0 if 1 in lengths else 0.0
    indirect = max((1.0 / n for n in lengths if n >= 2), default=0.0)
    return a * max(direct, indirect, epsilon)


def _ratio(num: int, den: int, smoothing: bool) -> float:
    if smoothing and (num == 0 or den == 0):
        return (num + 1) / (den + 1)
    return num / den if den else 0.0


def ni_raw(u_deg: tuple[int, int], v_deg: tuple[int, int], smoothing: bool = True) -> float:
    """Neighbor-interaction score for edge u->v from ``(in, out)`` degree pairs.

    ``u.in/u.out + v.out/v.in``; with smoothing, a ratio whose numerator or
    denominator is zero gets +1 on both sides.
    """
    return _ratio(u_deg[0], u_deg[1], smoothing) + _ratio(v_deg[1], v_deg[0], smoothing)


def ni_score(edge_key: tuple[str, str], sg: AnomalySubgraph, smoothing: bool = True) -> float:
    """Min-max normalized neighbor-interaction score of one subgraph edge."""
    raws = {k: ni_raw(sg.degrees(k[0]), sg.degrees(k[1]), smoothing) for k in sg.edges}
    return normalize(raws)[edge_key]


def normalize(raw: Mapping[tuple[str, str], float]) -> dict[tuple[str, str], float]:
    if not raw:
        return {}
    lo, hi = min(raw.values()), max(raw.values())
    if hi == lo:
        return {k: 0.5 for k in raw}
    return {k: (v - lo) / (hi - lo) for k, v in raw.items()}


def score_edges(sg: AnomalySubgraph, ann: TtpAnnotation, attspt: AttSpt,
                params: ScoringParams = ScoringParams()) -> dict[tuple[str, str], EdgeScoreBreakdown]:
    raws = {k: ni_raw(sg.degrees(k[0]), sg.degrees(k[1]), params.smoothing) for k in sg.edges}
    norm = normalize(raws)
    out = {}
    for key in sorted(sg.edges):
        u, v = key
        flags = []
        ta_u, ta_v = ann.tactic(u), ann.tactic(v)
        if ta_u is None or ta_v is None:
            flags.append("unmapped-tactic")
        t_u, t_v = ann.technique(u), ann.technique(v)
        if UNKNOWN_TECHNIQUE in (t_u, t_v):
            flags.append("unknown-technique")
        tac = tactic_score(ta_u, ta_v, attspt.tactic_pt, params.b)
        tech = technique_score(t_u, t_v, attspt.technique_pt, params.a, params.epsilon)
        total = (params.alpha * tac + params.beta * tech
                 + (1.0 - params.alpha - params.beta) * norm[key])
        out[key] = EdgeScoreBreakdown(tac, tech, raws[key], norm[key], total, tuple(flags))
    return out


def save_scores(scores: Mapping[tuple[str, str], EdgeScoreBreakdown], path: str | Path) -> None:
    rows = [{"src": k[0], "dst": k[1], **scores[k].to_dict()} for k in sorted(scores)]
    Path(path).write_text(json.dumps(rows, indent=1, sort_keys=True) + "\n")


def load_scores(path: str | Path) -> dict[tuple[str, str], EdgeScoreBreakdown]:
    rows = json.loads(Path(path).read_text())
    return {(r["src"], r["dst"]): EdgeScoreBreakdown.from_dict(r) for r in rows}
