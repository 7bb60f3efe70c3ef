"""Candidate attack paths, path confidence, and scenario merging."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .anomaly import AnomalyReport
from .provenance import base_id
from .scoring import EdgeScoreBreakdown
from .subgraph import AnomalySubgraph
from .ttp import TtpAnnotation

log = logging.getLogger(__name__)

EdgeKey = tuple[str, str]


@dataclass(frozen=True)
class ConfidenceParams:
    lam: float = 3.0
    w1: float = 0.5
    w2: float = 0.5
    theta: float = 0.3

    def __post_init__(self) -> None:
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if self.w1 < 0 or self.w2 < 0 or self.w1 + self.w2 <= 0:
            raise ValueError("need w1, w2 >= 0 and w1 + w2 > 0")


@dataclass(frozen=True)
class CandidatePath:
    nodes: tuple[str, ...]
    edges: tuple[EdgeKey, ...]
    edge_score_avg: float = 0.0
    length_score: float = 0.0
    node_score: float = 0.0
    confidence: float = 0.0

    def __len__(self) -> int:
        return len(self.edges)

    def to_dict(self) -> dict:
        return {"nodes": list(self.nodes), "edges": [list(e) for e in self.edges],
                "edge_score_avg": self.edge_score_avg, "length_score": self.length_score,
                "node_score": self.node_score, "confidence": self.confidence}


def _step_key(e, scores: Mapping[EdgeKey, EdgeScoreBreakdown]):
    # smaller is better: higher score, then earlier ts, then smaller source id
    return (-scores[e.key].total, e.ts, e.src)


def traverse(sg: AnomalySubgraph, scores: Mapping[EdgeKey, EdgeScoreBreakdown]) -> list[CandidatePath]:
    """Greedy max-score backtracking from every leaf to an entry node.

    Paths come back entry-first, ordered by leaf id.
    """
    missing = [k for k in sg.edges if k not in scores]
    if missing:
        raise KeyError(f"no score for {len(missing)} subgraph edges, e.g. {missing[0]}")
    leaves = sorted(sg.leaves)
    if sg.nodes and not leaves:
        raise ValueError("anomaly subgraph has no leaf node (cycle)")
    paths = []
    for leaf in leaves:
        nodes = [leaf]
        edges: list[EdgeKey] = []
        seen = {leaf}
        cur = leaf
        while True:
            options = [e for e in sg.in_edges(cur) if e.src not in seen]
            if not options:
                break
            best = min(options, key=lambda e: _step_key(e, scores))
            edges.append(best.key)
            cur = best.src
            nodes.append(cur)
            seen.add(cur)
        paths.append(CandidatePath(tuple(reversed(nodes)), tuple(reversed(edges))))
    return paths


def edge_avg(edge_scores: Sequence[float]) -> float:
    return sum(edge_scores) / len(edge_scores) if edge_scores else 0.0


def length_score(n_edges: int, avg: float, lam: float) -> float:
    return (1.0 - math.exp(-n_edges / lam)) * avg


def node_score(node_scores: Sequence[float]) -> float:
    return sum(node_scores) / len(node_scores) if node_scores else 0.0


def confidence(ls: float, ns: float, params: ConfidenceParams) -> float:
    return params.w1 * ls + params.w2 * ns


def score_path(cp: CandidatePath, scores: Mapping[EdgeKey, EdgeScoreBreakdown],
               report: AnomalyReport, params: ConfidenceParams) -> CandidatePath:
    avg = edge_avg([scores[k].total for k in cp.edges])
    ls = length_score(len(cp.edges), avg, params.lam)
    ns = node_score([report.scores.get(n, 0.0) for n in cp.nodes])
    return replace(cp, edge_score_avg=avg, length_score=ls, node_score=ns,
                   confidence=confidence(ls, ns, params))


def score_paths(paths: Iterable[CandidatePath], scores, report, params) -> list[CandidatePath]:
    return [score_path(p, scores, report, params) for p in paths]


@dataclass
class ScenarioGraph:
    nodes: set[str] = field(default_factory=set)
    edges: set[EdgeKey] = field(default_factory=set)
    paths: list[CandidatePath] = field(default_factory=list)
    techniques: dict[str, str] = field(default_factory=dict)
    tactics: dict[str, str | None] = field(default_factory=dict)
    edge_scores: dict[EdgeKey, EdgeScoreBreakdown] = field(default_factory=dict)
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "nodes": [{"id": n, "technique": self.techniques.get(n), "tactic": self.tactics.get(n)}
                      for n in sorted(self.nodes)],
            "edges": [{"src": k[0], "dst": k[1],
                       "score": self.edge_scores[k].to_dict() if k in self.edge_scores else None}
                      for k in sorted(self.edges)],
            "paths": [p.to_dict() for p in self.paths],
            "degenerate": self.degenerate,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioGraph":
        d = json.loads(Path(path).read_text())
        sc = cls(degenerate=bool(d.get("degenerate", False)))
        for n in d["nodes"]:
            sc.nodes.add(n["id"])
            if n.get("technique") is not None:
                sc.techniques[n["id"]] = n["technique"]
            sc.tactics[n["id"]] = n.get("tactic")
        for e in d["edges"]:
            k = (e["src"], e["dst"])
            sc.edges.add(k)
            if e.get("score"):
                sc.edge_scores[k] = EdgeScoreBreakdown.from_dict(e["score"])
        for p in d.get("paths", []):
            sc.paths.append(CandidatePath(tuple(p["nodes"]), tuple(tuple(e) for e in p["edges"]),
                                          p["edge_score_avg"], p["length_score"],
                                          p["node_score"], p["confidence"]))
        return sc


def _groups(paths: Sequence[CandidatePath], identity: Callable[[str], str]) -> list[list[int]]:
    parent = list(range(len(paths)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    owner: dict[str, int] = {}
    for i, p in enumerate(paths):
        for n in p.nodes:
            key = identity(n)
            if key in owner:
                a, b = find(owner[key]), find(i)
                if a != b:
                    parent[max(a, b)] = min(a, b)
            else:
                owner[key] = i
    groups: dict[int, list[int]] = {}
    for i in range(len(paths)):
        groups.setdefault(find(i), []).append(i)
    return list(groups.values())


def filter_and_merge(paths: Iterable[CandidatePath], params: ConfidenceParams,
                     scores: Mapping[EdgeKey, EdgeScoreBreakdown] | None = None,
                     ann: TtpAnnotation | None = None,
                     identity: Callable[[str], str] = base_id,
                     keep_single: bool = True) -> ScenarioGraph:
    """Keep paths at or above ``theta`` that share a node with another survivor, then union them.

    Node sharing is judged on entity identity, so versions of one entity
    match. A lone survivor is kept (flagged degenerate) when ``keep_single``.
    """
    survivors = sorted((p for p in paths if p.confidence >= params.theta),
                       key=lambda p: (p.nodes, p.edges))
    sc = ScenarioGraph()
    if not survivors:
        log.warning("no candidate path reaches confidence %.3f; scenario is empty", params.theta)
        return sc
    if len(survivors) == 1 and keep_single:
        kept = survivors
        sc.degenerate = True
    else:
        kept = [survivors[i] for grp in _groups(survivors, identity) if len(grp) >= 2 for i in grp]
    kept.sort(key=lambda p: (p.nodes, p.edges))
    for p in kept:
        sc.nodes.update(p.nodes)
        sc.edges.update(p.edges)
    sc.paths = kept
    if scores is not None:
        sc.edge_scores = {k: scores[k] for k in sc.edges if k in scores}
    if ann is not None:
        sc.techniques = {n: ann.technique(n) for n in sc.nodes}
        sc.tactics = {n: ann.tactic(n) for n in sc.nodes}
    return sc


def to_dot(sc: ScenarioGraph, names: Mapping[str, str] | None = None) -> str:
    lines = ["digraph scenario {", "  rankdir=LR;", "  node [shape=box];"]
    for n in sorted(sc.nodes):
        name = names.get(n, n) if names else n
        tech = sc.techniques.get(n, "T0000")
        tactic = sc.tactics.get(n) or "unmapped"
        label = f"{name}\n{tech}/{tactic}"
        lines.append(f"  {_q(n)} [label={_q(label)}];")
    for k in sorted(sc.edges):
        s = sc.edge_scores.get(k)
        attr = f" [label=\"{s.total:.3f}\"]" if s is not None else ""
        lines.append(f"  {_q(k[0])} -> {_q(k[1])}{attr};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def _q(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'
