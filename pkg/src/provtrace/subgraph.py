"""Anomaly subgraph: abnormal nodes joined through pruned benign intermediaries."""
from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .anomaly import AnomalyReport
from .provenance import ProvenanceGraph

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthEdge:
    src: str
    dst: str
    ts: int
    pruned: int
    witness: tuple[str, ...]

    @property
    def key(self) -> tuple[str, str]:
        return (self.src, self.dst)

    def to_dict(self) -> dict:
        return {"src": self.src, "dst": self.dst, "ts": self.ts,
                "pruned": self.pruned, "witness": list(self.witness)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthEdge":
        return cls(d["src"], d["dst"], int(d["ts"]), int(d["pruned"]), tuple(d["witness"]))


@dataclass
class AnomalySubgraph:
    nodes: set[str]
    edges: dict[tuple[str, str], SynthEdge]
    entries: set[str]
    _out: dict[str, list[SynthEdge]] = field(init=False, repr=False)
    _in: dict[str, list[SynthEdge]] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._out = {n: [] for n in self.nodes}
        self._in = {n: [] for n in self.nodes}
        for key in sorted(self.edges):
            e = self.edges[key]
            self._out[e.src].append(e)
            self._in[e.dst].append(e)

    @property
    def leaves(self) -> set[str]:
        return {n for n in self.nodes if not self._out[n]}

    def out_edges(self, node: str) -> list[SynthEdge]:
        return self._out[node]

    def in_edges(self, node: str) -> list[SynthEdge]:
        return self._in[node]

    def degrees(self, node: str) -> tuple[int, int]:
        return len(self._in[node]), len(self._out[node])

    def edge_list(self) -> list[SynthEdge]:
        return [self.edges[k] for k in sorted(self.edges)]

    def to_dict(self) -> dict:
        return {
            "nodes": sorted(self.nodes),
            "entries": sorted(self.entries),
            "leaves": sorted(self.leaves),
            "edges": [e.to_dict() for e in self.edge_list()],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "AnomalySubgraph":
        edges = [SynthEdge.from_dict(e) for e in d["edges"]]
        return cls(set(d["nodes"]), {e.key: e for e in edges}, set(d["entries"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "AnomalySubgraph":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _first_ts(g: ProvenanceGraph, src: str, dst: str) -> int:
    return min(e.ts for e in g.out_edges(src) if e.dst == dst)


def _links_from(g: ProvenanceGraph, start: str, abnormal: set[str]) -> list[SynthEdge]:
    """Breadth-first walk from ``start`` through benign nodes only.

    Returns one edge per abnormal node reached, keeping the witness with the
    fewest benign interiors, then the earliest arrival event.
    """
    parent: dict[str, str | None] = {start: None}
    depth = {start: 0}
    queue = deque([start])
    best: dict[str, tuple[int, int, tuple[str, ...]]] = {}
    while queue:
        x = queue.popleft()
        for y in g.successors(x):
            if y in abnormal:
                if y == start:
                    continue
                pruned = depth[x]
                if y in best and best[y][0] < pruned:
                    continue
                path = [y, x]
                while parent[path[-1]] is not None:
                    path.append(parent[path[-1]])
                cand = (pruned, _first_ts(g, x, y), tuple(reversed(path)))
                if y not in best or cand < best[y]:
                    best[y] = cand
            elif y not in parent:
                parent[y] = x
                depth[y] = depth[x] + 1
                queue.append(y)
    return [SynthEdge(start, v, ts, pruned, wit) for v, (pruned, ts, wit) in best.items()]


def compress(g: ProvenanceGraph, report: AnomalyReport) -> AnomalySubgraph:
    """Collapse benign-interior segments between abnormal nodes into single edges.

    Entry nodes are abnormal nodes that no other abnormal node reaches through
    benign interiors; the subgraph holds every abnormal node reachable from an
    entry along those collapsed edges.
    """
    abnormal = {n for n in report.abnormal if n in g.nodes}
    if not abnormal:
        raise ValueError("anomaly report has no abnormal nodes in this graph")
    links: dict[tuple[str, str], SynthEdge] = {}
    for u in sorted(abnormal):
        for e in _links_from(g, u, abnormal):
            links[e.key] = e
    has_pred = {v for (_, v) in links}
    entries = abnormal - has_pred
    if not entries:
        first_in = {n: min((e.ts for e in g.in_edges(n)), default=-1) for n in abnormal}
        lo = min(first_in.values())
        entries = {n for n, t in first_in.items() if t == lo}
        log.warning("no entry nodes; using %d abnormal nodes with earliest inbound event", len(entries))
    succ: dict[str, list[str]] = {}
    for (u, v) in sorted(links):
        succ.setdefault(u, []).append(v)
    reached = set(entries)
    stack = sorted(entries)
    while stack:
        u = stack.pop()
        for v in succ.get(u, ()):
            if v not in reached:
                reached.add(v)
                stack.append(v)
    edges = {k: e for k, e in links.items() if k[0] in reached}
    return AnomalySubgraph(reached, edges, entries)


def to_dot(sg: AnomalySubgraph, labels: Mapping[str, str] | None = None) -> str:
    lines = ["digraph anomaly_subgraph {", "  rankdir=LR;"]
    for n in sorted(sg.nodes):
        label = labels.get(n, n) if labels else n
        shape = "doublecircle" if n in sg.entries else "ellipse"
        lines.append(f"  {_q(n)} [label={_q(label)}, shape={shape}];")
    for e in sg.edge_list():
        lines.append(f"  {_q(e.src)} -> {_q(e.dst)} [label=\"{e.pruned}\"];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def _q(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'

