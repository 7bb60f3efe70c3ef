"""Node-level precision/recall/F1/FNR against ground truth."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

from .provenance import base_id


@dataclass(frozen=True)
class GroundTruth:
    nodes: frozenset[str]
    edges: frozenset[tuple[str, str]] = frozenset()

    def __post_init__(self) -> None:
        if not self.nodes:
            raise ValueError("ground truth needs at least one attack node")

    def to_dict(self) -> dict:
        return {"attack_nodes": sorted(self.nodes), "attack_edges": [list(e) for e in sorted(self.edges)]}

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        return cls(frozenset(d["attack_nodes"]),
                   frozenset(tuple(e) for e in d.get("attack_edges", [])))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "GroundTruth":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    fnr: float
    flags: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flags"] = list(self.flags)
        return d


def counts_to_metrics(tp: int, fp: int, fn: int) -> MetricsReport:
    flags = []
    if tp + fp == 0:
        precision = 0.0
        flags.append("empty-scenario")
    else:
        precision = tp / (tp + fp)
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    fnr = fn / (tp + fn) if tp + fn else 0.0
    return MetricsReport(tp, fp, fn, precision, recall, f1, fnr, tuple(flags))


def metrics(scenario_nodes: Iterable[str], gt: GroundTruth) -> MetricsReport:
    """Compare reconstructed nodes (versions folded onto their entity) with the truth set."""
    found = {base_id(n) for n in scenario_nodes}
    truth = {base_id(n) for n in gt.nodes}
    tp = len(found & truth)
    return counts_to_metrics(tp, len(found - truth), len(truth - found))
