"""Abnormal node detection: edge-type features, neighborhood propagation, iForest."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .provenance import OPERATIONS, ProvenanceGraph

log = logging.getLogger(__name__)

N_FEATURES = 2 * len(OPERATIONS)
_OP_INDEX = {op: i for i, op in enumerate(OPERATIONS)}
EULER_GAMMA = 0.5772156649015329


def feature_index(op: str, direction: str) -> int:
    """Column of the (op, "in"|"out") count in a node feature vector."""
    if direction not in ("in", "out"):
        raise ValueError(f"direction must be 'in' or 'out', got {direction!r}")
    return 2 * _OP_INDEX[op] + (0 if direction == "in" else 1)


@dataclass(frozen=True)
class EmbeddingConfig:
    layers: int = 2

    def __post_init__(self) -> None:
        if self.layers < 0:
            raise ValueError("layers must be >= 0")


@dataclass(frozen=True)
class IForestConfig:
    trees: int = 100
    subsample: int = 256
    seed: int = 0
    contamination: float = 0.05

    def __post_init__(self) -> None:
        if self.trees < 1:
            raise ValueError("trees must be >= 1")
        if self.subsample < 2:
            raise ValueError("subsample must be >= 2")
        if not 0.0 < self.contamination < 1.0:
            raise ValueError("contamination must be in (0, 1)")


@dataclass
class AnomalyReport:
    scores: dict[str, float]
    abnormal: set[str]
    threshold: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "scores": {k: self.scores[k] for k in sorted(self.scores)},
            "abnormal": sorted(self.abnormal),
            "threshold": self.threshold,
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "AnomalyReport":
        return cls({str(k): float(v) for k, v in d["scores"].items()},
                   set(map(str, d["abnormal"])), float(d["threshold"]),
                   bool(d.get("degenerate", False)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "AnomalyReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def extract_features(g: ProvenanceGraph) -> dict[str, np.ndarray]:
    """Per-node counts of incoming and outgoing edges for each operation."""
    feats = {n: np.zeros(N_FEATURES) for n in sorted(g.nodes)}
    for e in g.edges:
        feats[e.dst][feature_index(e.op, "in")] += 1
        feats[e.src][feature_index(e.op, "out")] += 1
    return feats


def embed(features: Mapping[str, np.ndarray], g: ProvenanceGraph,
          cfg: EmbeddingConfig = EmbeddingConfig()) -> dict[str, np.ndarray]:
    """Propagate features over the undirected neighborhood for ``cfg.layers`` rounds.

    Each round is a fixed symmetric-normalized mean with self loops,
    ``h'_v = sum_{u in N(v) + v} h_u / sqrt(d_u d_v)`` where ``d`` is the number of
    distinct neighbors plus one. Parallel events between the same pair count once.
    """
    ids = sorted(features)
    missing = set(g.nodes) - set(ids)
    if missing:
        raise ValueError(f"features missing for {len(missing)} nodes")
    if cfg.layers == 0 or not ids:
        return {n: np.asarray(features[n], dtype=float).copy() for n in ids}
    index = {n: i for i, n in enumerate(ids)}
    pairs = set()
    for e in g.edges:
        a, b = index[e.src], index[e.dst]
        if a != b:
            pairs.add((min(a, b), max(a, b)))
    if pairs:
        pa = np.array(sorted(pairs))
        rows = np.concatenate([pa[:, 0], pa[:, 1]])
        cols = np.concatenate([pa[:, 1], pa[:, 0]])
    else:
        rows = cols = np.zeros(0, dtype=int)
    deg = np.bincount(rows, minlength=len(ids)) + 1.0
    inv_sqrt = 1.0 / np.sqrt(deg)
    w = inv_sqrt[rows] * inv_sqrt[cols]
    h = np.stack([np.asarray(features[n], dtype=float) for n in ids])
    for _ in range(cfg.layers):
        nxt = h / deg[:, None]
        np.add.at(nxt, rows, w[:, None] * h[cols])
        h = nxt
    return {n: h[i] for i, n in enumerate(ids)}


# ---------------------------------------------------------------------------
# isolation forest


def average_path_length(n: int | np.ndarray) -> np.ndarray:
    """c(n): expected path length of an unsuccessful BST search over n points."""
    n = np.asarray(n, dtype=float)
    out = np.zeros_like(n)
    two = n == 2
    big = n > 2
    out[two] = 1.0
    m = n[big]
    out[big] = 2.0 * (np.log(m - 1.0) + EULER_GAMMA) - 2.0 * (m - 1.0) / m
    return out


class _Tree:
    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, X: np.ndarray, rng: np.random.Generator, height_limit: int):
        feature, threshold, left, right, value = [], [], [], [], []

        def new_node() -> int:
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            return len(feature) - 1

        root = new_node()
        stack = [(root, np.arange(len(X)), 0)]
        while stack:
            node, idx, depth = stack.pop()
            sub = X[idx]
            if depth >= height_limit or len(idx) <= 1:
                value[node] = depth + float(average_path_length(len(idx)))
                continue
            lo, hi = sub.min(axis=0), sub.max(axis=0)
            splittable = np.flatnonzero(hi > lo)
            if splittable.size == 0:
                value[node] = depth + float(average_path_length(len(idx)))
                continue
            q = int(rng.choice(splittable))
            p = rng.uniform(lo[q], hi[q])
            mask = sub[:, q] < p
            l, r = new_node(), new_node()
            feature[node], threshold[node] = q, p
            left[node], right[node] = l, r
            stack.append((r, idx[~mask], depth + 1))
            stack.append((l, idx[mask], depth + 1))

        self.feature = np.array(feature)
        self.threshold = np.array(threshold)
        self.left = np.array(left)
        self.right = np.array(right)
        self.value = np.array(value)

    def path_length(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=int)
        rows = np.arange(len(X))
        active = self.feature[node] >= 0
        while active.any():
            r = rows[active]
            cur = node[r]
            go_left = X[r, self.feature[cur]] < self.threshold[cur]
            node[r] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.feature[node] >= 0
        return self.value[node]


class IsolationForest:
    def __init__(self, cfg: IForestConfig = IForestConfig()):
        self.cfg = cfg
        self.trees: list[_Tree] = []
        self.sample_size = 0

    def fit(self, X: np.ndarray) -> "IsolationForest":
        X = np.asarray(X, dtype=float)
        n = len(X)
        if n < 2:
            raise ValueError("isolation forest needs at least 2 samples")
        self.sample_size = min(self.cfg.subsample, n)
        height_limit = math.ceil(math.log2(self.sample_size))
        seeds = np.random.SeedSequence(self.cfg.seed).spawn(self.cfg.trees)
        self.trees = []
        for ss in seeds:
            rng = np.random.default_rng(ss)
            idx = rng.choice(n, size=self.sample_size, replace=False)
            self.trees.append(_Tree(X[idx], rng, height_limit))
        return self

    def score_samples(self, X: np.ndarray) -> np.ndarray:
        """Anomaly score ``2 ** (-E[h(x)] / c(psi))`` in [0, 1]; higher is more anomalous."""
        X = np.asarray(X, dtype=float)
        depth = np.zeros(len(X))
        for t in self.trees:
            depth += t.path_length(X)
        depth /= len(self.trees)
        return np.power(2.0, -depth / float(average_path_length(self.sample_size)))


def score_nodes(embeddings: Mapping[str, np.ndarray],
                cfg: IForestConfig = IForestConfig()) -> AnomalyReport:
    ids = sorted(embeddings)
    if len(ids) < 2:
        raise ValueError("need at least 2 nodes to build an isolation forest")
    X = np.stack([np.asarray(embeddings[n], dtype=float) for n in ids])
    s = IsolationForest(cfg).fit(X).score_samples(X)
    threshold = float(np.quantile(s, 1.0 - cfg.contamination, method="higher"))
    degenerate = bool(np.all(s == s[0]))
    if degenerate:
        log.warning("degenerate anomaly scores: all %d nodes score %.4f", len(ids), s[0])
    scores = {n: float(v) for n, v in zip(ids, s)}
    abnormal = {n for n, v in scores.items() if v >= threshold}
    return AnomalyReport(scores, abnormal, threshold, degenerate)


def detect(g: ProvenanceGraph, emb_cfg: EmbeddingConfig = EmbeddingConfig(),
           forest_cfg: IForestConfig = IForestConfig()) -> AnomalyReport:
    feats = extract_features(g)
    return score_nodes(embed(feats, g, emb_cfg), forest_cfg)
