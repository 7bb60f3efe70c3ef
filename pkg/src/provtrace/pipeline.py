"""Stage functions shared by the ``run`` command and the per-stage subcommands.

Every stage writes its artifacts under ``cfg.out_dir`` and, when called without
in-memory inputs, reads the previous stage's artifacts from there. Running the
subcommands one after another therefore produces the same files as ``run``.
"""
from __future__ import annotations

import json
import logging
import time
from pathlib import Path
from typing import Any, Callable

from . import anomaly, pattern, reasoning, scoring, subgraph, ttp
from .config import PipelineConfig
from .evaluation import GroundTruth, MetricsReport, metrics
from .provenance import ProvenanceGraph, load_events, load_graph

log = logging.getLogger(__name__)

ARTIFACTS: dict[str, tuple[str, ...]] = {
    "ingest": ("graph.json",),
    "detect": ("anomaly.json",),
    "annotate": ("annotations.json",),
    "compress": ("subgraph.json", "subgraph.dot"),
    "mine-patterns": ("attspt.json",),
    "score": ("scores.json",),
    "reason": ("scenario.json", "scenario.dot"),
    "evaluate": ("metrics.json",),
}


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException | str):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage} failed: {cause}")


def _write(cfg: PipelineConfig, name: str, text: str) -> Path:
    p = cfg.out(name)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text, encoding="utf-8")
    return p


def _json(obj: Any) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def tactic_map(cfg: PipelineConfig) -> ttp.TacticMap:
    return ttp.TacticMap.load(cfg.tactic_map)


def ingest(cfg: PipelineConfig) -> ProvenanceGraph:
    if not cfg.events:
        raise ValueError("no events file configured")
    g = load_events(cfg.events, cfg.format)
    _write(cfg, "graph.json", g.dumps() + "\n")
    log.info("ingested %d nodes, %d edges", len(g.nodes), len(g.edges))
    return g


def detect(cfg: PipelineConfig, g: ProvenanceGraph | None = None) -> anomaly.AnomalyReport:
    g = g if g is not None else load_graph(cfg.out("graph.json"))
    report = anomaly.detect(g, cfg.embedding(), cfg.forest())
    _write(cfg, "anomaly.json", _json(report.to_dict()))
    log.info("%d of %d nodes abnormal (threshold %.4f)", len(report.abnormal), len(g.nodes), report.threshold)
    return report


def annotate(cfg: PipelineConfig, g: ProvenanceGraph | None = None,
             report: anomaly.AnomalyReport | None = None) -> ttp.TtpAnnotation:
    report = report if report is not None else anomaly.AnomalyReport.load(cfg.out("anomaly.json"))
    tmap = tactic_map(cfg)
    if cfg.annotations:
        ann = ttp.load_annotation_file(cfg.annotations, report, tmap)
    elif cfg.rules:
        g = g if g is not None else load_graph(cfg.out("graph.json"))
        rules = ttp.parse_rules(Path(cfg.rules).read_text(encoding="utf-8").splitlines())
        ann = ttp.rule_annotate(g, report, rules, tmap)
    else:
        ann = ttp.load_annotations([], report, tmap)
    _write(cfg, "annotations.json", _json(ann.to_dict()))
    return ann


def compress(cfg: PipelineConfig, g: ProvenanceGraph | None = None,
             report: anomaly.AnomalyReport | None = None) -> subgraph.AnomalySubgraph:
    g = g if g is not None else load_graph(cfg.out("graph.json"))
    report = report if report is not None else anomaly.AnomalyReport.load(cfg.out("anomaly.json"))
    sg = subgraph.compress(g, report)
    _write(cfg, "subgraph.json", _json(sg.to_dict()))
    names = {n: g.nodes[n].name or n for n in sg.nodes}
    _write(cfg, "subgraph.dot", subgraph.to_dot(sg, names))
    log.info("anomaly subgraph: %d nodes, %d edges, %d entries",
             len(sg.nodes), len(sg.edges), len(sg.entries))
    return sg


def mine_patterns(cfg: PipelineConfig, out: str | Path | None = None) -> pattern.AttSpt:
    tmap = tactic_map(cfg)
    seqs: list[pattern.TechniqueSequence] = []
    if cfg.sequences:
        seqs.extend(pattern.load_sequences(cfg.sequences))
    if cfg.reports_dir:
        seqs.extend(pattern.extract_from_dir(cfg.reports_dir, tmap))
    if not cfg.sequences and not cfg.reports_dir:
        seqs = pattern.load_sequences()
    spt = pattern.AttSpt.build(seqs, tmap)
    if out is None:
        _write(cfg, "attspt.json", spt.dumps())
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(spt.dumps(), encoding="utf-8")
    log.info("ATT-SPT from %d sequences: %d technique nodes, %d tactic nodes",
             len(seqs), len(spt.technique_pt), len(spt.tactic_pt))
    return spt


def score(cfg: PipelineConfig, sg: subgraph.AnomalySubgraph | None = None,
          ann: ttp.TtpAnnotation | None = None, spt: pattern.AttSpt | None = None):
    sg = sg if sg is not None else subgraph.AnomalySubgraph.load(cfg.out("subgraph.json"))
    ann = ann if ann is not None else ttp.TtpAnnotation.load(cfg.out("annotations.json"))
    spt = spt if spt is not None else pattern.AttSpt.load(cfg.out("attspt.json"))
    scores = scoring.score_edges(sg, ann, spt, cfg.scoring())
    scoring.save_scores(scores, cfg.out("scores.json"))
    return scores


def reason(cfg: PipelineConfig, sg=None, scores=None, report=None, ann=None,
           g: ProvenanceGraph | None = None) -> reasoning.ScenarioGraph:
    sg = sg if sg is not None else subgraph.AnomalySubgraph.load(cfg.out("subgraph.json"))
    scores = scores if scores is not None else scoring.load_scores(cfg.out("scores.json"))
    report = report if report is not None else anomaly.AnomalyReport.load(cfg.out("anomaly.json"))
    ann = ann if ann is not None else ttp.TtpAnnotation.load(cfg.out("annotations.json"))
    g = g if g is not None else load_graph(cfg.out("graph.json"))
    params = cfg.confidence()
    paths = reasoning.score_paths(reasoning.traverse(sg, scores), scores, report, params)
    sc = reasoning.filter_and_merge(paths, params, scores, ann, keep_single=cfg.keep_single)
    _write(cfg, "scenario.json", _json(sc.to_dict()))
    names = {n: g.nodes[n].name if n in g.nodes else n for n in sc.nodes}
    _write(cfg, "scenario.dot", reasoning.to_dot(sc, names))
    log.info("%d candidate paths, %d kept; scenario has %d nodes",
             len(paths), len(sc.paths), len(sc.nodes))
    return sc


def evaluate(cfg: PipelineConfig, sc: reasoning.ScenarioGraph | None = None) -> MetricsReport:
    if not cfg.ground_truth:
        raise ValueError("no ground truth configured")
    sc = sc if sc is not None else reasoning.ScenarioGraph.load(cfg.out("scenario.json"))
    m = metrics(sc.nodes, GroundTruth.load(cfg.ground_truth))
    _write(cfg, "metrics.json", _json(m.to_dict()))
    log.info("precision %.4f recall %.4f f1 %.4f", m.precision, m.recall, m.f1)
    return m


def check_inputs(cfg: PipelineConfig) -> None:
    if not cfg.events:
        raise StageError("input", "no events file configured")
    for key in ("events", "annotations", "rules", "tactic_map", "sequences", "ground_truth"):
        v = getattr(cfg, key)
        if v and not Path(v).is_file():
            raise StageError("input", f"{key} file not found: {v}")
    if cfg.reports_dir and not Path(cfg.reports_dir).is_dir():
        raise StageError("input", f"reports_dir not found: {cfg.reports_dir}")


def run(cfg: PipelineConfig) -> dict[str, Any]:
    """Execute every stage; on failure rename this run's artifacts to ``*.partial``."""
    check_inputs(cfg)
    written: list[Path] = []
    timings: dict[str, float] = {}
    state: dict[str, Any] = {}

    def stage(name: str, fn: Callable[[], Any]) -> Any:
        t0 = time.perf_counter()
        try:
            result = fn()
        except Exception as exc:
            for p in written + [cfg.out(a) for a in ARTIFACTS.get(name, ())]:
                if p.exists():
                    p.replace(p.with_name(p.name + ".partial"))
            raise StageError(name, exc) from exc
        timings[name] = time.perf_counter() - t0
        written.extend(cfg.out(a) for a in ARTIFACTS[name])
        log.info("stage %-13s %.3f s", name, timings[name])
        return result

    state["graph"] = stage("ingest", lambda: ingest(cfg))
    state["report"] = stage("detect", lambda: detect(cfg, state["graph"]))
    state["ann"] = stage("annotate", lambda: annotate(cfg, state["graph"], state["report"]))
    state["sg"] = stage("compress", lambda: compress(cfg, state["graph"], state["report"]))
    state["spt"] = stage("mine-patterns", lambda: mine_patterns(cfg))
    state["scores"] = stage("score", lambda: score(cfg, state["sg"], state["ann"], state["spt"]))
    state["scenario"] = stage("reason", lambda: reason(cfg, state["sg"], state["scores"], state["report"],
                                                       state["ann"], state["graph"]))
    if cfg.ground_truth:
        state["metrics"] = stage("evaluate", lambda: evaluate(cfg, state["scenario"]))
    state["timings"] = timings
    return state
