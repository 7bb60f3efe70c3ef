"""Command line entry point: ``provtrace <subcommand> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Sequence

from . import pipeline
from .config import ConfigError, PipelineConfig, load_config
from .pattern import AttSpt, load_sequences
from .synth import SynthSpec, generate

log = logging.getLogger("provtrace")


def _global(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--out-dir", dest="out_dir", help="artifact directory (default: out)")
    p.add_argument("--seed", type=int)
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def _detect_flags(p):
    p.add_argument("--contamination", type=float)
    p.add_argument("--trees", type=int)
    p.add_argument("--subsample", type=int)
    p.add_argument("--layers", type=int)


def _annotate_flags(p):
    p.add_argument("--annotations", help="node_id<TAB>technique_id file")
    p.add_argument("--rules", help="priority<TAB>field~pattern<TAB>technique_id file")
    p.add_argument("--tactic-map", dest="tactic_map")


def _mine_flags(p):
    p.add_argument("--sequences", help="one T1234->T5678 sequence per line")
    p.add_argument("--reports-dir", dest="reports_dir", help="directory of CTI report texts")
    p.add_argument("--tactic-map", dest="tactic_map")


def _score_flags(p):
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--a", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--epsilon", type=float)


def _reason_flags(p):
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--w1", type=float)
    p.add_argument("--w2", type=float)
    p.add_argument("--theta", type=float)


def _input_flags(p):
    p.add_argument("--events", help="events.jsonl (or csv with --format csv)")
    p.add_argument("--format", choices=["jsonl", "csv"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="provtrace",
                                     description="Provenance-graph attack scenario reconstruction")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_: str, *flag_groups):
        p = sub.add_parser(name, help=help_)
        _global(p)
        for fg in flag_groups:
            fg(p)
        return p

    add("ingest", "parse audit events into graph.json", _input_flags)
    add("detect", "score nodes and write anomaly.json", _detect_flags)
    add("annotate", "label abnormal nodes with techniques", _annotate_flags)
    p = add("compress", "build the anomaly subgraph")
    p.add_argument("--no-dot", action="store_true", help="skip subgraph.dot")
    p = add("mine-patterns", "build attspt.json from CTI sequences", _mine_flags)
    p.add_argument("--out", help="ATT-SPT output path (default: <out-dir>/attspt.json)")
    add("score", "score anomaly subgraph edges", _score_flags)
    add("reason", "extract, filter and merge attack paths", _reason_flags)
    p = add("evaluate", "compare scenario.json with ground truth")
    p.add_argument("--ground-truth", dest="ground_truth")
    p = add("synth", "generate a synthetic attack scenario")
    p.add_argument("--chain-len", dest="chain_len", type=int, default=6)
    p.add_argument("--benign", type=int, default=200)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--attspt", help="ATT-SPT file to sample the attack chain from")
    p.add_argument("--sequences", help="technique sequences to build the sampling tree from")
    p.add_argument("--tactic-map", dest="tactic_map")
    p = add("run", "run every stage", _input_flags, _detect_flags, _annotate_flags,
            _score_flags, _reason_flags)
    p.add_argument("--sequences")
    p.add_argument("--reports-dir", dest="reports_dir")
    p.add_argument("--ground-truth", dest="ground_truth")
    return parser


_NON_CONFIG = {"command", "config", "log_level", "no_dot", "chain_len", "benign", "noise", "attspt", "out"}


def _config_from(args: argparse.Namespace) -> PipelineConfig:
    overrides = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG}
    return load_config(args.config, overrides)


def _synth(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    tmap = pipeline.tactic_map(cfg)
    if args.attspt:
        spt = AttSpt.load(args.attspt)
    else:
        spt = AttSpt.build(load_sequences(cfg.sequences), tmap)
    res = generate(SynthSpec(args.chain_len, args.benign, args.noise, cfg.seed), spt, tmap)
    paths = res.write(cfg.out_dir)
    log.info("wrote %s (attack chain %s)", ", ".join(str(p) for p in paths.values()),
             "->".join(res.techniques))
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config_from(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return 2
    try:
        if args.command == "run":
            pipeline.run(cfg)
        elif args.command == "synth":
            return _synth(args, cfg)
        elif args.command == "ingest":
            pipeline.ingest(cfg)
        elif args.command == "detect":
            pipeline.detect(cfg)
        elif args.command == "annotate":
            pipeline.annotate(cfg)
        elif args.command == "compress":
            pipeline.compress(cfg)
            if args.no_dot:
                cfg.out("subgraph.dot").unlink(missing_ok=True)
        elif args.command == "mine-patterns":
            pipeline.mine_patterns(cfg, args.out)
        elif args.command == "score":
            pipeline.score(cfg)
        elif args.command == "reason":
            pipeline.reason(cfg)
        elif args.command == "evaluate":
            pipeline.evaluate(cfg)
    except pipeline.StageError as exc:
        log.error("%s", exc)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        log.error("%s failed: %s", args.command, exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
