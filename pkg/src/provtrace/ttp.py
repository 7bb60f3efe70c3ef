"""ATT&CK technique/tactic labels for abnormal nodes.

Labels come from an annotation file (``node_id<TAB>technique_id``) or from an
ordered rule file. Nodes left without a label get the ``T0000`` sentinel.
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .anomaly import AnomalyReport
from .provenance import ProvenanceGraph, base_id

log = logging.getLogger(__name__)

UNKNOWN_TECHNIQUE = "T0000"

TACTICS: tuple[str, ...] = (
    "Reconnaissance",
    "Resource Development",
    "Initial Access",
    "Execution",
    "Persistence",
    "Privilege Escalation",
    "Defense Evasion",
    "Credential Access",
    "Discovery",
    "Lateral Movement",
    "Collection",
    "Command and Control",
    "Exfiltration",
    "Impact",
)
_TACTIC_LOOKUP = {t.lower(): t for t in TACTICS}

TECHNIQUE_RE = re.compile(r"^T\d{4}(?:\.\d{3})?$")


class AnnotationError(ValueError):
    pass


def is_technique(tid: str) -> bool:
    return bool(TECHNIQUE_RE.match(tid))


def normalize_tactic(name: str) -> str:
    key = " ".join(name.replace("&", "and").split()).lower()
    try:
        return _TACTIC_LOOKUP[key]
    except KeyError:
        raise AnnotationError(f"unknown tactic {name!r}") from None


def _data_lines(lines: Iterable[str]) -> Iterable[tuple[int, str]]:
    for i, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if line.strip() and not line.lstrip().startswith("#"):
            yield i, line


class TacticMap:
    """technique id -> tactic name; the first listing of a technique wins."""

    def __init__(self, mapping: Mapping[str, str] | Iterable[tuple[str, str]] = ()):
        self._map: dict[str, str] = {}
        items = mapping.items() if isinstance(mapping, Mapping) else mapping
        for tid, tactic in items:
            self.add(tid, tactic)

    def add(self, tid: str, tactic: str) -> None:
        if not is_technique(tid):
            raise AnnotationError(f"malformed technique id {tid!r}")
        self._map.setdefault(tid, normalize_tactic(tactic))

    def tactic_of(self, tid: str) -> str | None:
        """Tactic for a technique; sub-techniques fall back to their parent."""
        if tid == UNKNOWN_TECHNIQUE:
            return None
        t = self._map.get(tid)
        if t is None and "." in tid:
            t = self._map.get(tid.split(".", 1)[0])
        return t

    def __contains__(self, tid: object) -> bool:
        return isinstance(tid, str) and self.tactic_of(tid) is not None

    def __len__(self) -> int:
        return len(self._map)

    def items(self):
        return self._map.items()

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "TacticMap":
        tm = cls()
        for i, line in _data_lines(lines):
            parts = line.split("\t")
            if len(parts) < 2:
                raise AnnotationError(f"tactic map line {i}: expected technique<TAB>tactic")
            try:
                tm.add(parts[0].strip(), parts[1].strip())
            except AnnotationError as exc:
                raise AnnotationError(f"tactic map line {i}: {exc}") from None
        return tm

    @classmethod
    def load(cls, path: str | Path | None = None) -> "TacticMap":
        if path is None:
            text = resources.files("provtrace.data").joinpath("tactic_map.tsv").read_text()
        else:
            text = Path(path).read_text(encoding="utf-8")
        return cls.from_lines(text.splitlines())


@dataclass
class TtpAnnotation:
    techniques: dict[str, str] = field(default_factory=dict)
    tactics: dict[str, str | None] = field(default_factory=dict)

    def technique(self, node: str) -> str:
        return self.techniques.get(node, UNKNOWN_TECHNIQUE)

    def tactic(self, node: str) -> str | None:
        return self.tactics.get(node)

    def to_dict(self) -> dict:
        return {n: {"technique": self.techniques[n], "tactic": self.tactics.get(n)}
                for n in sorted(self.techniques)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TtpAnnotation":
        return cls({n: v["technique"] for n, v in d.items()},
                   {n: v.get("tactic") for n, v in d.items()})

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "TtpAnnotation":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _finish(labels: Mapping[str, str], report: AnomalyReport, tmap: TacticMap) -> TtpAnnotation:
    ann = TtpAnnotation()
    for node in sorted(report.abnormal):
        tid = labels.get(node, UNKNOWN_TECHNIQUE)
        tactic = tmap.tactic_of(tid)
        if tid != UNKNOWN_TECHNIQUE and tactic is None:
            log.warning("technique %s on %s has no tactic mapping", tid, node)
        ann.techniques[node] = tid
        ann.tactics[node] = tactic
    return ann


def load_annotations(lines: Iterable[str], report: AnomalyReport,
                     tmap: TacticMap | None = None) -> TtpAnnotation:
    """Read ``node_id<TAB>technique_id`` lines and label the abnormal nodes.

    A bare entity id also labels every abnormal version of that entity.
    Unknown nodes are skipped with a warning; malformed technique ids raise.
    """
    tmap = tmap if tmap is not None else TacticMap.load()
    known = set(report.scores) | set(report.abnormal)
    by_entity: dict[str, list[str]] = {}
    for n in report.abnormal:
        by_entity.setdefault(base_id(n), []).append(n)
    labels: dict[str, str] = {}
    for i, line in _data_lines(lines):
        parts = line.split("\t")
        if len(parts) < 2:
            raise AnnotationError(f"annotation line {i}: expected node_id<TAB>technique_id")
        node, tid = parts[0].strip(), parts[1].strip()
        if not is_technique(tid):
            raise AnnotationError(f"annotation line {i}: malformed technique id {tid!r}")
        targets = [node] if node in known else []
        if node == base_id(node):
            targets += [v for v in by_entity.get(node, []) if v != node]
        if not targets:
            log.warning("annotation line %d: unknown node %r, skipped", i, node)
            continue
        for t in targets:
            if t in report.abnormal:
                labels.setdefault(t, tid)
    return _finish(labels, report, tmap)


def load_annotation_file(path: str | Path, report: AnomalyReport,
                         tmap: TacticMap | None = None) -> TtpAnnotation:
    return load_annotations(Path(path).read_text(encoding="utf-8").splitlines(), report, tmap)


# ---------------------------------------------------------------------------
# rule-based fallback


@dataclass(frozen=True)
class Rule:
    priority: int
    field: str
    pattern: re.Pattern
    technique: str

    def matches(self, g: ProvenanceGraph, node: str) -> bool:
        ent = g.nodes[node]
        if self.field == "name":
            values = [ent.name]
        elif self.field == "kind":
            values = [ent.kind.value]
        elif self.field == "in_op":
            values = [e.op for e in g.in_edges(node)]
        elif self.field == "out_op":
            values = [e.op for e in g.out_edges(node)]
        elif self.field == "op":
            values = [e.op for e in g.in_edges(node)] + [e.op for e in g.out_edges(node)]
        else:
            v = ent.attrs.get(self.field)
            values = [] if v is None else [v]
        return any(self.pattern.search(v) for v in values)


def parse_rules(lines: Iterable[str]) -> list[Rule]:
    """Parse ``priority<TAB>field~pattern<TAB>technique_id`` rules.

    Rules are applied by ascending priority, file order breaking ties.
    """
    rules = []
    for idx, (i, line) in enumerate(_data_lines(lines)):
        parts = line.split("\t")
        try:
            if len(parts) != 3 or "~" not in parts[1]:
                raise ValueError("expected priority<TAB>field~pattern<TAB>technique_id")
            prio = int(parts[0])
            fld, pat = parts[1].split("~", 1)
            tid = parts[2].strip()
            if not is_technique(tid):
                raise ValueError(f"malformed technique id {tid!r}")
            rules.append(Rule(prio, fld.strip(), re.compile(pat), tid))
        except (ValueError, re.error) as exc:
            raise AnnotationError(f"rule {idx} (line {i}): {exc}") from None
    rules.sort(key=lambda r: r.priority)
    return rules


def rule_annotate(g: ProvenanceGraph, report: AnomalyReport, rules: Iterable[Rule],
                  tmap: TacticMap | None = None) -> TtpAnnotation:
    tmap = tmap if tmap is not None else TacticMap.load()
    rules = list(rules)
    labels = {}
    for node in sorted(report.abnormal):
        if node not in g.nodes:
            continue
        for r in rules:
            if r.matches(g, node):
                labels[node] = r.technique
                break
    return _finish(labels, report, tmap)
