"""Technique sequence extraction and the technique/tactic pattern trees."""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

from .ttp import TacticMap, is_technique

log = logging.getLogger(__name__)

FORMAT_NAME = "attspt"
FORMAT_VERSION = 1

_TECHNIQUE_TOKEN = re.compile(r"(?<![A-Za-z0-9])T\d{4}(?:\.\d{3})?(?![0-9])")


class PatternError(ValueError):
    pass


@dataclass(frozen=True)
class TechniqueSequence:
    techniques: tuple[str, ...]
    source: str = ""

    def __post_init__(self) -> None:
        if not self.techniques:
            raise PatternError("technique sequence must be non-empty")
        bad = [t for t in self.techniques if not is_technique(t)]
        if bad:
            raise PatternError(f"malformed technique ids {bad}")

    def __len__(self) -> int:
        return len(self.techniques)

    def __iter__(self) -> Iterator[str]:
        return iter(self.techniques)


def collapse_repeats(items: Iterable[str]) -> list[str]:
    out: list[str] = []
    for x in items:
        if not out or out[-1] != x:
            out.append(x)
    return out


def extract_sequences(text: str, tmap: TacticMap | None = None,
                      source: str = "") -> list[TechniqueSequence]:
    """Scan one report for technique ids in textual order.

    Adjacent repeats collapse. When ``tmap`` is given, ids it cannot map to a
    tactic are dropped. Returns ``[]`` or a single sequence.
    """
    ids = _TECHNIQUE_TOKEN.findall(text)
    if tmap is not None:
        dropped = sorted({t for t in ids if t not in tmap})
        if dropped:
            log.info("%s: dropping unmapped techniques %s", source or "report", dropped)
        ids = [t for t in ids if t in tmap]
    ids = collapse_repeats(ids)
    return [TechniqueSequence(tuple(ids), source)] if ids else []


def extract_from_dir(directory: str | Path, tmap: TacticMap | None = None) -> list[TechniqueSequence]:
    """One sequence per ``*.txt``/``*.md``/``*.html`` report, in file-name order."""
    out = []
    for p in sorted(Path(directory).iterdir()):
        if p.is_file() and p.suffix.lower() in {".txt", ".md", ".html", ".htm"}:
            out.extend(extract_sequences(p.read_text(encoding="utf-8", errors="replace"), tmap, p.name))
    return out


def parse_sequences(lines: Iterable[str], source: str = "sequences") -> list[TechniqueSequence]:
    """Parse ``T1589->T1566->T1059`` lines; blank lines and ``#`` comments skipped."""
    out = []
    for i, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split("->")]
        try:
            out.append(TechniqueSequence(tuple(parts), f"{source}:{i}"))
        except PatternError as exc:
            raise PatternError(f"{source} line {i}: {exc}") from None
    return out


def load_sequences(path: str | Path | None = None) -> list[TechniqueSequence]:
    if path is None:
        text = resources.files("provtrace.data").joinpath("reference_sequences.txt").read_text()
        return parse_sequences(text.splitlines(), "reference")
    return parse_sequences(Path(path).read_text(encoding="utf-8").splitlines(), str(path))


def format_sequence(seq: Iterable[str]) -> str:
    return "->".join(seq)


class PatternNode:
    __slots__ = ("label", "children", "parent", "depth")

    def __init__(self, label: str | None, parent: "PatternNode | None" = None):
        self.label = label
        self.children: dict[str, PatternNode] = {}
        self.parent = parent
        self.depth = 0 if parent is None else parent.depth + 1

    def __repr__(self) -> str:
        return f"PatternNode({self.label!r}, children={list(self.children)})"


class PatternTree:
    """Prefix tree of label sequences under an unlabeled root."""

    def __init__(self, sequences: Iterable[Sequence[str]] = ()):
        self.root = PatternNode(None)
        self._by_label: dict[str, list[PatternNode]] = {}
        self._size = 1
        for s in sequences:
            self.insert(s)

    def insert(self, seq: Sequence[str]) -> None:
        node = self.root
        for label in seq:
            child = node.children.get(label)
            if child is None:
                child = PatternNode(label, node)
                node.children[label] = child
                self._by_label.setdefault(label, []).append(child)
                self._size += 1
            node = child

    def walk(self, seq: Sequence[str]) -> PatternNode | None:
        """Node reached by following ``seq`` from the root, or None."""
        node = self.root
        for label in seq:
            node = node.children.get(label)
            if node is None:
                return None
        return node

    def __len__(self) -> int:
        return self._size

    def __contains__(self, seq: object) -> bool:
        return isinstance(seq, (list, tuple)) and self.walk(seq) is not None

    def occurrences(self, label: str) -> list[PatternNode]:
        return self._by_label.get(label, [])

    def labels(self) -> set[str]:
        return set(self._by_label)

    def nodes(self) -> Iterator[PatternNode]:
        stack = [self.root]
        while stack:
            n = stack.pop()
            yield n
            stack.extend(reversed(list(n.children.values())))

    def branches(self) -> list[tuple[str, ...]]:
        """Every root-to-leaf label path, in insertion order."""
        out = []

        def rec(n: PatternNode, prefix: tuple[str, ...]) -> None:
            if not n.children and n is not self.root:
                out.append(prefix)
            for c in n.children.values():
                rec(c, prefix + (c.label,))

        rec(self.root, ())
        return out

    def to_dict(self) -> dict[str, Any]:
        def enc(n: PatternNode) -> dict[str, Any]:
            return {"label": n.label,
                    "children": [enc(n.children[k]) for k in sorted(n.children)]}
        return enc(self.root)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PatternTree":
        if d.get("label") is not None:
            raise PatternError("pattern tree root must be unlabeled")
        tree = cls()

        def dec(node: PatternNode, children: list) -> None:
            for c in children:
                label = c["label"]
                if not isinstance(label, str) or label in node.children:
                    raise PatternError(f"bad or duplicate child label {label!r}")
                child = PatternNode(label, node)
                node.children[label] = child
                tree._by_label.setdefault(label, []).append(child)
                tree._size += 1
                dec(child, c.get("children", []))

        dec(tree.root, d.get("children", []))
        return tree

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PatternTree):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def pretty(self) -> str:
        lines = []

        def rec(n: PatternNode, indent: int) -> None:
            for k in n.children:
                lines.append("  " * indent + k)
                rec(n.children[k], indent + 1)

        rec(self.root, 0)
        return "\n".join(lines)


def build_technique_pt(sequences: Iterable[TechniqueSequence | Sequence[str]]) -> PatternTree:
    return PatternTree(tuple(s) for s in sequences)


def tactic_sequence(techniques: Iterable[str], tmap: TacticMap) -> list[str]:
    """Map techniques to tactics and collapse consecutive repeats; unmapped ids drop out."""
    out = []
    for t in techniques:
        tactic = tmap.tactic_of(t)
        if tactic is None:
            log.debug("technique %s has no tactic; skipped", t)
            continue
        out.append(tactic)
    return collapse_repeats(out)


def derive_tactic_pt(source: PatternTree | Iterable[TechniqueSequence | Sequence[str]],
                     tmap: TacticMap) -> PatternTree:
    """Tactic pattern tree from a technique tree (via its branches) or raw sequences.

    Mapping plus repeat-collapse preserves prefixes, so the branches of the
    technique tree carry everything its inserted sequences would.
    """
    seqs = source.branches() if isinstance(source, PatternTree) else [tuple(s) for s in source]
    tree = PatternTree()
    for s in seqs:
        ts = tactic_sequence(s, tmap)
        if ts:
            tree.insert(ts)
    return tree


@dataclass
class AttSpt:
    technique_pt: PatternTree
    tactic_pt: PatternTree

    @classmethod
    def build(cls, sequences: Iterable[TechniqueSequence | Sequence[str]], tmap: TacticMap) -> "AttSpt":
        tpt = build_technique_pt(sequences)
        return cls(tpt, derive_tactic_pt(tpt, tmap))

    def to_dict(self) -> dict[str, Any]:
        return {"format": FORMAT_NAME, "version": FORMAT_VERSION,
                "technique_pt": self.technique_pt.to_dict(),
                "tactic_pt": self.tactic_pt.to_dict()}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "AttSpt":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise PatternError(f"malformed ATT-SPT file: {exc.msg}") from None
        if not isinstance(d, dict) or d.get("format") != FORMAT_NAME:
            raise PatternError("not an ATT-SPT file")
        if d.get("version") != FORMAT_VERSION:
            raise PatternError(f"unsupported ATT-SPT version {d.get('version')!r}")
        try:
            return cls(PatternTree.from_dict(d["technique_pt"]), PatternTree.from_dict(d["tactic_pt"]))
        except (KeyError, TypeError, AttributeError) as exc:
            raise PatternError(f"malformed ATT-SPT file: {exc}") from None

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: str | Path) -> "AttSpt":
        return cls.loads(Path(path).read_text(encoding="utf-8"))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AttSpt):
            return NotImplemented
        return self.technique_pt == other.technique_pt and self.tactic_pt == other.tactic_pt
