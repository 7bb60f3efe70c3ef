"""Provenance graph model and audit-log ingestion.

Nodes are system entities (processes, files, sockets); edges are timestamped
system events. Edges point in the direction information flows, so ``read`` and
``recvfrom`` run object -> subject and every other operation runs
subject -> object. Cycles that real logs produce are broken by forking the
receiving node into a fresh version (``<id>#v<k>``).
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

log = logging.getLogger(__name__)


class EntityKind(str, Enum):
    PROCESS = "Process"
    FILE = "File"
    SOCKET = "Socket"


OPERATIONS: tuple[str, ...] = (
    "read", "write", "chmod",
    "start", "end", "execve", "clone",
    "sendto", "recvfrom", "copy",
)

# object kind -> operations a Process subject may perform on it
LEGAL_OPS: dict[EntityKind, frozenset[str]] = {
    EntityKind.FILE: frozenset({"read", "write", "chmod"}),
    EntityKind.PROCESS: frozenset({"start", "end", "execve", "clone"}),
    EntityKind.SOCKET: frozenset({"sendto", "recvfrom", "copy"}),
}

# operations where data moves from the object into the subject
INBOUND_OPS = frozenset({"read", "recvfrom"})

REQUIRED_ATTRS: dict[EntityKind, tuple[str, ...]] = {
    EntityKind.PROCESS: ("PID", "Name"),
    EntityKind.FILE: ("Path",),
    EntityKind.SOCKET: ("IP",),
}

VERSION_SEP = "#v"


class ProvenanceError(ValueError):
    """Raised for malformed or illegal audit records."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownNodeError(KeyError):
    pass


@dataclass(frozen=True)
class Entity:
    id: str
    kind: EntityKind
    name: str = ""
    attrs: Mapping[str, str] = field(default_factory=dict, compare=False, hash=False)

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "kind": self.kind.value, "name": self.name,
                "attrs": dict(sorted(self.attrs.items()))}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Entity":
        return cls(str(d["id"]), EntityKind(d["kind"]), str(d.get("name", "")),
                   {str(k): str(v) for k, v in (d.get("attrs") or {}).items()})


@dataclass(frozen=True)
class Event:
    """One system event, stored as a directed edge between graph nodes.

    ``subject``/``object`` are the node ids as logged; ``src``/``dst`` give the
    information-flow direction used by every graph algorithm.
    """

    subject: str
    object: str
    op: str
    ts: int
    seq: int = 0

    @property
    def src(self) -> str:
        return self.object if self.op in INBOUND_OPS else self.subject

    @property
    def dst(self) -> str:
        return self.subject if self.op in INBOUND_OPS else self.object

    def to_dict(self) -> dict[str, Any]:
        return {"subject": self.subject, "object": self.object, "op": self.op,
                "ts": self.ts, "seq": self.seq}


def _distinct(edges: Iterable[Event], end: str) -> tuple[str, ...]:
    first: dict[str, tuple[int, int]] = {}
    for e in edges:
        first.setdefault(getattr(e, end), (e.ts, e.seq))
    return tuple(sorted(first, key=lambda n: (first[n], n)))


def base_id(node_id: str) -> str:
    """Strip the version suffix: ``f1#v2`` -> ``f1``."""
    return node_id.split(VERSION_SEP, 1)[0]


class ProvenanceGraph:
    """Immutable provenance graph with ts-sorted in/out adjacency indexes."""

    def __init__(self, nodes: Mapping[str, Entity], edges: Iterable[Event]):
        self.nodes: dict[str, Entity] = dict(nodes)
        self.edges: tuple[Event, ...] = tuple(sorted(edges, key=lambda e: (e.ts, e.seq)))
        out: dict[str, list[Event]] = {n: [] for n in self.nodes}
        inc: dict[str, list[Event]] = {n: [] for n in self.nodes}
        for e in self.edges:
            if e.src not in out or e.dst not in inc:
                raise ProvenanceError(f"edge {e.src}->{e.dst} references unknown node")
            out[e.src].append(e)
            inc[e.dst].append(e)
        self._out = {k: tuple(v) for k, v in out.items()}
        self._in = {k: tuple(v) for k, v in inc.items()}
        self._succ = {k: _distinct(v, "dst") for k, v in self._out.items()}
        self._pred = {k: _distinct(v, "src") for k, v in self._in.items()}

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id: object) -> bool:
        return node_id in self.nodes

    def _check(self, node_id: str) -> None:
        if node_id not in self.nodes:
            raise UnknownNodeError(node_id)

    def out_edges(self, node_id: str) -> tuple[Event, ...]:
        self._check(node_id)
        return self._out[node_id]

    def in_edges(self, node_id: str) -> tuple[Event, ...]:
        self._check(node_id)
        return self._in[node_id]

    def successors(self, node_id: str) -> tuple[str, ...]:
        """Distinct successors ordered by (first event ts, node id)."""
        self._check(node_id)
        return self._succ[node_id]

    def predecessors(self, node_id: str) -> tuple[str, ...]:
        self._check(node_id)
        return self._pred[node_id]

    def neighbors(self, node_id: str) -> set[str]:
        return {e.dst for e in self.out_edges(node_id)} | {e.src for e in self.in_edges(node_id)}

    def entity_of(self, node_id: str) -> str:
        self._check(node_id)
        return base_id(node_id)

    def topological_order(self) -> list[str]:
        """Kahn's algorithm; raises ProvenanceError if a cycle remains."""
        indeg = {n: len(self.predecessors(n)) for n in self.nodes}
        ready = sorted(n for n, d in indeg.items() if d == 0)
        order: list[str] = []
        while ready:
            n = ready.pop()
            order.append(n)
            for m in self.successors(n):
                indeg[m] -= 1
                if indeg[m] == 0:
                    ready.append(m)
        if len(order) != len(self.nodes):
            raise ProvenanceError("graph contains a cycle")
        return order

    def to_dict(self) -> dict[str, Any]:
        return {
            "nodes": [self.nodes[n].to_dict() for n in sorted(self.nodes)],
            "edges": [e.to_dict() for e in self.edges],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ProvenanceGraph":
        nodes = {}
        for nd in d["nodes"]:
            ent = Entity.from_dict(nd)
            nodes[ent.id] = ent
        edges = [Event(str(e["subject"]), str(e["object"]), str(e["op"]), int(e["ts"]),
                       int(e.get("seq", 0))) for e in d["edges"]]
        return cls(nodes, edges)


def degrees(g: ProvenanceGraph, node_id: str) -> tuple[int, int]:
    """Return ``(in_degree, out_degree)`` counting every event edge."""
    return len(g.in_edges(node_id)), len(g.out_edges(node_id))


# ---------------------------------------------------------------------------
# ingestion


@dataclass
class _Record:
    line: int
    ts: int
    op: str
    subject: dict[str, Any]
    object: dict[str, Any]


def _parse_side(raw: Any, line: int, role: str) -> dict[str, Any]:
    if not isinstance(raw, Mapping):
        raise ProvenanceError(f"{role} must be an object", line)
    try:
        kind = EntityKind(raw["kind"])
    except (KeyError, ValueError):
        raise ProvenanceError(f"{role} has missing or unknown kind {raw.get('kind')!r}", line) from None
    attrs = raw.get("attrs") or {}
    if not isinstance(attrs, Mapping):
        raise ProvenanceError(f"{role}.attrs must be an object", line)
    attrs = {str(k): str(v) for k, v in attrs.items()}
    name = str(raw.get("name") or "")
    if kind is EntityKind.PROCESS and name and "Name" not in attrs:
        attrs["Name"] = name
    missing = [a for a in REQUIRED_ATTRS[kind] if a not in attrs]
    if missing:
        raise ProvenanceError(f"{role} ({kind.value}) missing attrs {missing}", line)
    ident = raw.get("id")
    return {"kind": kind, "id": None if ident in (None, "") else str(ident),
            "name": name or attrs.get("Name") or attrs.get("Path") or attrs.get("IP", ""),
            "attrs": attrs}


def _parse_record(obj: Any, line: int) -> _Record:
    if not isinstance(obj, Mapping):
        raise ProvenanceError("record is not a JSON object", line)
    for key in ("ts", "op", "subject", "object"):
        if key not in obj:
            raise ProvenanceError(f"missing key {key!r}", line)
    ts = obj["ts"]
    if isinstance(ts, bool) or not isinstance(ts, int):
        try:
            ts = int(str(ts))
        except ValueError:
            raise ProvenanceError(f"ts must be an integer, got {obj['ts']!r}", line) from None
    op = str(obj["op"])
    if op not in OPERATIONS:
        raise ProvenanceError(f"unknown operation {op!r}", line)
    subj = _parse_side(obj["subject"], line, "subject")
    objt = _parse_side(obj["object"], line, "object")
    if subj["kind"] is not EntityKind.PROCESS or op not in LEGAL_OPS[objt["kind"]]:
        raise ProvenanceError(
            f"illegal event ({subj['kind'].value}, {op}, {objt['kind'].value})", line)
    return _Record(line, ts, op, subj, objt)


def iter_jsonl(lines: Iterable[str]) -> Iterator[tuple[int, Any]]:
    for i, text in enumerate(lines, start=1):
        if not text.strip():
            continue
        try:
            yield i, json.loads(text)
        except json.JSONDecodeError as exc:
            raise ProvenanceError(f"invalid JSON ({exc.msg})", i) from None


CSV_COLUMNS = ("ts", "op",
               "subject_kind", "subject_id", "subject_name", "subject_attrs",
               "object_kind", "object_id", "object_name", "object_attrs")


def _split_attrs(text: str, line: int) -> dict[str, str]:
    out = {}
    for part in filter(None, (text or "").split(";")):
        if "=" not in part:
            raise ProvenanceError(f"bad attr {part!r} (want key=value)", line)
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def iter_csv(lines: Iterable[str]) -> Iterator[tuple[int, Any]]:
    """CSV with the same fields as the JSONL form; attrs as ``k=v;k=v``."""
    reader = csv.DictReader(lines)
    missing = [c for c in CSV_COLUMNS if c not in (reader.fieldnames or [])]
    if missing:
        raise ProvenanceError(f"csv header missing columns {missing}", 1)
    for row in reader:
        line = reader.line_num
        rec = {"ts": row["ts"], "op": row["op"]}
        for side in ("subject", "object"):
            rec[side] = {"kind": row[f"{side}_kind"], "id": row[f"{side}_id"],
                         "name": row[f"{side}_name"],
                         "attrs": _split_attrs(row[f"{side}_attrs"], line)}
        yield line, rec


class _Builder:
    def __init__(self) -> None:
        self.entities: dict[str, Entity] = {}     # entity id -> first-seen entity
        self.current: dict[str, str] = {}         # entity id -> current node id
        self.n_versions: dict[str, int] = {}
        self.nodes: dict[str, Entity] = {}
        self.out: dict[str, list[str]] = {}
        self.has_in: set[str] = set()
        self.edges: list[Event] = []
        self.proc_keys: dict[tuple[str, str], str] = {}
        self.ended: set[str] = set()

    def _identity(self, side: dict[str, Any], ts: int) -> str:
        if side["id"] is not None:
            return side["id"]
        attrs = side["attrs"]
        kind = side["kind"]
        if kind is EntityKind.FILE:
            return f"file:{attrs['Path']}"
        if kind is EntityKind.SOCKET:
            port = attrs.get("Port")
            return f"sock:{attrs['IP']}" + (f":{port}" if port else "")
        key = (attrs["PID"], attrs["Name"])
        ident = self.proc_keys.get(key)
        if ident is None or ident in self.ended:
            # a PID reused after its process ended is a new process
            ident = f"proc:{key[0]}:{key[1]}@{ts}"
            self.proc_keys[key] = ident
        return ident

    def _resolve(self, side: dict[str, Any], ts: int, line: int) -> str:
        ident = self._identity(side, ts)
        ent = self.entities.get(ident)
        if ent is None:
            ent = Entity(ident, side["kind"], side["name"], side["attrs"])
            self.entities[ident] = ent
            self.current[ident] = ident
            self.n_versions[ident] = 0
            self._add_node(ident, ent)
        else:
            if ent.kind is not side["kind"]:
                raise ProvenanceError(f"entity {ident!r} seen as {ent.kind.value} and {side['kind'].value}", line)
            if dict(ent.attrs) != side["attrs"] and any(
                    k in ent.attrs and ent.attrs[k] != v for k, v in side["attrs"].items()):
                log.warning("line %d: conflicting attrs for %s, keeping first", line, ident)
        return self.current[ident]

    def _add_node(self, node_id: str, ent: Entity) -> None:
        self.nodes[node_id] = Entity(node_id, ent.kind, ent.name, ent.attrs)
        self.out[node_id] = []

    def _reaches(self, start: str, target: str) -> bool:
        if start == target:
            return True
        if not self.out[start] or target not in self.has_in:
            return False
        seen = {start}
        stack = [start]
        while stack:
            for m in self.out[stack.pop()]:
                if m == target:
                    return True
                if m not in seen:
                    seen.add(m)
                    stack.append(m)
        return False

    def _fork(self, node_id: str) -> str:
        ident = base_id(node_id)
        k = self.n_versions[ident] + 1
        self.n_versions[ident] = k
        new_id = f"{ident}{VERSION_SEP}{k}"
        self._add_node(new_id, self.entities[ident])
        self.current[ident] = new_id
        return new_id

    def add(self, rec: _Record) -> None:
        subj = self._resolve(rec.subject, rec.ts, rec.line)
        obj = self._resolve(rec.object, rec.ts, rec.line)
        inbound = rec.op in INBOUND_OPS
        src, dst = (obj, subj) if inbound else (subj, obj)
        if self._reaches(dst, src):
            dst = self._fork(dst)
            if inbound:
                subj = dst
            else:
                obj = dst
        self.out[src].append(dst)
        self.has_in.add(dst)
        self.edges.append(Event(subj, obj, rec.op, rec.ts, len(self.edges)))
        if rec.op == "end":
            self.ended.add(base_id(obj))

    def build(self) -> ProvenanceGraph:
        return ProvenanceGraph(self.nodes, self.edges)


def ingest_events(stream: Iterable[Any]) -> ProvenanceGraph:
    """Build a provenance graph from event records.

    ``stream`` yields either parsed records (dicts) or ``(line_no, record)``
    pairs as produced by :func:`iter_jsonl` / :func:`iter_csv`. Records are
    replayed in (ts, input order).
    """
    records = []
    for i, item in enumerate(stream, start=1):
        if isinstance(item, tuple) and len(item) == 2 and isinstance(item[0], int):
            line, obj = item
        else:
            line, obj = i, item
        records.append(_parse_record(obj, line))
    records.sort(key=lambda r: r.ts)  # stable: ties keep input order
    b = _Builder()
    for rec in records:
        b.add(rec)
    return b.build()


def load_events(path: str | Path, fmt: str = "jsonl") -> ProvenanceGraph:
    text = Path(path).read_text(encoding="utf-8")
    if fmt == "jsonl":
        return ingest_events(iter_jsonl(text.splitlines()))
    if fmt == "csv":
        return ingest_events(iter_csv(io.StringIO(text)))
    raise ValueError(f"unknown event format {fmt!r}")


def load_graph(path: str | Path) -> ProvenanceGraph:
    return ProvenanceGraph.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def from_edge_list(edges: Iterable[tuple], nodes: Iterable[str] = ()) -> ProvenanceGraph:
    """Build a Process-only graph from ``(src, dst[, ts])`` tuples.

    Handy for hand-drawn fixtures; every edge becomes a ``clone`` event and
    missing timestamps default to input position. No versioning is applied.
    """
    ents: dict[str, Entity] = {}

    def ent(n: str) -> None:
        if n not in ents:
            ents[n] = Entity(n, EntityKind.PROCESS, n, {"PID": n, "Name": n})

    for n in nodes:
        ent(n)
    evs = []
    for i, e in enumerate(edges):
        src, dst = e[0], e[1]
        ts = e[2] if len(e) > 2 else i
        ent(src)
        ent(dst)
        evs.append(Event(src, dst, "clone", ts, i))
    return ProvenanceGraph(ents, evs)
