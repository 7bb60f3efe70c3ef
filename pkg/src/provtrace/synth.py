"""Synthetic attack scenarios embedded in benign provenance background.

The generator is an evaluation harness, not a model of real workloads:

* benign activity is a forest of process trees that read shared config
  files, write private files and talk to shared server sockets;
* the attack is a causally ordered chain of entities, one per technique,
  whose links use bursts of rarely seen operations (chmod, copy, start) so an
  unsupervised detector can spot them; the last two stages branch from the
  same process, giving the scenario two leaves;
* a fraction of benign processes receive one or two rare events ("noise").

Attack entities only touch each other, so no benign path leads into or out
of the attack chain.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from .evaluation import GroundTruth
from .pattern import AttSpt
from .ttp import TacticMap

_PROC_NAMES = ["bash", "python3", "cron", "sshd", "nginx", "postgres", "java", "node",
               "systemd-journal", "rsyslogd", "dbus-daemon", "vim", "make", "gcc", "git"]
_ATTACK_NAMES = ["drakon", "sh", "implant", "loader", "pwdump", "tcpdump", "curl", "xmr"]


@dataclass(frozen=True)
class SynthSpec:
    chain_len: int = 6
    benign: int = 200
    noise: float = 0.05
    seed: int = 0
    techniques: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.chain_len < 2:
            raise ValueError("chain_len must be >= 2")
        if self.benign < 0:
            raise ValueError("benign must be >= 0")
        if not 0.0 <= self.noise < 1.0:
            raise ValueError("noise must be in [0, 1)")


@dataclass
class SynthResult:
    records: list[dict[str, Any]]
    annotations: list[tuple[str, str]]
    ground_truth: GroundTruth
    techniques: tuple[str, ...]

    def events_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in self.records)

    def annotations_tsv(self) -> str:
        return "".join(f"{n}\t{t}\n" for n, t in self.annotations)

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"events": out / "events.jsonl", "annotations": out / "annotations.tsv",
                 "ground_truth": out / "gt.json"}
        paths["events"].write_text(self.events_jsonl())
        paths["annotations"].write_text(self.annotations_tsv())
        self.ground_truth.save(paths["ground_truth"])
        return paths


def sample_chain(attspt: AttSpt, length: int, rng: random.Random) -> tuple[str, ...]:
    """Prefix of a randomly chosen technique-tree branch of at least ``length`` steps."""
    branches = [b for b in attspt.technique_pt.branches() if len(b) >= length]
    if not branches:
        raise ValueError(f"no pattern-tree branch has {length} techniques")
    return tuple(rng.choice(sorted(branches))[:length])


class _Emitter:
    def __init__(self) -> None:
        self.records: list[dict[str, Any]] = []

    def emit(self, ts: int, op: str, subj: dict, obj: dict) -> None:
        self.records.append({"ts": ts, "op": op, "subject": subj, "object": obj})


def _proc(pid: int, name: str) -> dict:
    return {"kind": "Process", "id": f"proc:{pid}:{name}", "name": name,
            "attrs": {"PID": str(pid), "Name": name, "Cmd": f"/usr/bin/{name}"}}


def _file(path: str) -> dict:
    return {"kind": "File", "id": f"file:{path}", "name": path, "attrs": {"Path": path}}


def _sock(ip: str, port: int) -> dict:
    return {"kind": "Socket", "id": f"sock:{ip}:{port}", "name": f"{ip}:{port}",
            "attrs": {"IP": ip, "Port": str(port)}}


def _attack_kinds(n: int) -> list[str]:
    if n < 4:
        return (["Socket", "Process", "File"] + ["Process"] * n)[:n]
    kinds = ["Socket"]
    while len(kinds) < n - 3:
        kinds.append("File" if kinds[-1] == "Process" else "Process")
    return kinds + ["Process", "File", "Socket"]


# (src kind, dst kind) -> operation burst for one attack link; direction is information flow
_ATTACK_OPS = {
    ("Socket", "Process"): ["recvfrom"] * 3,
    ("Process", "File"): ["write", "write", "chmod", "chmod"],
    ("File", "Process"): ["read", "read"],
    ("Process", "Process"): ["start", "clone", "clone"],
    ("Process", "Socket"): ["sendto", "sendto", "copy", "copy"],
}


def generate(spec: SynthSpec, attspt: AttSpt | None = None, tmap: TacticMap | None = None) -> SynthResult:
    rng = random.Random(spec.seed)
    tmap = tmap if tmap is not None else TacticMap.load()
    if spec.techniques is not None:
        techniques = tuple(spec.techniques)
    else:
        if attspt is None:
            from .pattern import load_sequences
            attspt = AttSpt.build(load_sequences(), tmap)
        techniques = sample_chain(attspt, spec.chain_len, rng)
    if spec.chain_len > len(techniques):
        raise ValueError(f"chain of {spec.chain_len} exceeds technique sequence of {len(techniques)}")
    techniques = techniques[:spec.chain_len]

    em = _Emitter()
    horizon = 10_000_000 * max(1, spec.benign)
    background = _background(em, spec.benign, rng, horizon)
    noise_nodes = _inject_noise(em, background, spec, rng, horizon)
    attack_ids, attack_edges = _attack_chain(em, techniques, rng, horizon)

    em.records.sort(key=lambda r: r["ts"])
    annotations = list(zip(attack_ids, techniques))
    known = sorted(t for t, _ in tmap.items())
    for n in noise_nodes:
        annotations.append((n, rng.choice(known)))
    annotations.sort()
    gt = GroundTruth(frozenset(attack_ids), frozenset(attack_edges))
    return SynthResult(em.records, annotations, gt, techniques)


def _background(em: _Emitter, budget: int, rng: random.Random, horizon: int) -> dict[str, Any]:
    n_cfg = budget // 20
    n_srv = budget // 40
    configs = [_file(f"/etc/app{i}.conf") for i in range(n_cfg)]
    servers = [_sock(f"10.0.{i // 250}.{i % 250 + 1}", 443) for i in range(n_srv)]
    remaining = budget - n_cfg - n_srv
    used: set[str] = set()
    procs: list[dict] = []
    owned: dict[str, list[dict]] = {}
    pid = [1000]

    def t() -> int:
        return rng.randrange(horizon)

    def session(parent: dict | None, depth: int, not_before: int = 0) -> None:
        nonlocal remaining
        if remaining <= 0:
            return
        name = rng.choice(_PROC_NAMES)
        pid[0] += 1
        p = _proc(pid[0], name)
        remaining -= 1
        procs.append(p)
        start = not_before + rng.randrange(1, horizon // 8) if parent is not None else t()
        if parent is not None:
            em.emit(start, "clone", parent, p)
        for cfg in rng.sample(configs, k=min(len(configs), rng.randint(1, 2))):
            em.emit(start + rng.randrange(1, 1000), "read", p, cfg)
            used.add(cfg["id"])
        if remaining > 0 and rng.random() < 0.7:
            f = _file(f"/var/log/{name}.{pid[0]}.log")
            remaining -= 1
            owned.setdefault(p["id"], []).append(f)
            for _ in range(rng.randint(1, 2)):
                em.emit(start + rng.randrange(1000, 100_000), "write", p, f)
        if servers and rng.random() < 0.4:
            s = rng.choice(servers)
            em.emit(start + rng.randrange(1000, 100_000), "sendto", p, s)
            used.add(s["id"])
            if rng.random() < 0.5:
                em.emit(start + rng.randrange(100_000, 200_000), "recvfrom", p, s)
        if depth < 3:
            for _ in range(rng.choice([0, 0, 1, 1, 2])):
                session(p, depth + 1, start)

    while remaining > 0:
        session(None, 0)
    for ent in configs + servers:
        if ent["id"] not in used and procs:
            op = "read" if ent["kind"] == "File" else "sendto"
            em.emit(t(), op, rng.choice(procs), ent)
    return {"procs": procs, "owned": owned}


def _inject_noise(em: _Emitter, bg: dict[str, Any], spec: SynthSpec,
                  rng: random.Random, horizon: int) -> list[str]:
    candidates = sorted(p["id"] for p in bg["procs"] if p["id"] in bg["owned"])
    k = min(len(candidates), round(spec.noise * spec.benign))
    by_id = {p["id"]: p for p in bg["procs"]}
    chosen = sorted(rng.sample(candidates, k))
    for pid in chosen:
        f = bg["owned"][pid][0]
        for _ in range(rng.randint(1, 2)):
            em.emit(rng.randrange(horizon), "chmod", by_id[pid], f)
    return chosen


def _attack_chain(em: _Emitter, techniques: Sequence[str], rng: random.Random,
                  horizon: int) -> tuple[list[str], list[tuple[str, str]]]:
    n = len(techniques)
    kinds = _attack_kinds(n)
    ents = []
    for i, kind in enumerate(kinds):
        if kind == "Process":
            name = rng.choice(_ATTACK_NAMES)
            ents.append(_proc(60000 + i, name))
        elif kind == "File":
            ents.append(_file(f"/tmp/.cache/{rng.getrandbits(32):08x}"))
        else:
            ents.append(_sock(f"203.0.113.{rng.randint(2, 250)}", 4000 + i))
    links = [(i, i + 1) for i in range(n - 1)]
    if n >= 4:
        # final two stages both branch from stage n-3
        links[-1] = (n - 3, n - 1)
    ts = rng.randrange(horizon // 4, horizon // 2)
    step = max(1, horizon // (4 * n * 8))
    for a, b in links:
        src, dst = ents[a], ents[b]
        for op in _ATTACK_OPS[(kinds[a], kinds[b])]:
            ts += rng.randrange(1, step)
            if op in ("read", "recvfrom"):
                em.emit(ts, op, dst, src)
            else:
                em.emit(ts, op, src, dst)
    ids = [e["id"] for e in ents]
    return ids, [(ids[a], ids[b]) for a, b in links]
