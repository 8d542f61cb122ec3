"""Checkpoint strategies, the checkpoint database and the cache flush layer.

A checkpoint is written by every participating node at the same
application step.  Each strategy is a fixed sequence of stages; within a
stage all nodes act concurrently and share resources through the cost
model, and a stage starts for a node once every actor it needs is ready.
Timing runs on *nominal* sizes (the modeled checkpoint volume) while the
bytes actually stored are the sampled payloads handed in by the caller.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import aggregate
from .cluster_model import GLOBAL, ClusterState, Endpoint, Route, TierKind, Transfer
from .crc import crc32c, crc_hex
from .errors import (
    CapacityError,
    CrcMismatch,
    FlushError,
    HopError,
    StrategyUnsupported,
    TierFull,
    UnknownNode,
)
from .simnet import Engine, Event, global_loc, nam_loc, node_loc, parse_nam_loc
from .xorcode import chunk_size, rotated_encode, xor_fold

logger = logging.getLogger(__name__)


class Strategy(str, enum.Enum):
    SINGLE = "single"
    PARTNER = "partner"
    BUDDY = "buddy"
    DIST_XOR = "distxor"
    NAM_XOR = "namxor"

    @classmethod
    def parse(cls, name: "str | Strategy") -> "Strategy":
        if isinstance(name, Strategy):
            return name
        key = name.strip().lower().replace("_", "").replace("-", "")
        for s in cls:
            if s.value == key:
                return s
        raise ValueError(f"unknown strategy {name!r}")

    @property
    def uses_partner(self) -> bool:
        return self in (Strategy.PARTNER, Strategy.BUDDY)

    @property
    def uses_xor(self) -> bool:
        return self in (Strategy.DIST_XOR, Strategy.NAM_XOR)


class SetState(str, enum.Enum):
    PENDING = "PENDING"
    VALID = "VALID"
    FLUSHED = "FLUSHED"
    INVALID = "INVALID"


class FlushMode(str, enum.Enum):
    SYNC = "sync"
    ASYNC = "async"


@dataclass(frozen=True)
class PayloadDescriptor:
    node: int
    bytes: int
    crc32c: int
    location: str
    nominal: int


@dataclass(frozen=True)
class RedundancyRecord:
    partner: int | None = None
    copy_loc: str | None = None
    group: int | None = None
    parity_loc: str | None = None


@dataclass(frozen=True)
class XorGroup:
    group_id: int
    members: tuple[int, ...]
    block_len: int
    nominal_block: int
    # member -> parity slice (rotated layout) or the single NAM region
    parity_locations: Mapping[int, str]
    rotated: bool

    @property
    def k(self) -> int:
        return len(self.members)


@dataclass
class CheckpointSet:
    set_id: int
    step: int
    strategy: Strategy
    members: dict[int, PayloadDescriptor] = field(default_factory=dict)
    redundancy: dict[int, RedundancyRecord] = field(default_factory=dict)
    state: SetState = SetState.PENDING
    global_locs: dict[int, str] = field(default_factory=dict)

    @property
    def nodes(self) -> tuple[int, ...]:
        return tuple(sorted(self.members))

    @property
    def payload_nominal(self) -> int:
        return sum(m.nominal for m in self.members.values())

    def groups(self) -> dict[int, XorGroup]:
        """XOR groups, rebuilt from the per-node records."""
        by_gid: dict[int, list[int]] = {}
        for node in self.nodes:
            red = self.redundancy.get(node)
            if red is not None and red.group is not None:
                by_gid.setdefault(red.group, []).append(node)
        out = {}
        for gid, members in by_gid.items():
            rotated = self.strategy is Strategy.DIST_XOR
            out[gid] = XorGroup(
                group_id=gid,
                members=tuple(members),
                block_len=max(self.members[m].bytes for m in members),
                nominal_block=max(self.members[m].nominal for m in members),
                parity_locations={m: self.redundancy[m].parity_loc for m in members},
                rotated=rotated,
            )
        return out

    def group_of(self, node: int) -> XorGroup | None:
        red = self.redundancy.get(node)
        if red is None or red.group is None:
            return None
        return self.groups()[red.group]


# -- pure helpers ----------------------------------------------------------------------

def need_checkpoint(step: int, interval: int) -> bool:
    if interval < 1:
        raise ValueError("checkpoint interval must be >= 1")
    return step > 0 and step % interval == 0


def xor_encode(blocks: Sequence[bytes]) -> bytes:
    return xor_fold(blocks)


def partner_of(node: int, n_nodes: int, hop: int = 1) -> int:
    if not 1 <= hop < n_nodes:
        raise HopError(f"hop must satisfy 1 <= hop < {n_nodes}, got {hop}")
    if not 0 <= node < n_nodes:
        raise HopError(f"node {node} outside 0..{n_nodes - 1}")
    return (node + hop) % n_nodes


def form_groups(nodes: Sequence[int], k: int) -> list[tuple[int, ...]]:
    """Split ``nodes`` into consecutive groups of ``k``; a lone leftover joins the last group."""
    if k < 2:
        raise StrategyUnsupported("XOR groups need k >= 2")
    nodes = list(nodes)
    if len(nodes) < 2:
        raise StrategyUnsupported(f"XOR needs at least 2 nodes, got {len(nodes)}")
    groups = [tuple(nodes[i:i + k]) for i in range(0, len(nodes), k)]
    if len(groups[-1]) == 1:
        tail = groups.pop()
        groups[-1] = groups[-1] + tail
    return groups


def persistent_tier(cluster: ClusterState) -> TierKind:
    return TierKind.NVME if cluster.has_tier(TierKind.NVME) else TierKind.HDD


# -- stage plans ----------------------------------------------------------------------

@dataclass(frozen=True)
class Step:
    """One transfer of a stage; ``actors`` gate its start and absorb its duration."""

    transfer: Transfer
    actors: tuple[int, ...]
    label: str = ""


@dataclass
class Stage:
    name: str
    steps: list[Step] = field(default_factory=list)
    compute: dict[int, float] = field(default_factory=dict)


@dataclass
class Timing:
    t0: float
    clock: dict[int, float]
    stage_end: dict[str, float]
    ends: list[list[float]]

    def overhead(self) -> dict[int, float]:
        return {n: c - self.t0 for n, c in self.clock.items()}

    @property
    def elapsed(self) -> float:
        return max(self.clock.values()) - self.t0 if self.clock else 0.0

    def stage_durations(self) -> dict[str, float]:
        out, prev = {}, self.t0
        for name, end in self.stage_end.items():
            out[name] = end - prev
            prev = end
        return out


def run_stages(cluster: ClusterState, stages: Sequence[Stage], nodes: Iterable[int],
               t0: float = 0.0) -> Timing:
    clock = {n: t0 for n in nodes}
    stage_end: dict[str, float] = {}
    all_ends = []
    for stage in stages:
        durs = cluster.concurrent_times([s.transfer for s in stage.steps])
        ends = []
        updates: dict[int, float] = {}
        for s, d in zip(stage.steps, durs):
            start = max(clock[a] for a in s.actors)
            end = start + d
            ends.append(end)
            for a in s.actors:
                updates[a] = max(updates.get(a, clock[a]), end)
        clock.update(updates)
        for n, sec in stage.compute.items():
            clock[n] += sec
        all_ends.append(ends)
        stage_end[stage.name] = max(clock.values())
    return Timing(t0, clock, stage_end, all_ends)


def _ram(n: int) -> Endpoint:
    return Endpoint.at(n, TierKind.RAM)


def build_stages(cluster: ClusterState, strategy: Strategy, nominal: Mapping[int, int],
                 k: int = 8, hop: int = 1, nam_of_group: Sequence[int] | None = None) -> list[Stage]:
    """Stage plan for one checkpoint of ``nominal[node]`` bytes per node."""
    nodes = sorted(nominal)
    tier = persistent_tier(cluster)
    disk = lambda n: Endpoint.at(n, tier)  # noqa: E731
    write = Stage("write", [Step(Transfer(nominal[n], Route(_ram(n), disk(n))), (n,), "local")
                            for n in nodes])
    if strategy is Strategy.SINGLE:
        return [write]
    if strategy.uses_partner:
        if len(nodes) < 2:
            raise StrategyUnsupported(f"{strategy.value} needs at least 2 nodes")
        partners = {n: nodes[partner_of(i, len(nodes), hop)] for i, n in enumerate(nodes)}
        stages = [write]
        if strategy is Strategy.PARTNER:
            stages.append(Stage("reread", [Step(Transfer(nominal[n], Route(disk(n), _ram(n))), (n,), "reread")
                                           for n in nodes]))
        stages.append(Stage("send", [Step(Transfer(nominal[n], Route(_ram(n), _ram(partners[n]))),
                                          (n, partners[n]), f"to n{partners[n]}") for n in nodes]))
        stages.append(Stage("store", [Step(Transfer(nominal[n], Route(_ram(partners[n]), disk(partners[n]))),
                                           (partners[n],), f"copy of n{n}") for n in nodes]))
        return stages

    groups = form_groups(nodes, k)
    if strategy is Strategy.DIST_XOR:
        reread = Stage("reread", [Step(Transfer(nominal[n], Route(disk(n), _ram(n))), (n,), "reread")
                                  for n in nodes])
        stages = [write, reread]
        slice_of = {}
        for g in groups:
            c = chunk_size(max(nominal[m] for m in g), len(g))
            for m in g:
                slice_of[m] = c
        xor_bw = cluster.spec.host_xor_bw
        for step in range(max(len(g) for g in groups) - 1):
            st = Stage(f"ring{step + 1}")
            for g in groups:
                if step >= len(g) - 1:
                    continue
                for i, m in enumerate(g):
                    nxt = g[(i + 1) % len(g)]
                    st.steps.append(Step(Transfer(slice_of[m], Route(_ram(m), _ram(nxt))), (m, nxt),
                                         f"ring to n{nxt}"))
                    st.compute[nxt] = st.compute.get(nxt, 0.0) + slice_of[m] / xor_bw
            stages.append(st)
        stages.append(Stage("parity", [Step(Transfer(slice_of[n], Route(_ram(n), disk(n))), (n,), "parity")
                                       for n in nodes]))
        return stages

    # NAM_XOR
    n_nams = len(cluster.nams)
    if n_nams == 0:
        raise StrategyUnsupported("namxor needs at least one NAM device")
    if nam_of_group is None:
        nam_of_group = [g % n_nams for g in range(len(groups))]
    pull = Stage("pull")
    for gid, g in enumerate(groups):
        dev = Endpoint.nam_device(nam_of_group[gid])
        for m in g:
            pull.steps.append(Step(Transfer(nominal[m], Route(_ram(m), dev)), (m,), f"pull g{gid}"))
    return [write, pull]


def nam_compute_seconds(cluster: ClusterState, nominal: Mapping[int, int],
                        group: Sequence[int], nam: int) -> float:
    return sum(nominal[m] for m in group) / cluster.nams[nam].xor_throughput


@dataclass
class PriceReport:
    strategy: Strategy
    overhead: dict[int, float]
    stages: dict[str, float]
    elapsed: float

    @property
    def redundancy_seconds(self) -> float:
        """Time spent after the local write (the XOR / copy phase)."""
        return self.elapsed - self.stages.get("write", 0.0)


def price_checkpoint(cluster: ClusterState, strategy: "Strategy | str", nominal: Mapping[int, int] | int,
                     nodes: Iterable[int] | None = None, k: int = 8, hop: int = 1) -> PriceReport:
    """Node-visible cost of one checkpoint without storing anything."""
    strategy = Strategy.parse(strategy)
    if isinstance(nominal, int):
        members = list(nodes) if nodes is not None else list(cluster.node_ids)
        nominal = {n: nominal for n in members}
    stages = build_stages(cluster, strategy, nominal, k, hop)
    timing = run_stages(cluster, stages, nominal)
    return PriceReport(strategy, timing.overhead(), timing.stage_durations(), timing.elapsed)


# -- checkpoint database ------------------------------------------------------------

def _opt(v) -> str:
    return "-" if v is None else str(v)


def _unopt(v: str, cast=str):
    return None if v == "-" else cast(v)


class CkptDb:
    """Append-only log of checkpoint-set snapshots; the file is the source of truth."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.sets: dict[int, CheckpointSet] = {}
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                self._apply(line)
        else:
            self.path.touch()

    @classmethod
    def replay(cls, path: str | Path) -> "CkptDb":
        return cls(path)

    def _append(self, lines: Iterable[str]) -> None:
        lines = list(lines)
        with open(self.path, "a", encoding="utf-8") as f:
            for line in lines:
                f.write(line + "\n")
        for line in lines:
            self._apply(line)

    @staticmethod
    def _lines(s: CheckpointSet) -> list[str]:
        out = []
        for n in s.nodes:
            m = s.members[n]
            r = s.redundancy.get(n, RedundancyRecord())
            out.append(
                f"set={s.set_id} step={s.step} strategy={s.strategy.value} node={n} "
                f"bytes={m.bytes} crc={crc_hex(m.crc32c)} loc={m.location} state={s.state.value} "
                f"partner={_opt(r.partner)} group={_opt(r.group)} parity_loc={_opt(r.parity_loc)} "
                f"nominal={m.nominal} copy_loc={_opt(r.copy_loc)} gloc={_opt(s.global_locs.get(n))}"
            )
        return out

    def _apply(self, line: str) -> None:
        line = line.strip()
        if not line:
            return
        if line.startswith("commit "):
            kv = dict(tok.partition("=")[::2] for tok in line.split()[1:])
            self.sets[int(kv["set"])].state = SetState.VALID
            return
        kv = dict(tok.partition("=")[::2] for tok in line.split())
        sid, node = int(kv["set"]), int(kv["node"])
        s = self.sets.get(sid)
        if s is None:
            s = self.sets[sid] = CheckpointSet(sid, int(kv["step"]), Strategy.parse(kv["strategy"]))
        s.state = SetState(kv["state"])
        s.members[node] = PayloadDescriptor(node, int(kv["bytes"]), int(kv["crc"], 16), kv["loc"],
                                            int(kv.get("nominal", kv["bytes"])))
        s.redundancy[node] = RedundancyRecord(
            partner=_unopt(kv.get("partner", "-"), int),
            copy_loc=_unopt(kv.get("copy_loc", "-")),
            group=_unopt(kv.get("group", "-"), int),
            parity_loc=_unopt(kv.get("parity_loc", "-")),
        )
        gloc = _unopt(kv.get("gloc", "-"))
        if gloc is None:
            s.global_locs.pop(node, None)
        else:
            s.global_locs[node] = gloc

    def record(self, s: CheckpointSet) -> None:
        self._append(self._lines(s))

    def commit(self, set_id: int) -> None:
        self._append([f"commit set={set_id}"])

    def next_id(self) -> int:
        return max(self.sets, default=0) + 1

    def newest_first(self) -> list[CheckpointSet]:
        return [self.sets[i] for i in sorted(self.sets, reverse=True)]

    def pending(self) -> list[CheckpointSet]:
        return [s for s in self.sets.values() if s.state is SetState.PENDING]

    def latest(self, states: Iterable[SetState] = (SetState.VALID, SetState.FLUSHED)) -> CheckpointSet | None:
        states = set(states)
        for s in self.newest_first():
            if s.state in states:
                return s
        return None

    def snapshot(self) -> dict[int, CheckpointSet]:
        return {i: replace(s, members=dict(s.members), redundancy=dict(s.redundancy),
                           global_locs=dict(s.global_locs)) for i, s in self.sets.items()}

    def __len__(self) -> int:
        return len(self.sets)


# -- the engine ---------------------------------------------------------------------

@dataclass
class CheckpointResult:
    set: CheckpointSet
    overhead: dict[int, float]
    stages: dict[str, float]
    elapsed: float
    commit_at: float

    @property
    def redundancy_seconds(self) -> float:
        return self.elapsed - self.stages.get("write", 0.0) - self.stages.get("wait", 0.0)


@dataclass
class FlushResult:
    set_id: int
    mode: FlushMode
    seconds: float
    done_at: float


class Checkpointer:
    """Application-facing checkpoint API bound to one :class:`Engine`."""

    def __init__(self, engine: Engine, db_path: str | Path | None = None, k: int = 8, hop: int = 1,
                 keep: int = 2, buddy_ranks: int = 8):
        if keep < 1:
            raise ValueError("keep must be >= 1")
        self.engine = engine
        self.cluster = engine.cluster
        self.db = CkptDb(db_path or engine.root / "ckpt.db")
        self.k = k
        self.hop = hop
        self.keep = keep
        self.buddy_ranks = buddy_ranks
        self.tier = persistent_tier(self.cluster)
        self._flush_events: list[Event] = []
        self._flush_set: int | None = None

    # paths

    @staticmethod
    def _dir(set_id: int) -> str:
        return f"ckpt/s{set_id:06d}"

    def _node_loc(self, node: int, rel: str) -> str:
        return node_loc(node, self.tier, rel)

    # waiting on earlier work

    def _wait_previous(self) -> float:
        """Block until an outstanding async flush or offload commit has finished."""
        eng = self.engine
        start = eng.now
        live = [ev for ev in self._flush_events if not ev.cancelled and ev.time > eng.now]
        if live:
            eng.run_until(max(ev.time for ev in live))
        pend = self.db.pending()
        if pend:
            times = [ev.time for ev in eng.pending() if ev.time >= eng.now]
            if times:
                eng.run_until(max(times))
            for s in self.db.pending():
                s.state = SetState.INVALID
                self.db.record(s)
        return eng.now - start

    # writing

    def write_checkpoint(self, step: int, payloads: Mapping[int, bytes], strategy: "Strategy | str",
                         nominal: Mapping[int, int] | int | None = None) -> CheckpointResult:
        """Write one checkpoint set and return it with per-node overhead seconds.

        ``nominal`` gives the modeled size per node (default: the real payload
        length); it drives timing and capacity accounting.
        """
        strategy = Strategy.parse(strategy)
        eng = self.engine
        if not payloads:
            raise ValueError("no payloads")
        for n in payloads:
            if n not in eng.alive:
                raise UnknownNode(f"node {n} is not alive")
        if nominal is None:
            nominal = {n: len(p) for n, p in payloads.items()}
        elif isinstance(nominal, int):
            nominal = {n: nominal for n in payloads}
        nominal = {n: max(int(nominal[n]), len(payloads[n])) for n in payloads}
        if strategy is Strategy.NAM_XOR and not eng.nams:
            raise StrategyUnsupported("namxor needs at least one NAM device")

        waited = self._wait_previous()
        t0 = eng.now
        nodes = sorted(payloads)
        s = CheckpointSet(self.db.next_id(), step, strategy)
        groups = form_groups(nodes, self.k) if strategy.uses_xor else []
        try:
            nam_of_group = self._place(s, payloads, nominal, groups)
        except (TierFull, CapacityError) as exc:
            s.state = SetState.INVALID
            self._discard(s)
            if s.members:
                self.db.record(s)
            if isinstance(exc, CapacityError):
                raise TierFull(str(exc)) from exc
            raise

        stages = build_stages(self.cluster, strategy, nominal, self.k, self.hop, nam_of_group)
        timing = run_stages(self.cluster, stages, nodes, t0)
        for stage, ends in zip(stages, timing.ends):
            for st, end in zip(stage.steps, ends):
                eng.record(st.transfer, end, f"set={s.set_id} {stage.name} {st.label}".rstrip())

        self._verify(s, payloads)
        self.db.record(s)
        end = t0 + timing.elapsed
        commit_at = end
        if strategy is Strategy.NAM_XOR:
            commit_at = self._offload(s, payloads, nominal, groups, nam_of_group, stages[-1], timing)
        else:
            eng.schedule(end, "WRITE_DONE", node=-1, detail=f"set={s.set_id} complete",
                         callback=lambda _e, sid=s.set_id: self._commit(sid))
        eng.run_until(end)

        stage_s = timing.stage_durations()
        if waited:
            stage_s = {"wait": waited, **stage_s}
        overhead = {n: v + waited for n, v in timing.overhead().items()}
        return CheckpointResult(s, overhead, stage_s, timing.elapsed + waited, commit_at)

    def _place(self, s: CheckpointSet, payloads: Mapping[int, bytes], nominal: Mapping[int, int],
               groups: Sequence[tuple[int, ...]]) -> list[int] | None:
        """Store payloads and redundancy data; returns NAM index per group."""
        eng, d = self.engine, self._dir(s.set_id)
        nodes = sorted(payloads)
        for n in nodes:
            loc = eng.write(n, self.tier, f"{d}/payload.bin", payloads[n], nominal[n])
            s.members[n] = PayloadDescriptor(n, len(payloads[n]), crc32c(payloads[n]), loc, nominal[n])
            s.redundancy[n] = RedundancyRecord()

        if s.strategy.uses_partner:
            for i, n in enumerate(nodes):
                p = nodes[partner_of(i, len(nodes), self.hop)]
                if s.strategy is Strategy.PARTNER:
                    data = eng.read(s.members[n].location)
                    loc = eng.write(p, self.tier, f"{d}/partner-n{n:03d}.bin", data, nominal[n])
                else:
                    loc = self._write_buddy(p, f"{d}/buddy-n{n:03d}.agg", payloads[n], nominal[n])
                s.redundancy[n] = RedundancyRecord(partner=p, copy_loc=loc)
            return None

        if s.strategy is Strategy.DIST_XOR:
            for gid, g in enumerate(groups):
                blocks = [eng.read(s.members[m].location) for m in g]
                slices = rotated_encode(blocks)
                c_nom = chunk_size(max(nominal[m] for m in g), len(g))
                for m, sl in zip(g, slices):
                    loc = eng.write(m, self.tier, f"{d}/parity-g{gid}.bin", sl, c_nom)
                    s.redundancy[m] = RedundancyRecord(group=gid, parity_loc=loc)
            return None

        if s.strategy is Strategy.NAM_XOR:
            out = []
            for gid, g in enumerate(groups):
                block_nom = max(nominal[m] for m in g)
                block_len = max(len(payloads[m]) for m in g)
                tag = f"s{s.set_id}g{gid}"
                idx, off = self._nam_alloc(max(block_nom, block_len), tag, s.set_id)
                loc = nam_loc(idx, off, block_len, tag)
                for m in g:
                    s.redundancy[m] = RedundancyRecord(group=gid, parity_loc=loc)
                out.append(idx)
            return out
        return None

    def _write_buddy(self, buddy: int, rel: str, payload: bytes, nominal: int) -> str:
        store = self.engine.store(buddy, self.tier)
        parts = max(1, min(self.buddy_ranks, len(payload)))
        step = -(-len(payload) // parts) if payload else 0
        chunks = [payload[i * step:(i + 1) * step] for i in range(parts)]
        path = store.reserve_path(rel, nominal)
        aggregate.pack(path, chunks)
        store.adopt(rel, nominal)
        return node_loc(buddy, self.tier, rel)

    def read_copy(self, loc: str) -> bytes:
        """Read a partner copy, unpacking buddy containers."""
        if loc.endswith(".agg"):
            store, rel = self.engine.resolve(loc)
            return b"".join(aggregate.read_all(store.path(rel)))
        return self.engine.read(loc)

    def _nam_alloc(self, nbytes: int, tag: str, set_id: int) -> tuple[int, int]:
        while True:
            fits = [dev for dev in self.engine.nams if dev.capacity - dev.live_bytes >= nbytes]
            for dev in sorted(fits, key=lambda d: (-(d.capacity - d.live_bytes), d.index)):
                try:
                    return dev.index, dev.allocate(nbytes, tag)
                except CapacityError:
                    continue
            victim = self._oldest_nam_set(exclude=set_id)
            if victim is None:
                raise CapacityError(f"no NAM device has {nbytes} free bytes")
            self._evict(victim)

    def _oldest_nam_set(self, exclude: int) -> CheckpointSet | None:
        for s in sorted(self.db.sets.values(), key=lambda s: s.set_id):
            if s.set_id == exclude or s.strategy is not Strategy.NAM_XOR:
                continue
            if any(self.engine.reachable(r.parity_loc) for r in s.redundancy.values() if r.parity_loc):
                return s
        return None

    def _offload(self, s: CheckpointSet, payloads, nominal, groups, nam_of_group, pull: Stage,
                 timing: Timing) -> float:
        eng = self.engine
        pull_ends = dict(((st.actors[0], end) for st, end in zip(pull.steps, timing.ends[-1])))
        remaining = set(range(len(groups)))
        done_at = 0.0

        def finished(gid: int) -> None:
            remaining.discard(gid)
            if not remaining and self.db.sets[s.set_id].state is SetState.PENDING:
                self._commit(s.set_id)

        for gid, g in enumerate(groups):
            dev = eng.nams[nam_of_group[gid]]
            block_len = max(len(payloads[m]) for m in g)
            for m in g:
                dev.expose(m, payloads[m].ljust(block_len, b"\0"), nominal[m])
            _, off, _, _ = parse_nam_loc(s.redundancy[g[0]].parity_loc)
            note = dev.xor_offload(list(g), block_len, off, nbytes=max(nominal[m] for m in g),
                                   pull_done={m: pull_ends[m] for m in g},
                                   on_complete=lambda _n, gid=gid: finished(gid))
            done_at = max(done_at, note.time)
        return done_at

    def _verify(self, s: CheckpointSet, payloads: Mapping[int, bytes]) -> None:
        for n, m in s.members.items():
            if crc32c(self.engine.read(m.location)) != m.crc32c:
                raise CrcMismatch(f"set {s.set_id}: payload of node {n} does not verify")
            r = s.redundancy.get(n)
            if r is not None and r.copy_loc and crc32c(self.read_copy(r.copy_loc)) != m.crc32c:
                raise CrcMismatch(f"set {s.set_id}: copy of node {n} does not verify")

    def _commit(self, set_id: int) -> None:
        s = self.db.sets[set_id]
        if s.state is not SetState.PENDING:
            return
        self.db.commit(set_id)
        self._evict_old()

    def _evict_old(self) -> None:
        live = [s for s in self.db.newest_first() if s.state in (SetState.VALID, SetState.FLUSHED)
                and self._has_cache(s)]
        for s in live[self.keep:]:
            self._evict(s)

    def _has_cache(self, s: CheckpointSet) -> bool:
        return any(self.engine.reachable(m.location) for m in s.members.values())

    def _evict(self, s: CheckpointSet) -> None:
        self._discard(s)
        if s.state is not SetState.FLUSHED:
            s.state = SetState.INVALID
        self.db.record(s)

    def _discard(self, s: CheckpointSet) -> None:
        locs = [m.location for m in s.members.values()]
        for r in s.redundancy.values():
            locs += [r.copy_loc, r.parity_loc]
        for loc in dict.fromkeys(locs):
            if loc and self.engine.reachable(loc):
                self.engine.delete(loc)

    # flushing

    def flush(self, set_id: int, mode: "FlushMode | str" = FlushMode.SYNC) -> FlushResult:
        """Copy a VALID set's payloads from node-local storage to the global FS."""
        mode = FlushMode(mode)
        eng = self.engine
        s = self.db.sets[set_id]
        if s.state is not SetState.VALID:
            raise FlushError(f"set {set_id} is {s.state.value}, not VALID")
        transfers, rels = [], {}
        for n in s.nodes:
            rels[n] = f"{self._dir(set_id)}/n{n:03d}.bin"
            transfers.append(Transfer(s.members[n].nominal, Route(Endpoint.at(n, self.tier), GLOBAL), creates=1))
        need = sum(t.size for t in transfers)
        if need > eng.global_store.free:
            raise FlushError(f"global file system full: need {need}, free {eng.global_store.free}")
        t0 = eng.now
        durs = eng.price(transfers)
        done = set()
        events = []

        def landed(ev: Event, n: int) -> None:
            m = s.members[n]
            try:
                eng.global_store.put(rels[n], eng.read(m.location), m.nominal)
            except TierFull as exc:
                raise FlushError(str(exc)) from exc
            done.add(n)
            if len(done) == len(s.members) and s.state is SetState.VALID:
                s.global_locs = {k: global_loc(v) for k, v in rels.items()}
                s.state = SetState.FLUSHED
                self.db.record(s)

        for n, t, d in zip(s.nodes, transfers, durs):
            events.append(eng.record(t, t0 + d, f"set={set_id} flush {mode.value}",
                                     callback=lambda ev, n=n: landed(ev, n)))
        done_at = t0 + max(durs)
        if mode is FlushMode.SYNC:
            eng.run_until(done_at)
            return FlushResult(set_id, mode, done_at - t0, done_at)
        self._flush_events = events
        self._flush_set = set_id
        return FlushResult(set_id, mode, 0.0, done_at)


def write_checkpoint(engine: Engine, step: int, payloads: Mapping[int, bytes], strategy: "Strategy | str",
                     nominal: Mapping[int, int] | int | None = None,
                     checkpointer: Checkpointer | None = None) -> CheckpointResult:
    ckpt = checkpointer or Checkpointer(engine)
    return ckpt.write_checkpoint(step, payloads, strategy, nominal)


def flush_to_global(ckpt: Checkpointer, set_id: int, mode: "FlushMode | str" = FlushMode.SYNC) -> FlushResult:
    return ckpt.flush(set_id, mode)


def stored_bytes(engine: Engine, s: CheckpointSet) -> dict[str, int]:
    """Nominal bytes held for ``s``: payloads and redundancy (copies or parity)."""
    payload = sum(engine.nominal(m.location) for m in s.members.values() if engine.reachable(m.location))
    extra_locs = set()
    for r in s.redundancy.values():
        for loc in (r.copy_loc, r.parity_loc):
            if loc and engine.reachable(loc):
                extra_locs.add(loc)
    redundancy = sum(engine.nominal(loc) for loc in extra_locs)
    return {"payload": payload, "redundancy": redundancy}


__all__ = [
    "Strategy",
    "SetState",
    "FlushMode",
    "PayloadDescriptor",
    "RedundancyRecord",
    "XorGroup",
    "CheckpointSet",
    "CkptDb",
    "Checkpointer",
    "CheckpointResult",
    "FlushResult",
    "PriceReport",
    "need_checkpoint",
    "xor_encode",
    "partner_of",
    "form_groups",
    "build_stages",
    "run_stages",
    "price_checkpoint",
    "write_checkpoint",
    "flush_to_global",
    "stored_bytes",
]
