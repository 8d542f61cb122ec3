"""Deterministic discrete-event engine and the network-attached memory device.

The :class:`Engine` owns the simulated clock, the event queue, the per-node
storage tiers and the NAM devices.  Events are processed in ``(time, seq)``
order, so two runs fed the same calls produce identical logs.
"""

from __future__ import annotations

import csv
import enum
import heapq
import io
import itertools
import logging
import shutil
import tempfile
import weakref
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence


from .cluster_model import (
    GLOBAL,
    ClusterState,
    Endpoint,
    Route,
    TierKind,
    TierSpec,
    Transfer,
    build_cluster,
)
from .errors import (
    CapacityError,
    GroupError,
    NotRegistered,
    OverlapError,
    RouteError,
    SlotStateError,
    TierFull,
    UnknownNode,
)
from .xorcode import xor_fold

logger = logging.getLogger(__name__)


class EventKind(str, enum.Enum):
    TRANSFER_DONE = "TRANSFER_DONE"
    WRITE_DONE = "WRITE_DONE"
    NOTIFY = "NOTIFY"
    FAILURE = "FAILURE"
    OFFLOAD_DONE = "OFFLOAD_DONE"
    TASK_DONE = "TASK_DONE"


@dataclass
class Event:
    time: float
    seq: int
    kind: EventKind
    node: int = -1
    nbytes: int = 0
    detail: str = ""
    callback: Callable[["Event"], None] | None = field(default=None, repr=False, compare=False)
    nodes: frozenset[int] = field(default=frozenset(), repr=False, compare=False)
    cancelled: bool = field(default=False, repr=False, compare=False)

    def __lt__(self, other: "Event") -> bool:
        return (self.time, self.seq) < (other.time, other.seq)

    def row(self) -> tuple:
        return (repr(self.time), self.seq, self.kind.value, self.node, self.nbytes, self.detail)


LOG_COLUMNS = ("time_s", "seq", "kind", "node", "bytes", "detail")


class EventLog(list):
    """Ordered record of processed events, exportable as CSV."""

    def to_csv(self, dest=None, prefix: str = "", header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(LOG_COLUMNS)
        for ev in self:
            row = list(ev.row())
            if prefix:
                row[5] = f"{prefix} {row[5]}".rstrip()
            w.writerow(row)
        text = buf.getvalue()
        if dest is not None:
            if hasattr(dest, "write"):
                dest.write(text)
            else:
                Path(dest).write_text(text, encoding="utf-8")
        return text


# -- storage tiers ------------------------------------------------------------

class TierStore:
    """One storage tier of one node, backed by a directory.

    ``nominal`` sizes drive capacity accounting and pricing; the bytes on disk
    are the (possibly much smaller) sampled payload.
    """

    def __init__(self, root: Path, spec: TierSpec, label: str):
        self.root = root
        self.spec = spec
        self.label = label
        self._sizes: dict[str, int] = {}
        root.mkdir(parents=True, exist_ok=True)

    @property
    def used(self) -> int:
        return sum(self._sizes.values())

    @property
    def free(self) -> int:
        return self.spec.capacity - self.used

    def path(self, rel: str) -> Path:
        return self.root / rel

    def _reserve(self, rel: str, nominal: int) -> None:
        new_used = self.used - self._sizes.get(rel, 0) + nominal
        if new_used > self.spec.capacity:
            raise TierFull(
                f"{self.label}: {nominal} bytes for {rel} exceed capacity "
                f"({self.used}/{self.spec.capacity} used)"
            )

    def put(self, rel: str, data, nominal: int | None = None) -> None:
        nominal = len(data) if nominal is None else nominal
        self._reserve(rel, nominal)
        p = self.path(rel)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_bytes(bytes(data))
        self._sizes[rel] = nominal

    def adopt(self, rel: str, nominal: int) -> None:
        """Account for a file that was written in place by another component."""
        self._reserve(rel, nominal)
        if not self.path(rel).exists():
            raise FileNotFoundError(self.path(rel))
        self._sizes[rel] = nominal

    def reserve_path(self, rel: str, nominal: int) -> Path:
        self._reserve(rel, nominal)
        p = self.path(rel)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def get(self, rel: str) -> bytes:
        return self.path(rel).read_bytes()

    def exists(self, rel: str) -> bool:
        return rel in self._sizes and self.path(rel).exists()

    def nominal(self, rel: str) -> int:
        return self._sizes[rel]

    def delete(self, rel: str) -> None:
        self._sizes.pop(rel, None)
        p = self.path(rel)
        if p.exists():
            p.unlink()

    def wipe(self) -> None:
        self._sizes.clear()
        shutil.rmtree(self.root, ignore_errors=True)
        self.root.mkdir(parents=True, exist_ok=True)

    def files(self) -> list[str]:
        return sorted(self._sizes)


# -- NAM device -------------------------------------------------------------------

class SlotState(str, enum.Enum):
    FREE = "FREE"
    CLAIMED = "CLAIMED"
    FULL = "FULL"


_SLOT_NEXT = {SlotState.FREE: SlotState.CLAIMED, SlotState.CLAIMED: SlotState.FULL,
              SlotState.FULL: SlotState.FREE}


class NotifyOp(str, enum.Enum):
    PUT_COMPLETE = "PUT_COMPLETE"
    GET_COMPLETE = "GET_COMPLETE"
    OFFLOAD_COMPLETE = "OFFLOAD_COMPLETE"


@dataclass(frozen=True)
class Notification:
    op: NotifyOp
    slot: int
    client: int
    bytes: int
    time: float = 0.0
    # per-member pull completion time, offloads only
    pulled: Mapping[int, float] = field(default_factory=dict, compare=False)


class NamDevice:
    """Network-attached memory with a slot ring and an XOR offload engine.

    Memory is sparse: 64 KiB pages are materialized on first non-zero write,
    so a 2 GB device costs nothing until it is used.  ``nbytes`` arguments
    give the logical size of an operation, used for bounds and timing, when
    the bytes actually passed are a sample of a larger payload.
    """

    PAGE = 1 << 16

    def __init__(self, engine: "Engine", index: int):
        self.engine = engine
        self.index = index
        self.spec = engine.cluster.nams[index]
        self.capacity = self.spec.capacity
        self.registered_clients: set[int] = set()
        self.notify_queue: deque[Notification] = deque()
        self.slot_state = [SlotState.FREE] * self.spec.ring_buffers
        self._slot_buf = [bytearray(self.spec.buffer_size) for _ in range(self.spec.ring_buffers)]
        self._slot_job: list[tuple[int, int] | None] = [None] * self.spec.ring_buffers
        self._ring_pos = 0
        self.slot_cycles = 0
        self.completed_ops = 0
        self._pages: dict[int, bytearray] = {}
        self._alloc: dict[int, tuple[int, str]] = {}
        self._inflight: list[tuple[float, float, int, int]] = []
        self._exposed: dict[int, tuple[bytes, int]] = {}
        self.endpoint = Endpoint.nam_device(index)

    # registration and buffers

    def register(self, client: int) -> None:
        self.registered_clients.add(client)

    def unregister(self, client: int) -> None:
        self.registered_clients.discard(client)
        self._exposed.pop(client, None)

    def _check_client(self, client: int) -> None:
        if client not in self.registered_clients:
            raise NotRegistered(f"node {client} is not registered with nam{self.index}")

    def _check_range(self, offset: int, length: int) -> None:
        if offset < 0 or length < 0 or offset + length > self.capacity:
            raise CapacityError(
                f"nam{self.index}: region [{offset}, {offset + length}) outside "
                f"capacity {self.capacity}"
            )

    # memory

    def _write_mem(self, offset: int, data) -> None:
        mv = memoryview(data).cast("B")
        pos = 0
        while pos < len(mv):
            page, off = divmod(offset + pos, self.PAGE)
            n = min(self.PAGE - off, len(mv) - pos)
            piece = mv[pos:pos + n]
            buf = self._pages.get(page)
            if buf is None:
                if bytes(piece).count(0) != n:
                    buf = self._pages[page] = bytearray(self.PAGE)
            if buf is not None:
                buf[off:off + n] = piece
            pos += n

    def _read_mem(self, offset: int, length: int) -> bytes:
        out = bytearray(length)
        pos = 0
        while pos < length:
            page, off = divmod(offset + pos, self.PAGE)
            n = min(self.PAGE - off, length - pos)
            buf = self._pages.get(page)
            if buf is not None:
                out[pos:pos + n] = buf[off:off + n]
            pos += n
        return bytes(out)

    # ring

    def _transition(self, slot: int, new: SlotState) -> None:
        cur = self.slot_state[slot]
        if _SLOT_NEXT[cur] is not new:
            raise SlotStateError(f"slot {slot}: {cur.value} -> {new.value}")
        self.slot_state[slot] = new

    def _drain(self, slot: int, sink: Callable[[int, memoryview], None]) -> None:
        offset, n = self._slot_job[slot]
        sink(offset, memoryview(self._slot_buf[slot])[:n])
        self._slot_job[slot] = None
        self._transition(slot, SlotState.FREE)
        self.slot_cycles += 1

    def _stage(self, length: int, source: Callable[[int, int], bytes | memoryview],
               sink: Callable[[int, memoryview], None]) -> int:
        """Move ``length`` bytes through the ring; returns the last slot used."""
        size = self.spec.buffer_size
        pending: deque[int] = deque()
        last = -1
        for start in range(0, length, size):
            n = min(size, length - start)
            if len(pending) == len(self.slot_state) or self.slot_state[self._ring_pos] is not SlotState.FREE:
                self._drain(pending.popleft(), sink)
            slot = self._ring_pos
            self._ring_pos = (self._ring_pos + 1) % len(self.slot_state)
            self._transition(slot, SlotState.CLAIMED)
            self._slot_buf[slot][:n] = source(start, n)
            self._slot_job[slot] = (start, n)
            self._transition(slot, SlotState.FULL)
            pending.append(slot)
            last = slot
        while pending:
            self._drain(pending.popleft(), sink)
        return last

    def busy_slots(self) -> int:
        return sum(s is not SlotState.FREE for s in self.slot_state)

    # notifications

    def _complete(self, note: Notification, detail: str,
                  on_complete: Callable[[Notification], None] | None = None) -> None:
        def deliver(_ev: Event) -> None:
            self.notify_queue.append(note)
            self.completed_ops += 1
            if on_complete is not None:
                on_complete(note)

        # the device finishes an accepted operation even if the client dies
        tags = () if note.op is NotifyOp.OFFLOAD_COMPLETE else None

        kind = EventKind.OFFLOAD_DONE if note.op is NotifyOp.OFFLOAD_COMPLETE else EventKind.NOTIFY
        self.engine.schedule(note.time, kind, node=note.client, nbytes=note.bytes,
                             detail=f"nam{self.index} {note.op.value} {detail}".rstrip(),
                             callback=deliver, nodes=tags)

    def poll(self) -> Notification | None:
        return self.notify_queue.popleft() if self.notify_queue else None

    # operations

    def put(self, client: int, dst_offset: int, data, nbytes: int | None = None,
            start: float | None = None) -> Notification:
        """Write ``data`` at ``dst_offset`` through the ring."""
        self._check_client(client)
        mv = memoryview(data).cast("B")
        nbytes = len(mv) if nbytes is None else max(nbytes, len(mv))
        self._check_range(dst_offset, nbytes)
        t0 = self.engine.now if start is None else start
        route = Route(Endpoint.at(client, TierKind.RAM), self.endpoint)
        t1 = t0 + self.engine.cluster.transfer_time(nbytes, route)
        self._claim_window(t0, t1, dst_offset, dst_offset + len(mv))
        slot = self._stage(len(mv), lambda s, n: mv[s:s + n],
                           lambda off, chunk: self._write_mem(dst_offset + off, chunk))
        self.engine.account(Transfer(nbytes, route))
        note = Notification(NotifyOp.PUT_COMPLETE, slot, client, nbytes, t1)
        self._complete(note, f"off={dst_offset}")
        return note

    def get(self, client: int, src_offset: int, length: int, nbytes: int | None = None,
            start: float | None = None) -> tuple[bytes, Notification]:
        self._check_client(client)
        nbytes = length if nbytes is None else max(nbytes, length)
        self._check_range(src_offset, nbytes)
        t0 = self.engine.now if start is None else start
        route = Route(self.endpoint, Endpoint.at(client, TierKind.RAM))
        t1 = t0 + self.engine.cluster.transfer_time(nbytes, route)
        out = bytearray(length)

        def sink(off: int, chunk: memoryview) -> None:
            out[off:off + len(chunk)] = chunk

        slot = self._stage(length, lambda s, n: self._read_mem(src_offset + s, n), sink)
        self.engine.account(Transfer(nbytes, route))
        note = Notification(NotifyOp.GET_COMPLETE, slot, client, nbytes, t1)
        self._complete(note, f"off={src_offset}")
        return bytes(out), note

    def _claim_window(self, t0: float, t1: float, lo: int, hi: int) -> None:
        self._inflight = [w for w in self._inflight if w[1] > t0]
        if hi > lo:
            for a0, a1, alo, ahi in self._inflight:
                if a0 < t1 and t0 < a1 and lo < ahi and alo < hi:
                    raise OverlapError(f"nam{self.index}: concurrent puts overlap [{lo}, {hi})")
        self._inflight.append((t0, t1, lo, hi))

    def expose(self, client: int, data, nbytes: int | None = None) -> None:
        """Publish a source buffer that an offload may pull."""
        self._check_client(client)
        data = bytes(data)
        self._exposed[client] = (data, len(data) if nbytes is None else max(nbytes, len(data)))

    def release(self, client: int) -> None:
        self._exposed.pop(client, None)

    def xor_offload(self, group: Sequence[int], block_len: int, dst_offset: int,
                    nbytes: int | None = None, start: float | None = None,
                    pull_done: Mapping[int, float] | None = None,
                    on_complete: Callable[[Notification], None] | None = None) -> Notification:
        """Pull every member's exposed block, XOR on-device, store at ``dst_offset``.

        Members are charged only until their block has been pulled; the
        on-device XOR runs at ``xor_throughput`` after the last pull.  When the
        caller has already priced the pulls inside a larger concurrent batch it
        passes the completion times as ``pull_done``.
        """
        if not group:
            raise GroupError("empty offload group")
        blocks, sizes = [], []
        for m in group:
            self._check_client(m)
            if m not in self._exposed:
                raise GroupError(f"node {m} has no exposed buffer")
            data, nominal = self._exposed[m]
            if len(data) != block_len:
                raise GroupError(f"node {m} exposed {len(data)} bytes, expected {block_len}")
            blocks.append(data)
            sizes.append(nominal)
        parity_nominal = max(sizes) if nbytes is None else max(nbytes, block_len)
        self._check_range(dst_offset, max(parity_nominal, block_len))
        t0 = self.engine.now if start is None else start
        routes = [Route(Endpoint.at(m, TierKind.RAM), self.endpoint) for m in group]
        transfers = [Transfer(s, r) for s, r in zip(sizes, routes)]
        if pull_done is None:
            durs = self.engine.cluster.concurrent_times(transfers)
            pull_done = {m: t0 + d for m, d in zip(group, durs)}
            for t in transfers:
                self.engine.account(t)
        pulled = {m: pull_done[m] for m in group}
        compute = sum(sizes) / self.spec.xor_throughput
        done = max(pulled.values()) + compute
        self._write_mem(dst_offset, xor_fold(blocks, block_len))
        for m in group:
            self.release(m)
        note = Notification(NotifyOp.OFFLOAD_COMPLETE, -1, group[0], parity_nominal, done, pulled)
        self._complete(note, f"off={dst_offset} k={len(group)}", on_complete)
        return note

    # allocation

    def allocate(self, nbytes: int, owner: str) -> int:
        """First-fit allocation of ``nbytes``; raises :class:`CapacityError`."""
        pos = 0
        for off in sorted(self._alloc):
            if off - pos >= nbytes:
                break
            pos = max(pos, off + self._alloc[off][0])
        if pos + nbytes > self.capacity:
            raise CapacityError(f"nam{self.index}: no room for {nbytes} bytes")
        self._alloc[pos] = (nbytes, owner)
        return pos

    def free(self, offset: int) -> None:
        length, _ = self._alloc.pop(offset)
        end = offset + length
        for page in range(offset // self.PAGE, -(-end // self.PAGE)):
            buf = self._pages.get(page)
            if buf is None:
                continue
            lo, hi = max(offset, page * self.PAGE), min(end, (page + 1) * self.PAGE)
            buf[lo - page * self.PAGE:hi - page * self.PAGE] = bytes(hi - lo)
            if not any(buf):
                del self._pages[page]

    def owner_at(self, offset: int) -> str | None:
        entry = self._alloc.get(offset)
        return entry[1] if entry else None

    def allocations(self) -> dict[int, tuple[int, str]]:
        return dict(self._alloc)

    @property
    def live_bytes(self) -> int:
        return sum(n for n, _ in self._alloc.values())


# -- engine ------------------------------------------------------------------------

def node_loc(node: int, tier: TierKind, rel: str) -> str:
    return f"{TierKind(tier).value}:n{node:03d}/{rel}"


def global_loc(rel: str) -> str:
    return f"global:{rel}"


def nam_loc(index: int, offset: int, length: int, tag: str) -> str:
    return f"nam{index}:{offset}+{length}@{tag}"


def parse_nam_loc(loc: str) -> tuple[int, int, int, str]:
    head, _, rest = loc.partition(":")
    span, _, tag = rest.partition("@")
    off, _, length = span.partition("+")
    return int(head[3:]), int(off), int(length), tag


def loc_node(loc: str) -> int | None:
    """Node that physically holds ``loc`` (None for NAM and global storage)."""
    head, _, rest = loc.partition(":")
    if head.startswith("nam") or head == "global":
        return None
    return int(rest.split("/", 1)[0][1:])


class Engine:
    """Simulated clock, event queue, node storage and NAM devices."""

    def __init__(self, cluster: ClusterState | None = None, root: str | Path | None = None,
                 seed: int = 0):
        self.cluster = cluster or build_cluster()
        self.seed = seed
        self.now = 0.0
        self._seq = itertools.count()
        self._queue: list[Event] = []
        self.log = EventLog()
        if root is None:
            self.root = Path(tempfile.mkdtemp(prefix="deepckpt-"))
            self._finalizer = weakref.finalize(self, shutil.rmtree, self.root, True)
        else:
            self.root = Path(root)
            self.root.mkdir(parents=True, exist_ok=True)
            self._finalizer = None
        spec = self.cluster.spec
        self.alive: set[int] = set(self.cluster.node_ids)
        self.incarnation: dict[int, int] = {n: 0 for n in self.cluster.node_ids}
        self.spares_left = spec.spare_nodes
        self.topology_version = 0
        self.stores: dict[int, dict[TierKind, TierStore]] = {}
        for n in self.cluster.node_ids:
            self.stores[n] = {
                k: TierStore(self.root / f"n{n:03d}" / k.value, self.cluster.tier(n, k),
                             f"n{n}:{k.value}")
                for k in self.cluster.tier_kinds()
            }
        self.global_store = TierStore(self.root / "global", spec.global_fs, "global")
        self.nams = [NamDevice(self, i) for i in range(len(spec.nam_devices))]
        for dev in self.nams:
            for n in self.cluster.node_ids:
                dev.register(n)
        self.bytes: Counter[str] = Counter()

    def close(self) -> None:
        if self._finalizer is not None:
            self._finalizer()

    def __enter__(self) -> "Engine":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # event queue

    def schedule(self, time: float, kind: EventKind, node: int = -1, nbytes: int = 0,
                 detail: str = "", callback: Callable[[Event], None] | None = None,
                 nodes: Iterable[int] | None = None) -> Event:
        """Queue an event.  ``nodes`` are the nodes whose crash cancels it
        (default: ``node``)."""
        if time < self.now:
            raise ValueError(f"cannot schedule at {time} before now={self.now}")
        if nodes is None:
            nodes = (node,) if node >= 0 else ()
        tags = frozenset(nodes)
        ev = Event(time, next(self._seq), EventKind(kind), node, nbytes, detail, callback, tags)
        heapq.heappush(self._queue, ev)
        return ev

    def cancel_involving(self, nodes: Iterable[int]) -> list[Event]:
        victims = set(nodes)
        dropped = []
        for ev in self._queue:
            if not ev.cancelled and ev.nodes & victims:
                ev.cancelled = True
                dropped.append(ev)
        return dropped

    def pending(self) -> list[Event]:
        return sorted(ev for ev in self._queue if not ev.cancelled)

    def run_until(self, time: float) -> EventLog:
        """Process every event with timestamp <= ``time``; returns them in order."""
        done = EventLog()
        while self._queue and self._queue[0].time <= time:
            ev = heapq.heappop(self._queue)
            if ev.cancelled:
                continue
            self.now = ev.time
            if ev.callback is not None:
                ev.callback(ev)
            self.log.append(ev)
            done.append(ev)
        self.now = max(self.now, time)
        return done

    def advance(self, seconds: float) -> EventLog:
        return self.run_until(self.now + seconds)

    def run(self) -> EventLog:
        done = EventLog()
        while self._queue:
            done.extend(self.run_until(self._queue[0].time))
        return done

    # pricing and accounting

    def price(self, transfers: Sequence[Transfer]) -> list[float]:
        return self.cluster.concurrent_times(transfers)

    def account(self, t: Transfer) -> None:
        src, dst = t.route.src, t.route.dst
        if src.nam is not None or dst.nam is not None:
            self.bytes["nam"] += t.size
        elif src.is_global or dst.is_global:
            self.bytes["global"] += t.size
        elif t.route.inter_node:
            self.bytes["remote"] += t.size
        else:
            self.bytes["local"] += t.size

    def record(self, t: Transfer, end: float, detail: str = "",
               callback: Callable[[Event], None] | None = None) -> Event:
        """Account ``t`` and schedule its completion event at ``end``."""
        self.account(t)
        dst = t.route.dst
        persistent = dst.is_global or (dst.node is not None and dst.tier in (TierKind.NVME, TierKind.HDD))
        kind = EventKind.WRITE_DONE if persistent else EventKind.TRANSFER_DONE
        node = dst.node if dst.node is not None else (t.route.src.node if t.route.src.node is not None else -1)
        tags = {n for n in (t.route.src.node, dst.node) if n is not None}
        return self.schedule(end, kind, node=node, nbytes=t.size, detail=detail,
                             callback=callback, nodes=tags)

    # storage

    def store(self, node: int, tier: TierKind) -> TierStore:
        if node not in self.stores:
            raise UnknownNode(f"unknown node {node}")
        try:
            return self.stores[node][TierKind(tier)]
        except KeyError:
            raise RouteError(f"node {node} has no {TierKind(tier).value} tier") from None

    def resolve(self, loc: str) -> tuple[TierStore, str]:
        head, _, rest = loc.partition(":")
        if head == "global":
            return self.global_store, rest
        node_part, _, rel = rest.partition("/")
        return self.store(int(node_part[1:]), TierKind(head)), rel

    def write(self, node: int, tier: TierKind, rel: str, data, nominal: int | None = None) -> str:
        if node not in self.alive:
            raise UnknownNode(f"node {node} is down")
        self.store(node, tier).put(rel, data, nominal)
        return node_loc(node, tier, rel)

    def read(self, loc: str) -> bytes:
        if loc.startswith("nam"):
            idx, off, length, _ = parse_nam_loc(loc)
            return self.nams[idx]._read_mem(off, length)
        store, rel = self.resolve(loc)
        return store.get(rel)

    def reachable(self, loc: str | None) -> bool:
        if not loc or loc == "-":
            return False
        if loc.startswith("nam"):
            idx, off, _, tag = parse_nam_loc(loc)
            return 0 <= idx < len(self.nams) and self.nams[idx].owner_at(off) == tag
        node = loc_node(loc)
        if node is not None and node not in self.alive:
            return False
        try:
            store, rel = self.resolve(loc)
        except (UnknownNode, RouteError, ValueError):
            return False
        return store.exists(rel)

    def nominal(self, loc: str) -> int:
        if loc.startswith("nam"):
            idx, off, _, _ = parse_nam_loc(loc)
            return self.nams[idx].allocations()[off][0]
        store, rel = self.resolve(loc)
        return store.nominal(rel)

    def delete(self, loc: str) -> None:
        if loc.startswith("nam"):
            idx, off, _, tag = parse_nam_loc(loc)
            if self.nams[idx].owner_at(off) == tag:
                self.nams[idx].free(off)
            return
        node = loc_node(loc)
        if node is not None and node not in self.alive:
            return
        store, rel = self.resolve(loc)
        store.delete(rel)

    # node lifecycle

    def crash(self, node: int) -> None:
        self._check_node(node)
        self.alive.discard(node)
        for store in self.stores[node].values():
            store.wipe()
        for dev in self.nams:
            dev.release(node)
        self.cancel_involving([node])
        self.topology_version += 1

    def clear_volatile(self, node: int) -> None:
        self._check_node(node)
        self.stores[node][TierKind.RAM].wipe()
        for dev in self.nams:
            dev.release(node)
        self.topology_version += 1

    def revive(self, node: int) -> None:
        """Bring ``node`` back as a fresh machine (a spare taking its place)."""
        self._check_node(node)
        for store in self.stores[node].values():
            store.wipe()
        self.alive.add(node)
        self.incarnation[node] += 1
        self.topology_version += 1

    def _check_node(self, node: int) -> None:
        if node not in self.stores:
            raise UnknownNode(f"unknown node {node}")


def run_until(engine: Engine, time: float) -> EventLog:
    return engine.run_until(time)


__all__ = [
    "EventKind",
    "Event",
    "EventLog",
    "LOG_COLUMNS",
    "TierStore",
    "SlotState",
    "NotifyOp",
    "Notification",
    "NamDevice",
    "Engine",
    "run_until",
    "node_loc",
    "global_loc",
    "nam_loc",
    "parse_nam_loc",
    "loc_node",
    "GLOBAL",
]
