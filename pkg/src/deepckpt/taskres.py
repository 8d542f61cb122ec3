"""Task-level resiliency on an abstract task graph.

Three mechanisms:

* lightweight: a task's inputs are snapshotted in RAM before it runs and
  restored if it fails, then the task is retried;
* persistent: every completed task is logged with digests of its inputs and
  outputs, and a re-invoked application fast-forwards over logged work;
* resilient offload: tasks offloaded to Booster nodes that die are detected
  and restarted elsewhere, without touching work done in parallel.
"""

from __future__ import annotations

import enum
import hashlib
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, MutableMapping, Sequence

from .cluster_model import Endpoint, Route, TierKind
from .crc import crc32c, crc_hex
from .errors import GraphError, LogCorrupt, NoSurvivors, RetriesExhausted, UnknownNode
from .simnet import Engine, EventKind

logger = logging.getLogger(__name__)

Kernel = Callable[["Task", Mapping[str, bytes]], dict[str, bytes]]


class Target(str, enum.Enum):
    LOCAL = "local"
    OFFLOAD = "boost"


def synthetic_kernel(task: "Task", inputs: Mapping[str, bytes]) -> dict[str, bytes]:
    """Deterministic stand-in for real work: hash of the task id and its inputs."""
    out = {}
    for name in task.outputs:
        h = hashlib.blake2b(digest_size=32)
        h.update(task.task_id.encode())
        h.update(name.encode())
        for key in sorted(inputs):
            h.update(key.encode())
            h.update(inputs[key])
        out[name] = h.digest() * max(1, task.out_bytes // 32)
    return out


@dataclass(frozen=True)
class Task:
    task_id: str
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()
    deps: frozenset[str] = frozenset()
    target: Target = Target.LOCAL
    nodes: tuple[int, ...] = ()
    work_cost: float = 1.0
    out_bytes: int = 32
    kernel: Kernel = field(default=synthetic_kernel, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "deps", frozenset(self.deps))
        object.__setattr__(self, "target", Target(self.target))
        if not self.outputs:
            object.__setattr__(self, "outputs", (f"{self.task_id}.out",))

    def run(self, inputs: Mapping[str, bytes]) -> dict[str, bytes]:
        return self.kernel(self, inputs)


def seed_region(task_id: str) -> str:
    return f"seed/{task_id}"


class TaskGraph:
    """Acyclic task graph plus the initial data regions it reads."""

    def __init__(self, tasks: Iterable[Task], initial: Mapping[str, bytes] | None = None):
        self.tasks: dict[str, Task] = {}
        for t in tasks:
            if t.task_id in self.tasks:
                raise GraphError(f"duplicate task {t.task_id}")
            self.tasks[t.task_id] = t
        self.initial = dict(initial or {})
        producers = {}
        for t in self.tasks.values():
            for d in t.deps:
                if d not in self.tasks:
                    raise GraphError(f"task {t.task_id} depends on unknown task {d}")
            for o in t.outputs:
                producers[o] = t.task_id
        for t in self.tasks.values():
            for name in t.inputs:
                if name in self.initial:
                    continue
                p = producers.get(name)
                if p is None or p not in t.deps:
                    raise GraphError(f"task {t.task_id} reads {name} which no dependency produces")
        self._order = self._topo()

    def _topo(self) -> list[str]:
        indeg = {tid: len(t.deps) for tid, t in self.tasks.items()}
        children: dict[str, list[str]] = {tid: [] for tid in self.tasks}
        for tid, t in self.tasks.items():
            for d in t.deps:
                children[d].append(tid)
        pos = {tid: i for i, tid in enumerate(self.tasks)}
        ready = sorted((tid for tid, n in indeg.items() if n == 0), key=pos.get)
        order = []
        while ready:
            tid = ready.pop(0)
            order.append(tid)
            for c in children[tid]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
            ready.sort(key=pos.get)
        if len(order) != len(self.tasks):
            raise GraphError("task graph has a cycle")
        return order

    def order(self) -> list[str]:
        return list(self._order)

    def __len__(self) -> int:
        return len(self.tasks)

    def __iter__(self):
        return (self.tasks[t] for t in self._order)

    @property
    def total_work(self) -> float:
        return sum(t.work_cost for t in self.tasks.values())


def chain_graph(n: int, cost: float = 1.0) -> TaskGraph:
    tasks = []
    for i in range(1, n + 1):
        tid = f"t{i}"
        prev = f"t{i - 1}"
        if i == 1:
            tasks.append(Task(tid, inputs=(seed_region(tid),), work_cost=cost))
        else:
            tasks.append(Task(tid, inputs=(f"{prev}.out",), deps={prev}, work_cost=cost))
    return TaskGraph(tasks, {seed_region("t1"): b"seed"})


def parse_graph(text: str) -> TaskGraph:
    """Read ``task <id> deps=<csv> cost=<s> target=<local|boost> [node=<id>]`` lines."""
    tasks = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] != "task" or len(parts) < 2:
            raise GraphError(f"line {lineno}: expected 'task <id> ...'")
        tid = parts[1]
        kv = {}
        for tok in parts[2:]:
            k, sep, v = tok.partition("=")
            if not sep:
                raise GraphError(f"line {lineno}: bad field {tok!r}")
            kv[k] = v
        unknown = set(kv) - {"deps", "cost", "target", "node"}
        if unknown:
            raise GraphError(f"line {lineno}: unknown fields {sorted(unknown)}")
        deps = tuple(d for d in kv.get("deps", "").split(",") if d and d != "-")
        try:
            cost = float(kv.get("cost", "1"))
            nodes = tuple(int(x) for x in kv["node"].split(",")) if "node" in kv else ()
            target = Target(kv.get("target", "local"))
        except ValueError as exc:
            raise GraphError(f"line {lineno}: {exc}") from None
        inputs = tuple(f"{d}.out" for d in deps) or (seed_region(tid),)
        tasks.append(Task(tid, inputs=inputs, deps=frozenset(deps), target=target, nodes=nodes, work_cost=cost))
    initial = {seed_region(t.task_id): t.task_id.encode() for t in tasks if not t.deps}
    return TaskGraph(tasks, initial)


def dump_graph(graph: TaskGraph) -> str:
    lines = []
    for t in graph:
        deps = ",".join(sorted(t.deps)) or "-"
        node = f" node={','.join(map(str, t.nodes))}" if t.nodes else ""
        lines.append(f"task {t.task_id} deps={deps} cost={t.work_cost!r} target={t.target.value}{node}")
    return "\n".join(lines) + "\n"


def load_graph(path: str | Path) -> TaskGraph:
    return parse_graph(Path(path).read_text(encoding="utf-8"))


def input_digest(task: Task, store: Mapping[str, bytes]) -> int:
    return crc32c(b"".join(bytes(store[name]) for name in task.inputs))


def output_digest(task: Task, outputs: Mapping[str, bytes]) -> int:
    return crc32c(b"".join(bytes(outputs[name]) for name in task.outputs))


# -- lightweight in-memory checkpoints ------------------------------------------------

class SnapshotPool:
    """RAM accounting for live task-input snapshots."""

    def __init__(self):
        self.live: dict[str, int] = {}
        self.peak = 0

    @property
    def live_bytes(self) -> int:
        return sum(self.live.values())

    def take(self, task_id: str, nbytes: int) -> None:
        self.live[task_id] = nbytes
        self.peak = max(self.peak, self.live_bytes)

    def evict(self, task_id: str) -> None:
        self.live.pop(task_id, None)


FailureRule = Callable[[str, int], bool]


def _as_rule(failures) -> FailureRule:
    if failures is None:
        return lambda _t, _a: False
    if callable(failures):
        return failures
    rules = set(failures)
    return lambda t, a: (t, a) in rules


@dataclass
class LightweightReport:
    outputs: dict[str, bytes]
    executions: int
    restored: int


def run_task_lightweight(task: Task, store: MutableMapping[str, bytearray | bytes], max_retries: int = 3,
                         failures=None, pool: SnapshotPool | None = None,
                         counter: Counter | None = None) -> LightweightReport:
    """Run ``task`` with an in-RAM snapshot of its inputs.

    ``failures`` is a set of ``(task_id, attempt)`` pairs (attempts count from
    1) or a predicate on them; a failing attempt scribbles over the task's
    inputs, as a crashed task may, before it is detected.
    """
    if max_retries < 0:
        raise ValueError("max_retries must be >= 0")
    fails = _as_rule(failures)
    pool = pool if pool is not None else SnapshotPool()
    missing = [n for n in task.inputs if n not in store]
    if missing:
        raise GraphError(f"task {task.task_id}: inputs not materialized: {missing}")
    snapshot = {name: bytes(store[name]) for name in task.inputs}
    pool.take(task.task_id, sum(len(v) for v in snapshot.values()))
    restored = 0
    try:
        for attempt in range(1, max_retries + 2):
            if counter is not None:
                counter[task.task_id] += 1
            if not fails(task.task_id, attempt):
                outputs = task.run({n: bytes(store[n]) for n in task.inputs})
                for name, data in outputs.items():
                    store[name] = data
                return LightweightReport(outputs, attempt, restored)
            for name in task.inputs:
                store[name] = bytes(b ^ 0xA5 for b in bytes(store[name]))
            for name, data in snapshot.items():
                store[name] = data
            restored += 1
        raise RetriesExhausted(f"task {task.task_id} failed {max_retries + 1} times")
    finally:
        pool.evict(task.task_id)


def run_graph_lightweight(graph: TaskGraph, max_retries: int = 3, failures=None,
                          pool: SnapshotPool | None = None) -> tuple[dict[str, bytes], Counter]:
    store: dict[str, bytes] = dict(graph.initial)
    counter: Counter = Counter()
    for t in graph:
        run_task_lightweight(t, store, max_retries, failures, pool, counter)
    return {k: v for k, v in store.items() if k not in graph.initial}, counter


# -- persistent log and fast-forward -----------------------------------------------------

@dataclass(frozen=True)
class LogRecord:
    task_id: str
    input_digest: int
    output_digest: int
    status: str

    def line(self) -> str:
        return f"task={self.task_id} in={crc_hex(self.input_digest)} out={crc_hex(self.output_digest)} status={self.status}"

    @classmethod
    def parse(cls, line: str) -> "LogRecord":
        kv = dict(tok.partition("=")[::2] for tok in line.split())
        if kv.get("status") not in ("DONE", "FAILED"):
            raise LogCorrupt(f"bad status in {line!r}")
        try:
            return cls(kv["task"], int(kv["in"], 16), int(kv["out"], 16), kv["status"])
        except (KeyError, ValueError):
            raise LogCorrupt(f"malformed record {line!r}") from None


class TaskLog:
    """Append-only task completion log, with task outputs stored beside it."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.data_dir = self.path.with_name(self.path.name + ".data")
        self.records: dict[str, LogRecord] = {}
        self.bad_lines = 0
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                try:
                    rec = LogRecord.parse(line)
                except LogCorrupt:
                    self.bad_lines += 1
                    continue
                self.records[rec.task_id] = rec

    def append(self, rec: LogRecord) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(rec.line() + "\n")
        self.records[rec.task_id] = rec

    def _region_path(self, name: str) -> Path:
        return self.data_dir / (name.replace("/", "_") + ".bin")

    def save(self, regions: Mapping[str, bytes]) -> None:
        self.data_dir.mkdir(parents=True, exist_ok=True)
        for name, data in regions.items():
            self._region_path(name).write_bytes(bytes(data))

    def load(self, names: Sequence[str]) -> dict[str, bytes] | None:
        out = {}
        for name in names:
            p = self._region_path(name)
            if not p.exists():
                return None
            out[name] = p.read_bytes()
        return out


@dataclass
class PersistentReport:
    outputs: dict[str, bytes]
    executed: list[str]
    skipped: list[str]
    corrupt: list[str]
    crashed: bool
    log_seconds: float
    work_seconds: float

    @property
    def log_overhead(self) -> float:
        return self.log_seconds / self.work_seconds if self.work_seconds else 0.0


def run_graph_persistent(graph: TaskGraph, log: TaskLog, crash_at: str | None = None,
                         cluster=None, node: int = 0) -> PersistentReport:
    """Execute ``graph`` in order, logging each task; skip tasks the log proves done.

    With ``crash_at`` the application dies right after that task is logged.
    A DONE record whose digests disagree with the stored data is reported in
    ``corrupt`` and the task is run again.  Logging cost is priced as a write
    of each task's inputs and outputs to node-local storage.
    """
    if cluster is None:
        from .cluster_model import build_cluster

        cluster = build_cluster()
    tier = TierKind.NVME if cluster.has_tier(TierKind.NVME) else TierKind.HDD
    route = Route(Endpoint.at(node, TierKind.RAM), Endpoint.at(node, tier))
    store: dict[str, bytes] = dict(graph.initial)
    executed, skipped, corrupt = [], [], []
    log_s = work_s = 0.0
    for t in graph:
        digest = input_digest(t, store)
        rec = log.records.get(t.task_id)
        if rec is not None and rec.status == "DONE":
            saved = log.load(t.outputs)
            if rec.input_digest == digest and saved is not None and output_digest(t, saved) == rec.output_digest:
                store.update(saved)
                skipped.append(t.task_id)
                continue
            corrupt.append(t.task_id)
            logger.warning("task %s: log entry does not match stored data, re-executing", t.task_id)
        outputs = t.run({n: store[n] for n in t.inputs})
        work_s += t.work_cost
        store.update(outputs)
        log.save(outputs)
        log.append(LogRecord(t.task_id, digest, output_digest(t, outputs), "DONE"))
        nbytes = sum(len(store[n]) for n in t.inputs) + sum(len(v) for v in outputs.values())
        log_s += cluster.transfer_time(nbytes, route)
        executed.append(t.task_id)
        if crash_at is not None and t.task_id == crash_at:
            return PersistentReport({}, executed, skipped, corrupt, True, log_s, work_s)
    outputs = {k: v for k, v in store.items() if k not in graph.initial}
    return PersistentReport(outputs, executed, skipped, corrupt, False, log_s, work_s)


# -- resilient offload ---------------------------------------------------------------------

@dataclass
class OffloadReport:
    outputs: dict[str, bytes]
    wall: float
    executions: Counter
    reexecuted: list[str]
    placement: dict[str, int]
    failure_free: float | None = None


def _task_nodes(engine: Engine, t: Task) -> tuple[int, ...]:
    if t.nodes:
        return t.nodes
    if t.target is Target.OFFLOAD:
        return engine.cluster.booster_ids
    return engine.cluster.cluster_ids[:1]


def _simulate(graph: TaskGraph, engine: Engine, failure=None, detect_latency: float = 0.1,
              restart_lost: bool = True, until: float | None = None) -> OffloadReport:
    t_start = engine.now
    for t in graph:
        for n in _task_nodes(engine, t):
            if n not in engine.cluster.node_ids:
                raise UnknownNode(f"task {t.task_id} targets unknown node {n}")
    order = {tid: i for i, tid in enumerate(graph.order())}
    store: dict[str, bytes] = dict(graph.initial)
    done: set[str] = set()
    running: dict[str, int] = {}
    busy: dict[int, str] = {}
    executions: Counter = Counter()
    reexecuted: list[str] = []
    placement: dict[str, int] = {}
    failed_tasks: set[str] = set()
    requeue_at: dict[str, float] = {}
    last_done = t_start

    def candidates(t: Task) -> list[int]:
        nodes = [n for n in _task_nodes(engine, t) if n in engine.alive]
        if not nodes and t.target is Target.OFFLOAD:
            nodes = [n for n in engine.cluster.booster_ids if n in engine.alive]
        return nodes

    def dispatch() -> None:
        for tid in graph.order():
            t = graph.tasks[tid]
            if tid in done or tid in running or not t.deps <= done:
                continue
            if requeue_at.get(tid, t_start) > engine.now:
                continue
            nodes = candidates(t)
            if not nodes:
                raise NoSurvivors(f"no live node can run task {tid}")
            if tid in failed_tasks:
                # restarted tasks take the first free survivor
                free = [n for n in nodes if n not in busy]
                if not free:
                    continue
                chosen = free[0]
            elif nodes[0] in busy:
                continue
            else:
                chosen = nodes[0]
            start(t, chosen)

    def start(t: Task, node: int) -> None:
        executions[t.task_id] += 1
        busy[node] = t.task_id
        placement[t.task_id] = node
        running[t.task_id] = node
        engine.schedule(engine.now + t.work_cost, EventKind.TASK_DONE, node=node,
                        detail=f"task={t.task_id}", callback=lambda _e, t=t, node=node: finish(t, node))

    def finish(t: Task, node: int) -> None:
        nonlocal last_done
        running.pop(t.task_id, None)
        busy.pop(node, None)
        store.update(t.run({n: store[n] for n in t.inputs}))
        done.add(t.task_id)
        last_done = engine.now
        dispatch()

    def on_failure(_e) -> None:
        victims = set(failure.victims)
        lost = [tid for tid, node in running.items() if node in victims]
        for v in sorted(victims):
            engine.crash(v)
            busy.pop(v, None)
        for tid in sorted(lost, key=order.get):
            running.pop(tid)
            if restart_lost:
                failed_tasks.add(tid)
                reexecuted.append(tid)
                requeue_at[tid] = engine.now + detect_latency
        if lost and restart_lost:
            engine.schedule(engine.now + detect_latency, EventKind.NOTIFY, detail="failure detected",
                            callback=lambda _e: dispatch(), nodes=())

    if failure is not None:
        engine.schedule(t_start + failure.time, EventKind.FAILURE, node=min(failure.victims),
                        detail=f"{failure.kind.value} victims={','.join(map(str, sorted(failure.victims)))}",
                        callback=on_failure, nodes=())
    dispatch()
    if until is not None:
        engine.run_until(t_start + until)
        return OffloadReport({}, engine.now - t_start, executions, reexecuted, placement)
    engine.run()
    missing = set(graph.tasks) - done
    if missing:
        raise NoSurvivors(f"tasks never completed: {sorted(missing)}")
    outputs = {k: v for k, v in store.items() if k not in graph.initial}
    return OffloadReport(outputs, last_done - t_start, executions, reexecuted, placement)


def failure_free_time(graph: TaskGraph, cluster) -> float:
    with Engine(cluster) as shadow:
        return _simulate(graph, shadow).wall


def run_offload_resilient(graph: TaskGraph, engine: Engine, failure=None, detect_latency: float = 0.1,
                          resilient: bool = True) -> OffloadReport:
    """Run ``graph`` on ``engine``; ``failure.time`` is relative to the start.

    Resilient mode restarts only the tasks resident on the failed nodes, on a
    surviving node, once the failure is detected.  Otherwise the application
    is aborted at detection and rerun from scratch with the failed nodes
    replaced.
    """
    if resilient or failure is None:
        return _simulate(graph, engine, failure, detect_latency)
    t0 = engine.now
    first = _simulate(graph, engine, failure, detect_latency, restart_lost=False,
                      until=failure.time + detect_latency)
    engine.cancel_involving(engine.cluster.node_ids)
    for v in sorted(failure.victims):
        if v not in engine.alive:
            engine.revive(v)
    rerun = _simulate(graph, engine)
    executions = first.executions + rerun.executions
    again = sorted(tid for tid in first.executions if tid in rerun.executions)
    return OffloadReport(rerun.outputs, engine.now - t0, executions, again, rerun.placement)


def fwi_graph(workers: int = 8, stages: int = 8, cost: float = 10.0, reduce_cost: float = 0.5,
              booster: Sequence[int] | None = None) -> TaskGraph:
    """Shot-parallel FWI shape: ``stages`` rounds of ``workers`` offloaded tasks, then a reduce."""
    booster = list(booster) if booster is not None else list(range(16, 16 + workers))
    tasks = []
    initial = {}
    for s in range(stages):
        for w in range(workers):
            tid = f"s{s}w{w}"
            if s == 0:
                initial[seed_region(tid)] = f"shot{w}".encode()
                inputs, deps = (seed_region(tid),), frozenset()
            else:
                prev = f"s{s - 1}w{w}"
                inputs, deps = (f"{prev}.out",), frozenset({prev})
            tasks.append(Task(tid, inputs, deps=deps, target=Target.OFFLOAD, nodes=(booster[w % len(booster)],),
                              work_cost=cost))
    last = tuple(f"s{stages - 1}w{w}" for w in range(workers))
    tasks.append(Task("reduce", tuple(f"{t}.out" for t in last), deps=frozenset(last), target=Target.LOCAL,
                      work_cost=reduce_cost))
    return TaskGraph(tasks, initial)


__all__ = [
    "Target",
    "Task",
    "TaskGraph",
    "synthetic_kernel",
    "seed_region",
    "chain_graph",
    "parse_graph",
    "dump_graph",
    "load_graph",
    "input_digest",
    "output_digest",
    "SnapshotPool",
    "LightweightReport",
    "run_task_lightweight",
    "run_graph_lightweight",
    "LogRecord",
    "TaskLog",
    "PersistentReport",
    "run_graph_persistent",
    "OffloadReport",
    "run_offload_resilient",
    "failure_free_time",
    "fwi_graph",
]
