"""Failure injection, recovery planning and restart.

Planning is a pure function of the checkpoint database and what is still
reachable: for the newest usable set every member's payload gets its
cheapest source.  Restart executes that plan through the engine, priced by
the same stage model, so the planned cost equals the charged cost.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .cluster_model import GLOBAL, Endpoint, Route, TierKind, Transfer
from .ckpt_engine import Checkpointer, CheckpointSet, CkptDb, SetState, Stage, Step, XorGroup, run_stages
from .crc import crc32c
from .errors import CrcMismatch, PlanStale, TooManyErasures, UnknownNode
from .simnet import Engine, EventKind, parse_nam_loc
from .xorcode import chunk_size, rotated_decode, xor_fold

logger = logging.getLogger(__name__)


class FailureKind(str, enum.Enum):
    NODE_CRASH = "crash"
    PROCESS_TRANSIENT = "transient"

    @classmethod
    def parse(cls, v: "str | FailureKind") -> "FailureKind":
        if isinstance(v, FailureKind):
            return v
        v = v.strip().lower()
        for k in cls:
            if v in (k.value, k.name.lower()):
                return k
        raise ValueError(f"unknown failure kind {v!r}")


@dataclass(frozen=True)
class FailureEvent:
    time: float
    kind: FailureKind
    victims: frozenset[int]

    def __post_init__(self):
        object.__setattr__(self, "kind", FailureKind.parse(self.kind))
        object.__setattr__(self, "victims", frozenset(self.victims))
        if not self.victims:
            raise ValueError("a failure needs at least one victim")


def inject_failure(engine: Engine, event: FailureEvent) -> Engine:
    """Run the engine up to ``event.time`` and apply the failure."""
    unknown = set(event.victims) - set(engine.cluster.node_ids)
    if unknown:
        raise UnknownNode(f"unknown victims {sorted(unknown)}")
    if event.time < engine.now:
        raise ValueError(f"failure at {event.time} is before now={engine.now}")

    def apply(_ev) -> None:
        for v in sorted(event.victims):
            if event.kind is FailureKind.NODE_CRASH:
                engine.crash(v)
            else:
                engine.clear_volatile(v)

    victims = ",".join(str(v) for v in sorted(event.victims))
    engine.schedule(event.time, EventKind.FAILURE, node=min(event.victims),
                    detail=f"{event.kind.value} victims={victims}", callback=apply, nodes=())
    engine.run_until(event.time)
    return engine


class Source(str, enum.Enum):
    LOCAL = "LOCAL"
    PARTNER_COPY = "PARTNER_COPY"
    XOR_RECONSTRUCT = "XOR_RECONSTRUCT"
    GLOBAL_FS = "GLOBAL_FS"


@dataclass(frozen=True)
class SourceChoice:
    node: int
    source: Source
    target: int
    cost: float


@dataclass
class RecoveryPlan:
    source_set: int | None
    step: int | None
    sources: dict[int, Source]
    estimated_cost: float
    feasible: bool
    choices: dict[int, SourceChoice] = field(default_factory=dict)
    placement: dict[int, int] = field(default_factory=dict)
    spares: tuple[int, ...] = ()
    topology_version: int = -1
    reason: str = ""
    bytes_estimate: int = 0


def _reachable_payload(engine: Engine, s: CheckpointSet, node: int) -> bool:
    return node in engine.alive and engine.reachable(s.members[node].location)


def _xor_ok(engine: Engine, s: CheckpointSet, group: XorGroup, missing: int) -> bool:
    others = [m for m in group.members if m != missing]
    if not all(_reachable_payload(engine, s, m) for m in others):
        return False
    if group.rotated:
        return all(engine.reachable(group.parity_locations[m]) for m in others)
    return engine.reachable(group.parity_locations[missing])


def _steps_for(ctx: Checkpointer, s: CheckpointSet, node: int, source: Source, target: int) -> tuple[list[Step], float]:
    """Transfers that bring ``node``'s payload into ``target``'s RAM, plus host XOR seconds."""
    tier = ctx.tier
    nom = s.members[node].nominal
    dst = Endpoint.at(target, TierKind.RAM)
    if source is Source.LOCAL:
        return [Step(Transfer(nom, Route(Endpoint.at(node, tier), dst)), (target,), "reload")], 0.0
    if source is Source.PARTNER_COPY:
        p = s.redundancy[node].partner
        return [Step(Transfer(nom, Route(Endpoint.at(p, tier), dst)), (target,), f"copy from n{p}")], 0.0
    if source is Source.GLOBAL_FS:
        return [Step(Transfer(nom, Route(GLOBAL, dst)), (target,), "global")], 0.0
    group = s.group_of(node)
    others = [m for m in group.members if m != node]
    xor_bw = ctx.cluster.spec.host_xor_bw
    steps = []
    if group.rotated:
        c = chunk_size(group.nominal_block, group.k)
        for m in others:
            src = Endpoint.at(m, tier)
            steps.append(Step(Transfer((group.k - 2) * c, Route(src, dst)), (target,), f"chunks n{m}"))
            steps.append(Step(Transfer(c, Route(src, dst)), (target,), f"parity n{m}"))
        return steps, (group.k - 1) * (group.k - 1) * c / xor_bw
    idx, _, _, _ = parse_nam_loc(group.parity_locations[node])
    steps.append(Step(Transfer(group.nominal_block, Route(Endpoint.nam_device(idx), dst)), (target,), "parity"))
    for m in others:
        steps.append(Step(Transfer(s.members[m].nominal, Route(Endpoint.at(m, tier), dst)), (target,),
                          f"payload n{m}"))
    return steps, group.k * group.nominal_block / xor_bw


def _stages(ctx: Checkpointer, s: CheckpointSet, choices: Mapping[int, SourceChoice]) -> list[Stage]:
    fetch, compute = Stage("fetch"), Stage("xor")
    for node in sorted(choices):
        ch = choices[node]
        steps, sec = _steps_for(ctx, s, node, ch.source, ch.target)
        fetch.steps.extend(steps)
        if sec:
            compute.compute[ch.target] = compute.compute.get(ch.target, 0.0) + sec
    return [fetch, compute]


def _plan_cost(ctx: Checkpointer, s: CheckpointSet, choices: Mapping[int, SourceChoice]) -> float:
    stages = _stages(ctx, s, choices)
    actors = {a for st in stages for step in st.steps for a in step.actors} | set(stages[1].compute)
    return run_stages(ctx.cluster, stages, actors).elapsed if actors else 0.0


def _placement(engine: Engine, ctx: Checkpointer, crashed: list[int]) -> tuple[dict[int, int], tuple[int, ...]]:
    spares = tuple(crashed[:engine.spares_left])
    placement = {v: v for v in spares}
    rest = crashed[len(spares):]
    if rest:
        survivors = sorted(engine.alive)
        if not survivors:
            return placement, spares
        free = {n: engine.store(n, ctx.tier).free for n in survivors}
        for v in rest:
            best = max(survivors, key=lambda n: (free[n], -n))
            placement[v] = best
    return placement, spares


def plan_recovery(db: CkptDb, failed: Iterable[int], context: Checkpointer) -> RecoveryPlan:
    """Newest set whose every member payload can be supplied, with per-node sources.

    ``failed`` names the nodes whose process state was lost.  Crashed nodes
    (no longer alive) are re-homed onto a spare while spares last, else onto
    the survivor with the most free persistent storage.
    """
    engine = context.engine
    failed = sorted(set(failed))
    crashed = [v for v in failed if v not in engine.alive]
    placement, spares = _placement(engine, context, crashed)
    for v in failed:
        placement.setdefault(v, v)
    if len(db) == 0:
        return RecoveryPlan(None, None, {}, 0.0, False, reason="no checkpoints",
                            topology_version=engine.topology_version)
    reasons = []
    for s in db.newest_first():
        if s.state not in (SetState.VALID, SetState.FLUSHED):
            continue
        choices: dict[int, SourceChoice] = {}
        missing = []
        for node in s.nodes:
            target = placement.get(node, node)
            if target not in engine.alive and target not in spares:
                missing.append(node)
                continue
            options = []
            if _reachable_payload(engine, s, node):
                options.append(Source.LOCAL)
            red = s.redundancy.get(node)
            if red is not None and red.copy_loc and engine.reachable(red.copy_loc):
                options.append(Source.PARTNER_COPY)
            group = s.group_of(node)
            if group is not None and not _reachable_payload(engine, s, node) and _xor_ok(engine, s, group, node):
                options.append(Source.XOR_RECONSTRUCT)
            if engine.reachable(s.global_locs.get(node)):
                options.append(Source.GLOBAL_FS)
            if not options:
                missing.append(node)
                continue
            scored = []
            for src in options:
                c = _plan_cost(context, s, {node: SourceChoice(node, src, target, 0.0)})
                scored.append((c, list(Source).index(src), src))
            cost, _, src = min(scored)
            choices[node] = SourceChoice(node, src, target, cost)
        if missing:
            reasons.append(f"set {s.set_id}: no source for nodes {missing}")
            continue
        total_bytes = sum(st.transfer.size for v in failed if v in choices
                          for st in _steps_for(context, s, v, choices[v].source, choices[v].target)[0])
        return RecoveryPlan(
            source_set=s.set_id,
            step=s.step,
            sources={v: choices[v].source for v in failed if v in choices},
            estimated_cost=_plan_cost(context, s, choices),
            feasible=True,
            choices=choices,
            placement={v: placement[v] for v in failed if v in s.members},
            spares=tuple(v for v in spares if v in s.members),
            topology_version=engine.topology_version,
            bytes_estimate=total_bytes,
        )
    return RecoveryPlan(None, None, {}, 0.0, False, reason="; ".join(reasons) or "no usable set",
                        topology_version=engine.topology_version)


def reconstruct_xor(group: XorGroup, surviving: Mapping[int, bytes], parity, original_len: int | None = None,
                    crc: int | None = None) -> bytes:
    """Rebuild the one member of ``group`` absent from ``surviving``.

    ``parity`` is the whole-block parity, or for a rotated group a mapping of
    member to parity slice.
    """
    missing = [m for m in group.members if m not in surviving]
    if len(missing) != 1:
        raise TooManyErasures(f"expected exactly one missing member, got {missing}")
    lost = missing[0]
    length = group.block_len if original_len is None else original_len
    if group.rotated:
        pos = {m: i for i, m in enumerate(group.members)}
        data = rotated_decode(
            pos[lost],
            {pos[m]: b for m, b in surviving.items()},
            {pos[m]: p for m, p in parity.items() if m != lost},
            group.k,
            group.block_len,
        )
    else:
        data = xor_fold([parity, *surviving.values()], group.block_len)
    data = data[:length]
    if crc is not None and crc32c(data) != crc:
        raise CrcMismatch(f"reconstruction of node {lost} does not match its checksum")
    return data


@dataclass
class RestartReport:
    step: int
    set_id: int
    seconds: float
    bytes_moved: int
    sources: dict[int, Source]
    placement: dict[int, int]
    payloads: dict[int, bytes] = field(repr=False)

    CSV_HEADER = "set_id,step,recovery_s,bytes_moved,sources"

    def csv_row(self) -> str:
        src = ";".join(f"{n}:{s.value}" for n, s in sorted(self.sources.items()))
        return f"{self.set_id},{self.step},{self.seconds!r},{self.bytes_moved},{src}"


def _fetch(ctx: Checkpointer, s: CheckpointSet, node: int, source: Source) -> bytes:
    eng = ctx.engine
    m = s.members[node]
    if source is Source.LOCAL:
        return eng.read(m.location)
    if source is Source.PARTNER_COPY:
        return ctx.read_copy(s.redundancy[node].copy_loc)
    if source is Source.GLOBAL_FS:
        return eng.read(s.global_locs[node])
    group = s.group_of(node)
    surviving = {o: eng.read(s.members[o].location) for o in group.members if o != node}
    if group.rotated:
        parity = {o: eng.read(group.parity_locations[o]) for o in group.members if o != node}
    else:
        parity = eng.read(group.parity_locations[node])
    return reconstruct_xor(group, surviving, parity, m.bytes, m.crc32c)


def restart(ctx: Checkpointer, plan: RecoveryPlan) -> RestartReport:
    """Execute ``plan``: fetch, reconstruct, verify and re-place every payload."""
    eng = ctx.engine
    if not plan.feasible:
        raise PlanStale(f"cannot execute an infeasible plan: {plan.reason}")
    if plan.topology_version != eng.topology_version:
        raise PlanStale("topology changed since the plan was made")
    s = ctx.db.sets[plan.source_set]
    data = {}
    for node in sorted(plan.choices):
        ch = plan.choices[node]
        payload = _fetch(ctx, s, node, ch.source)
        if crc32c(payload) != s.members[node].crc32c:
            raise CrcMismatch(f"restored payload of node {node} does not verify")
        data[node] = payload

    for v in plan.spares:
        eng.revive(v)
        eng.spares_left -= 1
    t0 = eng.now
    stages = _stages(ctx, s, plan.choices)
    actors = {a for st in stages for step in st.steps for a in step.actors} | set(stages[1].compute)
    timing = run_stages(ctx.cluster, stages, actors, t0)
    moved = 0
    victims = set(plan.sources)
    for stage, ends in zip(stages, timing.ends):
        for st, end in zip(stage.steps, ends):
            eng.record(st.transfer, end, f"restore set={s.set_id} {st.label}")
    for node in sorted(plan.choices):
        ch = plan.choices[node]
        if node in victims:
            moved += sum(st.transfer.size for st in _steps_for(ctx, s, node, ch.source, ch.target)[0])
        eng.write(ch.target, TierKind.RAM, f"restore/n{node:03d}.bin", data[node], s.members[node].nominal)
    eng.run_until(t0 + timing.elapsed)
    return RestartReport(
        step=s.step,
        set_id=s.set_id,
        seconds=timing.elapsed,
        bytes_moved=moved,
        sources=dict(plan.sources),
        placement={n: plan.choices[n].target for n in plan.choices},
        payloads=data,
    )


__all__ = [
    "FailureKind",
    "FailureEvent",
    "inject_failure",
    "Source",
    "SourceChoice",
    "RecoveryPlan",
    "plan_recovery",
    "reconstruct_xor",
    "RestartReport",
    "restart",
]
