"""Scenario runner: synthetic workloads on the simulated machine.

Each scenario produces a :class:`MetricsTable` (one row per run) and the
concatenated event logs of its runs.  Compute phases are pure time; the
checkpoint payloads are small seeded samples standing in for the modeled
volume, so crc checks and reconstruction stay meaningful.
"""

from __future__ import annotations

import csv
import io
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .cluster_model import (
    GB,
    GLOBAL,
    ClusterSpec,
    Endpoint,
    Route,
    TierKind,
    Transfer,
    build_cluster,
    default_spec,
    read_kv,
    spec_from_kv,
    validate_spec,
)
from .ckpt_engine import Checkpointer, FlushMode, Strategy, need_checkpoint, price_checkpoint
from .errors import Infeasible, ScenarioError
from .recovery import FailureEvent, FailureKind, inject_failure, plan_recovery, restart
from .simnet import Engine, EventLog, LOG_COLUMNS
from .taskres import fwi_graph, run_offload_resilient

logger = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "scenario", "strategy", "nodes", "run", "total_s", "ckpt_overhead_s", "recovery_s",
    "bytes_local", "bytes_remote", "bytes_global", "bytes_nam", "savings_pct",
)

KINDS = ("app", "xor-compare", "weak-scale", "fwi")


@dataclass(frozen=True)
class Scenario:
    name: str
    kind: str = "app"
    strategy: Strategy = Strategy.PARTNER
    nodes: int = 8
    iterations: int = 100
    iter_seconds: float = 20.0
    bytes_per_node: int = 8 * GB
    cp_interval: int = 10
    fail_at: int | None = None
    fail_kind: FailureKind = FailureKind.NODE_CRASH
    victim: int = 0
    flush: FlushMode | None = None
    repetitions: int = 1
    sample_bytes: int = 4096
    seed: int = 2024
    group_size: int = 8
    node_counts: tuple[int, ...] = (2, 4, 8, 16)
    compare: tuple[Strategy, ...] = (Strategy.DIST_XOR, Strategy.NAM_XOR)

    @property
    def n_checkpoints(self) -> int:
        return self.iterations // self.cp_interval if self.cp_interval else 0

    def validate(self, spec: ClusterSpec | None = None) -> None:
        if self.kind not in KINDS:
            raise ScenarioError(f"unknown scenario kind {self.kind!r}")
        for name in ("nodes", "iterations", "bytes_per_node", "repetitions", "sample_bytes", "victim"):
            if getattr(self, name) < 0:
                raise ScenarioError(f"{name} must be >= 0")
        if self.iter_seconds < 0:
            raise ScenarioError("iter_seconds must be >= 0")
        if self.cp_interval < 1:
            raise ScenarioError("cp_interval must be >= 1")
        if self.repetitions < 1:
            raise ScenarioError("repetitions must be >= 1")
        if self.kind in ("app", "xor-compare") and self.nodes < 1:
            raise ScenarioError("nodes must be >= 1")
        if self.fail_at is not None:
            if not 1 <= self.fail_at <= self.iterations:
                raise ScenarioError(f"fail_at={self.fail_at} outside 1..{self.iterations}")
            if self.victim >= max(self.nodes, 1):
                raise ScenarioError(f"victim {self.victim} is not one of the {self.nodes} nodes")
        if spec is not None:
            total = spec.cluster_nodes + spec.booster_nodes
            need = max(self.node_counts) if self.kind == "weak-scale" else self.nodes
            if self.kind != "fwi" and need > total:
                raise ScenarioError(f"scenario needs {need} nodes, machine has {total}")


SCENARIOS: dict[str, Scenario] = {
    "xpic-scr": Scenario("xpic-scr", "app", Strategy.PARTNER, nodes=8, iterations=100, iter_seconds=20.0,
                         bytes_per_node=8 * GB, cp_interval=10, fail_at=60),
    "xor-vs-nam": Scenario("xor-vs-nam", "xor-compare", Strategy.NAM_XOR, nodes=8, iterations=100,
                           iter_seconds=10.0, bytes_per_node=2 * GB, cp_interval=10),
    "weak-scale-io": Scenario("weak-scale-io", "weak-scale", Strategy.SINGLE, bytes_per_node=10 * GB,
                              iterations=2, cp_interval=1, iter_seconds=0.0),
    "fwi-offload": Scenario("fwi-offload", "fwi", Strategy.SINGLE, nodes=8, iterations=8, iter_seconds=10.0,
                            cp_interval=1, fail_at=8, bytes_per_node=0),
}


_SCENARIO_KEYS = {
    "scenario.name": "name", "scenario.kind": "kind", "scenario.strategy": "strategy",
    "scenario.nodes": "nodes", "scenario.fail_at": "fail_at", "scenario.fail_kind": "fail_kind",
    "scenario.victim": "victim", "scenario.flush": "flush", "scenario.repetitions": "repetitions",
    "scenario.group_size": "group_size", "scenario.node_counts": "node_counts",
    "scenario.base": None,
    "workload.iterations": "iterations", "workload.iter_seconds": "iter_seconds",
    "workload.bytes_per_node": "bytes_per_node", "workload.cp_interval": "cp_interval",
    "workload.sample_bytes": "sample_bytes", "workload.seed": "seed",
}


def _coerce(name: str, value: str):
    try:
        if name in ("name", "kind"):
            return value
        if name == "strategy":
            return Strategy.parse(value)
        if name == "fail_kind":
            return FailureKind.parse(value)
        if name == "flush":
            return None if value.lower() in ("", "none", "-") else FlushMode(value.lower())
        if name == "fail_at":
            return None if value.lower() in ("", "none", "-") else int(float(value))
        if name == "node_counts":
            return tuple(int(x) for x in value.split(","))
        if name == "iter_seconds":
            return float(value)
        x = float(value)
        if not x.is_integer():
            raise ValueError(f"expected an integer, got {value!r}")
        return int(x)
    except ValueError as exc:
        raise ScenarioError(f"{name}: {exc}") from None


def apply_overrides(s: Scenario, kv: Mapping[str, str]) -> Scenario:
    """Apply ``scenario.*`` / ``workload.*`` keys; other sections are ignored."""
    changes = {}
    for key, value in kv.items():
        if not key.startswith(("scenario.", "workload.")):
            continue
        if key not in _SCENARIO_KEYS:
            raise ScenarioError(f"unknown key {key}")
        name = _SCENARIO_KEYS[key]
        if name is not None:
            changes[name] = _coerce(name, value)
    return replace(s, **changes)


def load_scenario(ref: str, configs: Sequence[str | Path] = ()) -> tuple[Scenario, ClusterSpec]:
    """Resolve a scenario name or file plus machine configs into (scenario, spec)."""
    spec = default_spec()
    if ref in SCENARIOS:
        s = SCENARIOS[ref]
    else:
        p = Path(ref)
        if not p.exists():
            raise ScenarioError(f"unknown scenario {ref!r} (named: {', '.join(SCENARIOS)})")
        kv = read_kv(p)
        base = kv.get("scenario.base")
        if base is not None and base not in SCENARIOS:
            raise ScenarioError(f"unknown base scenario {base!r}")
        s = SCENARIOS[base] if base else Scenario(kv.get("scenario.name", p.stem))
        s = apply_overrides(s, kv)
        spec = spec_from_kv(kv, spec)
    for cfg in configs:
        kv = read_kv(cfg)
        spec = spec_from_kv(kv, spec)
        s = apply_overrides(s, kv)
    validate_spec(spec)
    s.validate(spec)
    return s, spec


# -- metrics ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    if v is None:
        return ""
    return str(v)


@dataclass
class MetricsTable:
    rows: list[dict] = field(default_factory=list)
    events: list[tuple[str, EventLog]] = field(default_factory=list, repr=False)
    infeasible: bool = False
    notes: list[str] = field(default_factory=list)

    def add(self, **row) -> dict:
        full = {c: row.get(c) for c in METRIC_COLUMNS}
        self.rows.append(full)
        return full

    def row(self, run: str, strategy: str | None = None) -> dict:
        for r in self.rows:
            if r["run"] == run and (strategy is None or r["strategy"] == strategy):
                return r
        raise KeyError(run)

    def to_csv(self, dest=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in METRIC_COLUMNS])
        text = buf.getvalue()
        if dest is not None:
            Path(dest).write_text(text, encoding="utf-8")
        return text

    def events_csv(self, dest=None) -> str:
        buf = io.StringIO()
        buf.write(",".join(LOG_COLUMNS) + "\n")
        for label, log in self.events:
            log.to_csv(buf, prefix=f"[{label}]", header=False)
        text = buf.getvalue()
        if dest is not None:
            Path(dest).write_text(text, encoding="utf-8")
        return text


def sample_payload(seed: int, node: int, step: int, nbytes: int) -> bytes:
    return np.random.default_rng([seed, node, step]).bytes(nbytes)


def _byte_cols(engine: Engine) -> dict:
    b = engine.bytes
    return dict(bytes_local=b["local"], bytes_remote=b["remote"], bytes_global=b["global"], bytes_nam=b["nam"])


# -- app loop -------------------------------------------------------------------------

@dataclass
class AppRun:
    total: float
    overhead: float
    recovery: float
    redundancy: float
    engine_bytes: dict
    log: EventLog
    infeasible: bool = False
    restored_step: int | None = None
    checkpoints: int = 0


def run_app(s: Scenario, spec: ClusterSpec, strategy: Strategy, checkpoint: bool, fail: bool,
            rep: int = 0) -> AppRun:
    """Iterate compute phases, checkpointing every ``cp_interval`` steps.

    The failure fires once, after the compute phase of step ``fail_at`` and
    before that step's checkpoint.  Recovery resumes at the restored set's
    step; without a usable checkpoint the run restarts from step 0.
    """
    with Engine(build_cluster(spec), seed=s.seed + rep) as engine:
        ckpt = Checkpointer(engine, k=s.group_size)
        nodes = list(range(s.nodes))
        step = 0
        overhead = recovery = redundancy = 0.0
        failed = False
        infeasible = False
        restored_step = None
        checkpoints = 0
        seed = s.seed + rep
        while step < s.iterations:
            step += 1
            engine.advance(s.iter_seconds)
            if fail and not failed and s.fail_at is not None and step == s.fail_at:
                failed = True
                victim = nodes[s.victim]
                inject_failure(engine, FailureEvent(engine.now, s.fail_kind, {victim}))
                plan = plan_recovery(ckpt.db, {victim}, ckpt) if checkpoint else None
                if plan is not None and plan.feasible:
                    report = restart(ckpt, plan)
                    for n, data in report.payloads.items():
                        if data != sample_payload(seed, n, plan.step, s.sample_bytes):
                            raise AssertionError(f"node {n} restored the wrong payload")
                    recovery += report.seconds
                    restored_step = plan.step
                    nodes = sorted(set(nodes) & engine.alive)
                    step = plan.step
                    continue
                if plan is not None:
                    infeasible = True
                if victim not in engine.alive:
                    engine.revive(victim)
                step = 0
                restored_step = 0
                continue
            if checkpoint and need_checkpoint(step, s.cp_interval):
                payloads = {n: sample_payload(seed, n, step, s.sample_bytes) for n in nodes}
                res = ckpt.write_checkpoint(step, payloads, strategy, s.bytes_per_node)
                overhead += res.elapsed
                redundancy += res.redundancy_seconds
                checkpoints += 1
                if s.flush is not None:
                    fr = ckpt.flush(res.set.set_id, s.flush)
                    overhead += fr.seconds
        end = engine.now
        engine.run()
        return AppRun(end, overhead, recovery, redundancy, _byte_cols(engine), EventLog(engine.log),
                      infeasible, restored_step, checkpoints)


def _run_xpic(s: Scenario, spec: ClusterSpec, table: MetricsTable) -> None:
    variants = (("nocp-noerr", False, False), ("cp-noerr", True, False),
                ("nocp-err", False, True), ("cp-err", True, True))
    for rep in range(s.repetitions):
        runs = {}
        for label, cp, err in variants:
            if err and s.fail_at is None:
                continue
            run = run_app(s, spec, s.strategy, cp, err, rep)
            runs[label] = run
            name = label if s.repetitions == 1 else f"{label}.{rep}"
            table.events.append((name, run.log))
            table.infeasible |= run.infeasible
            table.add(scenario=s.name, strategy=s.strategy.value if cp else "none", nodes=s.nodes, run=name,
                      total_s=run.total, ckpt_overhead_s=run.overhead, recovery_s=run.recovery,
                      savings_pct=None, **run.engine_bytes)
        base = runs["nocp-noerr"].total
        table.rows[-len(runs) + 1]["savings_pct"] = -100.0 * (runs["cp-noerr"].total - base) / base if base else 0.0
        if "cp-err" in runs:
            ne = runs["nocp-err"].total
            table.rows[-1]["savings_pct"] = 100.0 * (ne - runs["cp-err"].total) / ne if ne else 0.0


def _run_xor_compare(s: Scenario, spec: ClusterSpec, table: MetricsTable) -> None:
    for rep in range(s.repetitions):
        runs = {}
        for strat in s.compare:
            run = run_app(replace(s, fail_at=None), spec, strat, True, False, rep)
            runs[strat] = run
            name = "cp" if s.repetitions == 1 else f"cp.{rep}"
            table.events.append((f"{strat.value}.{name}", run.log))
            table.add(scenario=s.name, strategy=strat.value, nodes=s.nodes, run=name, total_s=run.total,
                      ckpt_overhead_s=run.overhead, recovery_s=0.0, savings_pct=None, **run.engine_bytes)
        ref, new = runs[s.compare[0]].redundancy, runs[s.compare[-1]].redundancy
        table.rows[-1]["savings_pct"] = 100.0 * (ref - new) / ref if ref else 0.0


def weak_scaling_point(spec: ClusterSpec, n: int, nbytes: int, mode: str) -> tuple[Engine, float]:
    """One checkpoint wave of ``n`` nodes writing ``nbytes`` each; returns the engine and seconds."""
    engine = Engine(build_cluster(spec))
    tier = TierKind.NVME if engine.cluster.has_tier(TierKind.NVME) else TierKind.HDD
    nodes = range(n)
    if mode == "local":
        transfers = [Transfer(nbytes, Route(Endpoint.at(i, TierKind.RAM), Endpoint.at(i, tier))) for i in nodes]
    elif mode == "global":
        transfers = [Transfer(nbytes, Route(Endpoint.at(i, TierKind.RAM), GLOBAL), creates=1) for i in nodes]
    else:
        raise ScenarioError(f"unknown weak-scaling mode {mode!r}")
    durs = engine.price(transfers)
    for i, t, d in zip(nodes, transfers, durs):
        engine.record(t, engine.now + d, f"{mode} write n{i}")
    engine.run()
    return engine, max(durs)


def per_node_write_times(spec: ClusterSpec, counts: Sequence[int], nbytes: int) -> dict[str, list[float]]:
    out: dict[str, list[float]] = {"local": [], "global": []}
    for mode in out:
        for n in counts:
            engine, t = weak_scaling_point(spec, n, nbytes, mode)
            engine.close()
            out[mode].append(t)
    return out


def _run_weak(s: Scenario, spec: ClusterSpec, table: MetricsTable) -> None:
    n_cp = max(1, s.n_checkpoints)
    for rep in range(s.repetitions):
        for mode in ("local", "global"):
            for n in s.node_counts:
                engine, t = weak_scaling_point(spec, n, s.bytes_per_node, mode)
                bytes_cols = {k: v * n_cp for k, v in _byte_cols(engine).items()}
                name = "cp" if s.repetitions == 1 else f"cp.{rep}"
                table.events.append((f"{mode}.n{n}.{name}", EventLog(engine.log)))
                engine.close()
                table.add(scenario=s.name, strategy=mode, nodes=n, run=name, total_s=n_cp * t,
                          ckpt_overhead_s=n_cp * t, recovery_s=0.0, savings_pct=None, **bytes_cols)
        local = {r["nodes"]: r["total_s"] for r in table.rows if r["strategy"] == "local"}
        for r in table.rows:
            if r["strategy"] == "global" and r["total_s"]:
                r["savings_pct"] = 100.0 * (r["total_s"] - local[r["nodes"]]) / r["total_s"]


def fwi_setup(s: Scenario, spec: ClusterSpec):
    cluster = build_cluster(spec)
    if len(cluster.booster_ids) < 2:
        raise ScenarioError("fwi scenario needs at least 2 booster nodes")
    workers = min(s.nodes, len(cluster.booster_ids)) if s.nodes else len(cluster.booster_ids)
    graph = fwi_graph(workers=workers, stages=s.iterations, cost=s.iter_seconds,
                      booster=cluster.booster_ids[:workers])
    return cluster, graph


def _run_fwi(s: Scenario, spec: ClusterSpec, table: MetricsTable) -> None:
    cluster, graph = fwi_setup(s, spec)
    victim = cluster.booster_ids[s.victim % len(cluster.booster_ids)]
    for rep in range(s.repetitions):
        suffix = "" if s.repetitions == 1 else f".{rep}"
        with Engine(cluster) as eng:
            ff = run_offload_resilient(graph, eng)
            table.events.append((f"nofail{suffix}", EventLog(eng.log)))
        fail_time = ff.wall - 1.5 if s.fail_at is None else (s.fail_at - 1) * s.iter_seconds + 0.85 * s.iter_seconds
        failure = FailureEvent(fail_time, s.fail_kind, {victim})
        results = {}
        for label, resilient in (("resilient", True), ("naive", False)):
            with Engine(cluster) as eng:
                results[label] = run_offload_resilient(graph, eng, failure, resilient=resilient)
                table.events.append((f"{label}{suffix}", EventLog(eng.log)))
        table.add(scenario=s.name, strategy="offload", nodes=graph_workers(graph), run=f"nofail{suffix}",
                  total_s=ff.wall, ckpt_overhead_s=0.0, recovery_s=0.0, bytes_local=0, bytes_remote=0,
                  bytes_global=0, bytes_nam=0, savings_pct=None)
        naive = results["naive"].wall
        for label, rep_ in results.items():
            table.add(scenario=s.name, strategy="offload", nodes=graph_workers(graph), run=f"{label}{suffix}",
                      total_s=rep_.wall, ckpt_overhead_s=0.0, recovery_s=rep_.wall - ff.wall, bytes_local=0,
                      bytes_remote=0, bytes_global=0, bytes_nam=0,
                      savings_pct=100.0 * (naive - rep_.wall) / naive if label == "resilient" else 0.0)


def graph_workers(graph) -> int:
    return len({n for t in graph for n in t.nodes})


def run_scenario(s: Scenario, spec: ClusterSpec | None = None) -> MetricsTable:
    spec = spec or default_spec()
    s.validate(spec)
    table = MetricsTable()
    {"app": _run_xpic, "xor-compare": _run_xor_compare, "weak-scale": _run_weak, "fwi": _run_fwi}[s.kind](
        s, spec, table)
    return table


# -- calibration ---------------------------------------------------------------------------

@dataclass
class Calibration:
    target: str
    overrides: dict[str, str]
    values: dict[str, float]
    in_band: bool | None = None

    def config_text(self) -> str:
        lines = [f"# solved for {self.target}"]
        lines += [f"{k} = {v}" for k, v in self.overrides.items()]
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        vals = " ".join(f"{k}={v:.6g}" for k, v in self.values.items())
        band = "" if self.in_band is None else f" in_band={'yes' if self.in_band else 'no'}"
        return f"{self.target}: {vals}{band}"


_RATIO = re.compile(r"^scr-overhead\s*=\s*([-+0-9.eE]+)\s*%?$")
_BAND = re.compile(r"^nam-xor-saving\s*(?:∈|=|in)\s*\[\s*([0-9.]+)\s*,\s*([0-9.]+)\s*\]\s*%?$")


def xor_phase_saving(spec: ClusterSpec, nodes: int = 8, nbytes: int = 2 * GB, k: int = 8) -> dict[str, float]:
    cluster = build_cluster(spec)
    ids = list(range(nodes))
    dist = price_checkpoint(cluster, Strategy.DIST_XOR, nbytes, ids, k)
    nam = price_checkpoint(cluster, Strategy.NAM_XOR, nbytes, ids, k)
    ref, new = dist.redundancy_seconds, nam.redundancy_seconds
    return {"distxor_xor_s": ref, "namxor_xor_s": new, "saving_pct": 100.0 * (ref - new) / ref}


def calibrate(target: str, spec: ClusterSpec | None = None, scenario: Scenario | None = None) -> Calibration:
    """Solve the timeline equations for a documented calibration goal."""
    spec = spec or default_spec()
    target = target.strip()
    m = _RATIO.match(target)
    if m:
        ratio = float(m.group(1)) / 100.0
        s = scenario or SCENARIOS["xpic-scr"]
        if ratio <= 0:
            raise Infeasible("checkpoint overhead is positive, a ratio <= 0 is unreachable")
        price = price_checkpoint(build_cluster(spec), s.strategy, s.bytes_per_node, range(s.nodes), s.group_size)
        t_cp = price.elapsed
        n_cp = s.n_checkpoints
        if n_cp == 0 or s.iterations == 0:
            raise Infeasible("scenario writes no checkpoints")
        t_iter = n_cp * t_cp / (ratio * s.iterations)
        return Calibration(target, {"workload.iter_seconds": repr(t_iter)},
                           {"t_cp": t_cp, "t_iter": t_iter, "n_cp": n_cp})
    m = _BAND.match(target)
    if m:
        lo, hi = float(m.group(1)), float(m.group(2))
        if lo > hi:
            raise Infeasible(f"empty band [{lo}, {hi}]")
        s = scenario or SCENARIOS["xor-vs-nam"]
        vals = xor_phase_saving(spec, s.nodes, s.bytes_per_node, s.group_size)
        return Calibration(target, {}, vals, lo <= vals["saving_pct"] <= hi)
    raise ScenarioError(f"unknown calibration target {target!r}")


__all__ = [
    "Scenario",
    "SCENARIOS",
    "METRIC_COLUMNS",
    "MetricsTable",
    "load_scenario",
    "apply_overrides",
    "run_scenario",
    "run_app",
    "sample_payload",
    "weak_scaling_point",
    "per_node_write_times",
    "xor_phase_saving",
    "fwi_setup",
    "Calibration",
    "calibrate",
]
