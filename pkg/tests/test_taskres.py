import re
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from deepckpt.errors import GraphError, RetriesExhausted
from deepckpt.recovery import FailureEvent, FailureKind
from deepckpt.simnet import Engine
from dags import fail_mid_task, random_dag, reference_outputs
from deepckpt.taskres import (
    SnapshotPool,
    Target,
    Task,
    TaskGraph,
    TaskLog,
    chain_graph,
    dump_graph,
    failure_free_time,
    fwi_graph,
    parse_graph,
    run_graph_lightweight,
    run_graph_persistent,
    run_offload_resilient,
    run_task_lightweight,
    seed_region,
)


# -- graph


def test_cycle_rejected():
    with pytest.raises(GraphError):
        TaskGraph([Task("a", ("b.out",), deps={"b"}), Task("b", ("a.out",), deps={"a"})])


def test_unknown_dependency():
    with pytest.raises(GraphError):
        TaskGraph([Task("a", ("z.out",), deps={"z"})])


def test_text_format_roundtrip():
    g = fwi_graph(workers=3, stages=2)
    again = parse_graph(dump_graph(g))
    assert dump_graph(again) == dump_graph(g)
    assert again.order() == g.order()


def test_text_format_errors():
    with pytest.raises(GraphError):
        parse_graph("job a\n")
    with pytest.raises(GraphError):
        parse_graph("task a color=red\n")


# -- lightweight


def test_no_failures_runs_once():
    g = chain_graph(1)
    pool = SnapshotPool()
    counter = Counter()
    store = dict(g.initial)
    report = run_task_lightweight(g.tasks["t1"], store, pool=pool, counter=counter)
    assert report.executions == 1 and counter["t1"] == 1
    assert pool.live_bytes == 0 and pool.peak == len(b"seed")


def test_two_failures_three_runs():
    g = chain_graph(3)
    expected = reference_outputs(g)
    out, counter = run_graph_lightweight(g, max_retries=3, failures={("t2", 1), ("t2", 2)})
    assert counter["t2"] == 3
    assert out == expected


def test_retries_exhausted():
    g = chain_graph(2)
    with pytest.raises(RetriesExhausted):
        run_graph_lightweight(g, max_retries=3, failures=lambda t, a: t == "t2")


def test_snapshot_tracks_running_inputs():
    g = chain_graph(2)
    pool = SnapshotPool()
    seen = []

    def failing(task_id, attempt):
        seen.append(pool.live_bytes)
        return attempt == 1

    store = dict(g.initial)
    run_task_lightweight(g.tasks["t1"], store, failures=failing, pool=pool)
    assert seen == [len(b"seed")] * 2
    assert pool.live_bytes == 0


@given(st.integers(0, 2**31))
def test_lightweight_outputs_deterministic(seed):
    g = random_dag(seed)
    rng = np.random.default_rng(seed)
    fails = {(t, a) for t in g.tasks for a in (1, 2) if rng.random() < 0.3}
    assert run_graph_lightweight(g, 3, fails)[0] == reference_outputs(g)


# -- persistent log


def test_chain_crash_and_replay(tmp_path):
    g = chain_graph(10)
    log = TaskLog(tmp_path / "tasks.log")
    first = run_graph_persistent(g, log, crash_at="t5")
    assert first.crashed and first.executed == [f"t{i}" for i in range(1, 6)]
    replay = run_graph_persistent(g, TaskLog(tmp_path / "tasks.log"))
    assert replay.skipped == [f"t{i}" for i in range(1, 6)]
    assert replay.executed == [f"t{i}" for i in range(6, 11)]
    assert replay.outputs == reference_outputs(g)


def test_empty_log_runs_everything(tmp_path):
    g = chain_graph(4)
    rep = run_graph_persistent(g, TaskLog(tmp_path / "t.log"))
    assert rep.executed == g.order() and rep.skipped == []


def test_tampered_digest_reexecutes(tmp_path):
    g = chain_graph(4)
    path = tmp_path / "t.log"
    run_graph_persistent(g, TaskLog(path))
    lines = path.read_text().splitlines()
    good = re.search(r"out=([0-9a-f]{8})", lines[1]).group(1)
    lines[1] = lines[1].replace(f"out={good}", "out=" + ("deadbeef" if good != "deadbeef" else "00000000"))
    path.write_text("\n".join(lines) + "\n")
    rep = run_graph_persistent(g, TaskLog(path))
    assert rep.corrupt == ["t2"] and rep.executed == ["t2"]
    assert rep.outputs == reference_outputs(g)


def test_garbled_log_line(tmp_path):
    g = chain_graph(3)
    path = tmp_path / "t.log"
    run_graph_persistent(g, TaskLog(path))
    with open(path, "a") as f:
        f.write("task=t9 in=zz\n")
    log = TaskLog(path)
    assert log.bad_lines == 1
    assert run_graph_persistent(g, log).executed == []


def test_logging_overhead_below_one_percent(tmp_path):
    g = fwi_graph()
    rep = run_graph_persistent(g, TaskLog(tmp_path / "fwi.log"))
    assert rep.log_overhead < 0.01


# -- resilient offload


def test_one_of_eight_tasks_reexecuted():
    booster = list(range(16, 24))
    g = TaskGraph([Task(f"o{i}", (seed_region(f"o{i}"),), target=Target.OFFLOAD, nodes=(b,), work_cost=10.0)
                   for i, b in enumerate(booster)], {seed_region(f"o{i}"): bytes([i]) for i in range(8)})
    with Engine() as eng:
        rep = run_offload_resilient(g, eng, FailureEvent(5.0, FailureKind.NODE_CRASH, {19}))
    assert rep.reexecuted == ["o3"]
    assert rep.executions["o3"] == 2 and sum(rep.executions.values()) == 9
    assert rep.placement["o3"] != 19
    assert rep.outputs == reference_outputs(g)


def test_failure_after_offload_completes():
    g = fwi_graph(workers=4, stages=2)
    with Engine() as eng:
        ff = failure_free_time(g, eng.cluster)
        rep = run_offload_resilient(g, eng, FailureEvent(ff + 5, FailureKind.NODE_CRASH, {16}))
    assert rep.reexecuted == []
    assert set(rep.executions.values()) == {1}


@pytest.mark.parametrize("seed", range(10))
def test_reexecutes_only_resident_tasks(seed):
    g = random_dag(seed, 30, offload=True)
    failure, resident = fail_mid_task(g, seed)
    assert resident
    with Engine() as eng:
        rep = run_offload_resilient(g, eng, failure)
    assert sorted(rep.reexecuted) == resident
    assert sum(rep.executions.values()) == len(g) + len(resident)
    assert rep.outputs == reference_outputs(g)


def test_fwi_ratios():
    g = fwi_graph()
    with Engine() as eng:
        ff = failure_free_time(g, eng.cluster)
    fail = FailureEvent(78.5, FailureKind.NODE_CRASH, {16})
    with Engine() as eng:
        resilient = run_offload_resilient(g, eng, fail).wall
    with Engine() as eng:
        naive = run_offload_resilient(g, eng, fail, resilient=False).wall
    assert resilient <= 1.25 * ff
    assert naive / ff == pytest.approx(2.0, rel=0.10)
