import numpy as np
import pytest
from hypothesis import given, strategies as st

from deepckpt.ckpt_engine import (
    Checkpointer,
    CkptDb,
    FlushMode,
    SetState,
    Strategy,
    flush_to_global,
    form_groups,
    need_checkpoint,
    partner_of,
    price_checkpoint,
    stored_bytes,
    write_checkpoint,
    xor_encode,
)
from deepckpt.cluster_model import GB, build_cluster, default_spec
from deepckpt.crc import crc32c
from deepckpt.errors import FlushError, HopError, StrategyUnsupported, TierFull
from deepckpt.simnet import Engine
from deepckpt.xorcode import chunk_size
from oracles import log_uniform_spec

ALL = list(Strategy)


def payloads(nodes, seed=0, size=3000):
    rng = np.random.default_rng(seed)
    return {n: rng.bytes(int(rng.integers(size // 2, size))) for n in nodes}


@pytest.mark.parametrize("step,interval,expected", [(10, 10, True), (0, 10, False), (7, 10, False), (20, 10, True)])
def test_need_checkpoint(step, interval, expected):
    assert need_checkpoint(step, interval) is expected


def test_xor_encode_examples():
    b = bytes(range(16))
    assert xor_encode([b]) == b
    assert xor_encode([b, b]) == bytes(16)
    assert xor_encode([b"\x0f\xf0", b"\xff\x00"]) == b"\xf0\xf0"


def test_partner_examples():
    assert partner_of(0, 16, 1) == 1
    assert partner_of(15, 16, 1) == 0


@pytest.mark.parametrize("n", range(2, 65))
def test_partner_map_is_a_derangement(n):
    for hop in range(1, n):
        image = [partner_of(i, n, hop) for i in range(n)]
        assert sorted(image) == list(range(n))
        assert all(p != i for i, p in enumerate(image))


def test_partner_bad_hop():
    with pytest.raises(HopError):
        partner_of(0, 4, 4)
    with pytest.raises(HopError):
        partner_of(0, 1, 1)


def test_groups_are_consecutive():
    assert form_groups(range(16), 8) == [tuple(range(8)), tuple(range(8, 16))]
    assert form_groups(range(9), 4) == [(0, 1, 2, 3), (4, 5, 6, 7, 8)]
    with pytest.raises(StrategyUnsupported):
        form_groups([3], 8)


def test_single_eight_gb():
    p = price_checkpoint(build_cluster(), Strategy.SINGLE, 8 * GB)
    assert p.elapsed == pytest.approx(8e9 / 1.08e9 + 20e-6)
    assert all(round(v, 2) == 7.41 for v in p.overhead.values())


def test_buddy_saves_exactly_the_reread():
    c = build_cluster()
    buddy = price_checkpoint(c, Strategy.BUDDY, 8 * GB)
    partner = price_checkpoint(c, Strategy.PARTNER, 8 * GB)
    nvme_read = c.tier(0, "nvme")
    reread = 20e-6 + 8e9 / nvme_read.read_bw
    assert partner.elapsed - buddy.elapsed == pytest.approx(reread, rel=1e-12)
    assert partner.stages["reread"] == pytest.approx(reread)


def test_dist_xor_on_one_node(engine):
    with pytest.raises(StrategyUnsupported):
        Checkpointer(engine).write_checkpoint(1, {0: b"x"}, Strategy.DIST_XOR)


def test_nam_xor_cheaper_than_dist_xor_by_default():
    c = build_cluster()
    for nodes in (c.cluster_ids, c.node_ids, range(8)):
        nam = price_checkpoint(c, Strategy.NAM_XOR, 8 * GB, nodes)
        dist = price_checkpoint(c, Strategy.DIST_XOR, 8 * GB, nodes)
        assert nam.elapsed < dist.elapsed


@pytest.mark.parametrize("strategy", ALL)
def test_every_pipeline_verifies(engine, strategy):
    ck = Checkpointer(engine)
    data = payloads(range(8), 1)
    res = ck.write_checkpoint(10, data, strategy)
    engine.run()
    s = ck.db.sets[res.set.set_id]
    assert s.state is SetState.VALID
    for n, m in s.members.items():
        assert crc32c(engine.read(m.location)) == m.crc32c == crc32c(data[n])
        r = s.redundancy[n]
        if r.copy_loc:
            assert ck.read_copy(r.copy_loc) == data[n]


def test_set_ids_increase(engine):
    ck = Checkpointer(engine)
    ids = [ck.write_checkpoint(i * 10, payloads(range(4), i), Strategy.PARTNER).set.set_id for i in range(1, 5)]
    assert ids == sorted(set(ids))


def test_nam_set_pending_until_offload(engine):
    ck = Checkpointer(engine)
    res = ck.write_checkpoint(10, payloads(range(8)), Strategy.NAM_XOR, nominal=GB)
    assert res.commit_at > engine.now
    assert ck.db.sets[res.set.set_id].state is SetState.PENDING
    assert len(ck.db.pending()) == 1
    engine.run()
    assert ck.db.sets[res.set.set_id].state is SetState.VALID


def test_at_most_one_pending(engine):
    ck = Checkpointer(engine)
    for step in (10, 20, 30):
        ck.write_checkpoint(step, payloads(range(8), step), Strategy.NAM_XOR, nominal=GB)
        assert len(ck.db.pending()) <= 1


@pytest.mark.parametrize("strategy,factor", [(Strategy.PARTNER, 2), (Strategy.BUDDY, 2)])
def test_copies_double_storage(engine, strategy, factor):
    ck = Checkpointer(engine)
    res = ck.write_checkpoint(10, payloads(range(6)), strategy, nominal=GB)
    engine.run()
    b = stored_bytes(engine, res.set)
    assert b["payload"] == 6 * GB
    assert b["payload"] + b["redundancy"] == factor * 6 * GB


def test_dist_xor_parity_bytes(engine):
    ck = Checkpointer(engine)
    res = ck.write_checkpoint(10, payloads(range(16)), Strategy.DIST_XOR, nominal=7 * GB)
    engine.run()
    b = stored_bytes(engine, res.set)
    assert b["payload"] == 16 * 7 * GB
    assert b["redundancy"] == 2 * 8 * chunk_size(7 * GB, 8)
    assert b["redundancy"] < b["payload"] / 4


def test_nam_xor_parity_bytes(engine):
    ck = Checkpointer(engine)
    res = ck.write_checkpoint(10, payloads(range(16)), Strategy.NAM_XOR, nominal=GB)
    engine.run()
    b = stored_bytes(engine, res.set)
    assert b == {"payload": 16 * GB, "redundancy": 2 * GB}
    assert {engine.nams[0].live_bytes, engine.nams[1].live_bytes} == {GB}


def test_nam_parity_larger_than_device(engine):
    ck = Checkpointer(engine)
    with pytest.raises(TierFull):
        ck.write_checkpoint(10, payloads(range(8)), Strategy.NAM_XOR, nominal=8 * GB)


def test_keep_two_sets(engine):
    ck = Checkpointer(engine, keep=2)
    for step in (10, 20, 30, 40):
        ck.write_checkpoint(step, payloads(range(4), step), Strategy.PARTNER)
    engine.run()
    states = {s.step: s.state for s in ck.db.sets.values()}
    assert states == {10: SetState.INVALID, 20: SetState.INVALID, 30: SetState.VALID, 40: SetState.VALID}


def test_sync_flush_cost(engine):
    ck = Checkpointer(engine)
    n = 4
    res = ck.write_checkpoint(10, payloads(range(n)), Strategy.SINGLE, nominal=8 * GB)
    engine.run()
    c = engine.cluster
    fl = flush_to_global(ck, res.set.set_id, FlushMode.SYNC)
    lat = 20e-6 + c.spec.global_fs.access_latency + c.spec.network.base_latency
    assert fl.seconds == pytest.approx(lat + n * c.spec.file_create_cost + n * 8e9 / 2e9)
    s = ck.db.sets[res.set.set_id]
    assert s.state is SetState.FLUSHED
    assert all(engine.read(s.global_locs[m]) == engine.read(s.members[m].location) for m in s.nodes)


def test_async_flush_hidden_by_compute(engine):
    ck = Checkpointer(engine)
    s1 = ck.write_checkpoint(10, payloads(range(4)), Strategy.SINGLE, nominal=8 * GB)
    engine.run()
    fl = ck.flush(s1.set.set_id, FlushMode.ASYNC)
    assert fl.seconds == 0.0
    engine.advance(1000.0)
    s2 = ck.write_checkpoint(20, payloads(range(4), 2), Strategy.SINGLE, nominal=8 * GB)
    assert "wait" not in s2.stages
    assert ck.db.sets[s1.set.set_id].state is SetState.FLUSHED


def test_async_flush_waited_on_by_next_checkpoint(engine):
    ck = Checkpointer(engine)
    s1 = ck.write_checkpoint(10, payloads(range(4)), Strategy.SINGLE, nominal=8 * GB)
    engine.run()
    fl = ck.flush(s1.set.set_id, FlushMode.ASYNC)
    s2 = ck.write_checkpoint(20, payloads(range(4), 2), Strategy.SINGLE, nominal=8 * GB)
    assert s2.stages["wait"] == pytest.approx(fl.done_at - s1.commit_at)


def test_async_flush_interrupted_by_crash(engine):
    ck = Checkpointer(engine)
    res = ck.write_checkpoint(10, payloads(range(4)), Strategy.PARTNER, nominal=8 * GB)
    engine.run()
    ck.flush(res.set.set_id, FlushMode.ASYNC)
    engine.advance(1.0)
    engine.crash(2)
    engine.run()
    assert ck.db.sets[res.set.set_id].state is SetState.VALID


def test_flush_requires_valid(engine):
    ck = Checkpointer(engine)
    res = ck.write_checkpoint(10, payloads(range(8)), Strategy.NAM_XOR, nominal=GB)
    with pytest.raises(FlushError):
        ck.flush(res.set.set_id)


def test_db_replay(engine, tmp_path):
    db_path = tmp_path / "ckpt.db"
    ck = Checkpointer(engine, db_path=db_path)
    for i, strategy in enumerate(ALL * 2, start=1):
        res = ck.write_checkpoint(i * 10, payloads(range(8), i), strategy, nominal=GB)
        engine.run()
        if i % 3 == 0:
            ck.flush(res.set.set_id)
    assert CkptDb.replay(db_path).snapshot() == ck.db.snapshot()


@given(st.lists(st.sampled_from(ALL), min_size=1, max_size=6), st.integers(2, 10))
def test_db_replay_property(seq, n):
    with Engine() as eng:
        ck = Checkpointer(eng)
        for i, strategy in enumerate(seq, start=1):
            if strategy.uses_xor and n < 2:
                continue
            res = ck.write_checkpoint(i, payloads(range(n), i, 400), strategy)
            eng.run()
            if i % 2:
                ck.flush(res.set.set_id, FlushMode.ASYNC)
        eng.run()
        assert CkptDb.replay(ck.db.path).snapshot() == ck.db.snapshot()


def test_module_level_write(engine):
    res = write_checkpoint(engine, 10, payloads(range(2)), "single")
    assert res.elapsed > 0
    assert res.set.strategy is Strategy.SINGLE


@given(st.integers(0, 2**32 - 1), st.sampled_from([10**6, GB, 8 * GB]), st.sampled_from(["all", "cluster", "four"]))
def test_single_buddy_partner_ordering(seed, nbytes, which):
    c = build_cluster(log_uniform_spec(default_spec(), np.random.default_rng(seed), 0.25, 4.0))
    nodes = {"all": c.node_ids, "cluster": c.cluster_ids, "four": range(4)}[which]
    p = {s: price_checkpoint(c, s, nbytes, list(nodes)).elapsed for s in (Strategy.SINGLE, Strategy.BUDDY, Strategy.PARTNER)}
    assert p[Strategy.SINGLE] < p[Strategy.BUDDY] < p[Strategy.PARTNER]
