import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from deepckpt.cluster_model import (
    GB,
    GLOBAL,
    Endpoint,
    Route,
    TierKind,
    Transfer,
    build_cluster,
    default_config_path,
    default_spec,
    dump_config,
    load_config,
    parse_kv,
    spec_from_kv,
)
from deepckpt.errors import SpecError
from oracles import log_uniform_spec


def ram(n):
    return Endpoint.at(n, TierKind.RAM)


def nvme(n):
    return Endpoint.at(n, TierKind.NVME)


def test_default_has_24_nodes():
    c = build_cluster()
    assert len(c.node_ids) == 24
    assert c.cluster_ids == tuple(range(16))
    assert c.booster_ids == tuple(range(16, 24))
    assert len(c.nams) == 2
    assert c.tier(0, TierKind.NVME).capacity == 400 * GB


def test_booster_free_cluster_is_valid():
    c = build_cluster(default_spec().replace(booster_nodes=0))
    assert c.booster_ids == ()
    assert len(c.node_ids) == 16


def test_zero_link_bandwidth_rejected():
    import dataclasses as dc

    spec = default_spec()
    bad = spec.replace(network=dc.replace(spec.network, link_bw=0))
    with pytest.raises(SpecError) as exc:
        build_cluster(bad)
    assert exc.value.field == "network.link_bw"
    assert exc.value.reason == "must be > 0"


@pytest.mark.parametrize("change", [
    {"cluster_nodes": 0},
    {"booster_nodes": -1},
])
def test_node_counts_validated(change):
    with pytest.raises(SpecError):
        build_cluster(default_spec().replace(**change))


def test_ram_must_outrun_nvme():
    import dataclasses as dc

    spec = default_spec()
    tiers = list(spec.tiers_per_node)
    tiers[0] = dc.replace(tiers[0], write_bw=tiers[1].write_bw / 2)
    with pytest.raises(SpecError):
        build_cluster(spec.replace(tiers_per_node=tuple(tiers)))


def test_zero_bytes_costs_latency_only():
    c = build_cluster()
    r = Route(ram(0), ram(1))
    assert c.transfer_time(0, r) == c.route_latency(r) == pytest.approx(1.5e-6)


def test_one_gib_between_nodes():
    c = build_cluster()
    t = c.transfer_time(1 << 30, Route(ram(0), ram(1)))
    assert t == pytest.approx(1073741824 / 12.5e9 + 1.5e-6, rel=1e-12)
    assert round(t, 5) == 0.08590


def test_eight_gb_to_local_nvme():
    c = build_cluster()
    t = c.transfer_time(8 * GB, Route(ram(0), nvme(0)))
    assert t == pytest.approx(8e9 / 1.08e9 + 20e-6)
    assert round(t, 3) == 7.407


def _routes(c):
    eps = [ram(0), nvme(0), ram(1), nvme(1), Endpoint.at(2, TierKind.HDD), Endpoint.nam_device(0), GLOBAL]
    return [Route(a, b) for a in eps for b in eps if a != b]


@given(st.integers(0, 10**11), st.integers(0, 10**11), st.integers(0, 41))
def test_subadditive(a, b, ri):
    c = build_cluster()
    r = _routes(c)[ri]
    assert c.transfer_time(a + b, r) <= c.transfer_time(a, r) + c.transfer_time(b, r) + 1e-12


@given(st.integers(1, 10**11), st.integers(0, 41))
def test_effective_bandwidth_below_every_component(size, ri):
    c = build_cluster()
    r = _routes(c)[ri]
    t = c.transfer_time(size, r) - c.route_latency(r)
    eff = size / t
    caps = []
    for ep, direction in ((r.src, 0), (r.dst, 1)):
        if ep.nam is not None:
            caps.append(c.nams[ep.nam].link_bw)
        elif ep.node is None:
            g = c.spec.global_fs
            caps.append((g.read_bw, g.write_bw)[direction])
        else:
            tier = c.tier(ep.node, ep.tier)
            caps.append((tier.read_bw, tier.write_bw)[direction])
    if r.inter_node:
        caps.append(c.spec.network.link_bw)
    assert eff <= min(caps) * (1 + 1e-9)


def test_deterministic_bits():
    c = build_cluster()
    r = Route(ram(3), nvme(3))
    assert c.transfer_time(12345678, r).hex() == c.transfer_time(12345678, r).hex()


@pytest.mark.parametrize("n", [1, 2, 4, 8, 16, 24])
def test_local_writes_do_not_contend(n):
    c = build_cluster()
    ts = c.concurrent_times([Transfer(10 * GB, Route(ram(i), nvme(i))) for i in range(n)])
    assert ts == [pytest.approx(10e9 / 1.08e9 + 20e-6)] * n


@pytest.mark.parametrize("n", [2, 4, 8, 16])
def test_global_writes_saturate(n):
    c = build_cluster()
    ts = c.concurrent_times([Transfer(10 * GB, Route(ram(i), GLOBAL)) for i in range(n)])
    assert min(ts) >= n * 10e9 / c.spec.global_fs.write_bw


def test_bisection_caps_many_flows():
    c = build_cluster()
    n = 24
    ts = c.concurrent_times([Transfer(GB, Route(ram(i), ram((i + 1) % n))) for i in range(n)])
    share = min(c.spec.network.link_bw, c.spec.network.bisection_limit / n)
    assert ts[0] == pytest.approx(1.5e-6 + 1e9 / share)


def test_metadata_creates_serialize():
    c = build_cluster()
    one = c.concurrent_times([Transfer(0, Route(ram(0), GLOBAL), creates=1)])[0]
    ten = c.concurrent_times([Transfer(0, Route(ram(0), GLOBAL), creates=1)] * 10)[0]
    assert ten - one == pytest.approx(9 * c.spec.file_create_cost)


def test_shipped_config_matches_defaults():
    assert load_config(default_config_path()) == default_spec()


def test_dump_roundtrip():
    spec = log_uniform_spec(default_spec(), np.random.default_rng(3))
    assert spec_from_kv(parse_kv(dump_config(spec))) == spec


def test_config_layering(tmp_path):
    a = tmp_path / "a.cfg"
    a.write_text("network.link_bw = 25e9\ntier.nvme.write_bw = 2e9\n")
    b = tmp_path / "b.cfg"
    b.write_text("# later file wins\ntier.nvme.write_bw = 3e9\n")
    spec = load_config(a, b)
    assert spec.network.link_bw == 25e9
    assert [t for t in spec.tiers_per_node if t.kind is TierKind.NVME][0].write_bw == 3e9


def test_unknown_config_key(tmp_path):
    p = tmp_path / "x.cfg"
    p.write_text("network.bogus = 1\n")
    with pytest.raises(SpecError):
        load_config(p)


def test_bad_number(tmp_path):
    p = tmp_path / "x.cfg"
    p.write_text("network.link_bw = fast\n")
    with pytest.raises(SpecError):
        load_config(p)


@given(st.integers(0, 2**32))
def test_random_specs_validate(seed):
    spec = log_uniform_spec(default_spec(), np.random.default_rng(seed), 0.5, 2.0)
    c = build_cluster(spec)
    assert math.isfinite(c.transfer_time(GB, Route(ram(0), nvme(0))))
