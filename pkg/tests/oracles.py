"""Independent reference implementations used as test oracles.

Nothing here imports the package's own primitives.
"""

from __future__ import annotations

import dataclasses as dc
import math

import numpy as np

_POLY = 0x82F63B78


def crc32c_bitwise(data: bytes) -> int:
    """Reflected CRC-32C, one bit at a time."""
    crc = 0xFFFFFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = (crc >> 1) ^ _POLY if crc & 1 else crc >> 1
    return crc ^ 0xFFFFFFFF


def xor_bytes(blocks: list[bytes]) -> bytes:
    """Byte-wise XOR with zero padding, via Python big integers."""
    n = max(len(b) for b in blocks)
    acc = 0
    for b in blocks:
        acc ^= int.from_bytes(b.ljust(n, b"\0"), "little")
    return acc.to_bytes(n, "little")


def single_parity_recoverable(k: int, erased: set[int]) -> bool:
    """A single-parity code over k data members survives at most one erasure."""
    return len(erased) <= 1


def fair_share(spec, n_writers: int, nbytes: int) -> float:
    """Closed-form time for n nodes each writing nbytes to their own NVMe."""
    nvme = [t for t in spec.tiers_per_node if t.kind.value == "nvme"][0]
    return nvme.access_latency + nbytes / nvme.write_bw


def log_uniform_spec(base, rng: np.random.Generator, lo: float = 2 / 3, hi: float = 1.5):
    """Scale every bandwidth and latency of ``base`` by an independent log-uniform factor.

    Hierarchy constraints (RAM faster than NVMe, link <= bisection) are
    restored afterwards so the result stays a valid machine.
    """
    f = lambda: float(math.exp(rng.uniform(math.log(lo), math.log(hi))))  # noqa: E731
    tiers = []
    for t in base.tiers_per_node:
        tiers.append(dc.replace(t, write_bw=t.write_bw * f(), read_bw=t.read_bw * f(),
                                access_latency=t.access_latency * f()))
    ram, nvme = tiers[0], tiers[1]
    tiers[0] = dc.replace(ram, write_bw=max(ram.write_bw, nvme.write_bw), read_bw=max(ram.read_bw, nvme.read_bw))
    net = dc.replace(base.network, link_bw=base.network.link_bw * f(), base_latency=base.network.base_latency * f(),
                     bisection_limit=base.network.bisection_limit * f())
    net = dc.replace(net, bisection_limit=max(net.bisection_limit, net.link_bw))
    # NAM devices stay identical to each other
    lf, xf = f(), f()
    nams = tuple(dc.replace(n, link_bw=n.link_bw * lf, xor_throughput=n.xor_throughput * xf)
                 for n in base.nam_devices)
    gfs = dc.replace(base.global_fs, write_bw=base.global_fs.write_bw * f(), read_bw=base.global_fs.read_bw * f())
    return dc.replace(base, tiers_per_node=tuple(tiers), network=net, nam_devices=nams, global_fs=gfs,
                      host_xor_bw=base.host_xor_bw * f())
