"""Machine description and the deterministic data-movement cost model.

Everything that moves bytes in the simulator is priced here.  A transfer
costs ``latency + size / bandwidth`` where the bandwidth is the minimum of
every component on its route.  Transfers that run concurrently split each
shared resource (NIC, storage device, bisection, NAM link, global file
system) into equal shares.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from .errors import RouteError, SpecError

GB = 1_000_000_000


class TierKind(str, enum.Enum):
    RAM = "ram"
    NVME = "nvme"
    HDD = "hdd"
    GLOBAL_FS = "global"


@dataclass(frozen=True)
class TierSpec:
    kind: TierKind
    capacity: int
    write_bw: float
    read_bw: float
    access_latency: float = 0.0


@dataclass(frozen=True)
class NetworkSpec:
    link_bw: float
    base_latency: float
    bisection_limit: float


@dataclass(frozen=True)
class NamSpec:
    capacity: int
    link_bw: float
    xor_throughput: float
    ring_buffers: int = 8
    buffer_size: int = 1 << 20


@dataclass(frozen=True)
class ClusterSpec:
    cluster_nodes: int
    booster_nodes: int
    tiers_per_node: tuple[TierSpec, ...]
    network: NetworkSpec
    nam_devices: tuple[NamSpec, ...]
    global_fs: TierSpec
    # Serialized metadata cost charged per file created on the global file system.
    file_create_cost: float = 0.005
    # Host-side XOR rate used by the distributed parity exchange and reconstruction.
    host_xor_bw: float = 5e9
    spare_nodes: int = 2

    def replace(self, **changes) -> "ClusterSpec":
        return replace(self, **changes)


def default_spec() -> ClusterSpec:
    """The prototype machine: 16 Cluster + 8 Booster nodes, 2 NAMs."""
    nvme_w, nvme_r = 1.08e9, 2.7e9
    tiers = (
        TierSpec(TierKind.RAM, 128 * GB, 75 * nvme_w, 75 * nvme_r, 0.0),
        TierSpec(TierKind.NVME, 400 * GB, nvme_w, nvme_r, 20e-6),
        TierSpec(TierKind.HDD, 1000 * GB, nvme_w / 4.5, nvme_r / 4.5, 5e-3),
    )
    link = 100e9 / 8
    return ClusterSpec(
        cluster_nodes=16,
        booster_nodes=8,
        tiers_per_node=tiers,
        network=NetworkSpec(link_bw=link, base_latency=1.5e-6, bisection_limit=12 * link),
        nam_devices=tuple(NamSpec(2 * GB, 2 * link, 2 * link) for _ in range(2)),
        global_fs=TierSpec(TierKind.GLOBAL_FS, 57_000 * GB, 2.0e9, 2.0e9, 1e-3),
    )


def validate_spec(spec: ClusterSpec) -> None:
    """Raise :class:`SpecError` naming the first violated invariant."""
    if spec.cluster_nodes < 1:
        raise SpecError("cluster.cluster_nodes", "must be >= 1")
    if spec.booster_nodes < 0:
        raise SpecError("cluster.booster_nodes", "must be >= 0")
    if spec.spare_nodes < 0:
        raise SpecError("cluster.spare_nodes", "must be >= 0")
    if spec.file_create_cost < 0:
        raise SpecError("global_fs.file_create_cost", "must be >= 0")
    if not spec.host_xor_bw > 0:
        raise SpecError("cluster.host_xor_bw", "must be > 0")

    kinds = [t.kind for t in spec.tiers_per_node]
    if kinds.count(TierKind.RAM) != 1:
        raise SpecError("tier.ram", "every node needs exactly one RAM tier")
    if not any(k in (TierKind.NVME, TierKind.HDD) for k in kinds):
        raise SpecError("tier", "every node needs at least one persistent tier")
    if TierKind.GLOBAL_FS in kinds or len(set(kinds)) != len(kinds):
        raise SpecError("tier", "duplicate or misplaced tier kind")
    for t in (*spec.tiers_per_node, spec.global_fs):
        name = "global_fs" if t.kind is TierKind.GLOBAL_FS else f"tier.{t.kind.value}"
        if t.capacity <= 0:
            raise SpecError(f"{name}.capacity", "must be > 0")
        if not t.write_bw > 0:
            raise SpecError(f"{name}.write_bw", "must be > 0")
        if not t.read_bw > 0:
            raise SpecError(f"{name}.read_bw", "must be > 0")
        if t.access_latency < 0:
            raise SpecError(f"{name}.access_latency", "must be >= 0")
    if spec.global_fs.kind is not TierKind.GLOBAL_FS:
        raise SpecError("global_fs.kind", "must be GLOBAL_FS")
    by_kind = {t.kind: t for t in spec.tiers_per_node}
    ram, nvme = by_kind[TierKind.RAM], by_kind.get(TierKind.NVME)
    if nvme is not None and (ram.read_bw < nvme.read_bw or ram.write_bw < nvme.write_bw):
        raise SpecError("tier.ram", "RAM bandwidth must not be below NVMe bandwidth")

    net = spec.network
    if not net.link_bw > 0:
        raise SpecError("network.link_bw", "must be > 0")
    if net.base_latency < 0:
        raise SpecError("network.base_latency", "must be >= 0")
    if net.bisection_limit < net.link_bw:
        raise SpecError("network.bisection_limit", "must be >= link_bw")

    for i, nam in enumerate(spec.nam_devices):
        if nam.capacity <= 0:
            raise SpecError(f"nam[{i}].capacity", "must be > 0")
        if not nam.link_bw > 0:
            raise SpecError(f"nam[{i}].link_bw", "must be > 0")
        if not nam.xor_throughput > 0:
            raise SpecError(f"nam[{i}].xor_throughput", "must be > 0")
        if nam.ring_buffers < 2:
            raise SpecError(f"nam[{i}].ring_buffers", "must be >= 2")
        if nam.buffer_size <= 0:
            raise SpecError(f"nam[{i}].buffer_size", "must be > 0")


# -- routes ------------------------------------------------------------------

@dataclass(frozen=True)
class Endpoint:
    """One end of a transfer: a node tier, a NAM device or the global FS."""

    node: int | None = None
    tier: TierKind = TierKind.RAM
    nam: int | None = None

    @classmethod
    def at(cls, node: int, tier: TierKind = TierKind.RAM) -> "Endpoint":
        return cls(node=node, tier=TierKind(tier))

    @classmethod
    def nam_device(cls, index: int) -> "Endpoint":
        return cls(nam=index)

    @property
    def is_global(self) -> bool:
        return self.node is None and self.nam is None

    def __str__(self) -> str:
        if self.nam is not None:
            return f"nam{self.nam}"
        if self.node is None:
            return "global"
        return f"n{self.node}:{self.tier.value}"


GLOBAL = Endpoint(tier=TierKind.GLOBAL_FS)


@dataclass(frozen=True)
class Route:
    src: Endpoint
    dst: Endpoint

    @property
    def inter_node(self) -> bool:
        if self.src.node is None or self.dst.node is None:
            return True
        return self.src.node != self.dst.node


@dataclass(frozen=True)
class Transfer:
    """A priced unit of data movement; ``creates`` counts global file creates."""

    size: int
    route: Route
    creates: int = 0


# -- machine state -------------------------------------------------------------

@dataclass(frozen=True)
class ClusterState:
    spec: ClusterSpec
    cluster_ids: tuple[int, ...]
    booster_ids: tuple[int, ...]
    _tiers: Mapping[TierKind, TierSpec] = field(repr=False, compare=False)

    @property
    def node_ids(self) -> tuple[int, ...]:
        return self.cluster_ids + self.booster_ids

    @property
    def nams(self) -> tuple[NamSpec, ...]:
        return self.spec.nam_devices

    @property
    def network(self) -> NetworkSpec:
        return self.spec.network

    def tier(self, node: int, kind: TierKind) -> TierSpec:
        if node not in self.node_ids:
            raise RouteError(f"unknown node {node}")
        try:
            return self._tiers[TierKind(kind)]
        except KeyError:
            raise RouteError(f"node {node} has no {TierKind(kind).value} tier") from None

    def tier_kinds(self) -> tuple[TierKind, ...]:
        return tuple(self._tiers)

    def has_tier(self, kind: TierKind) -> bool:
        return TierKind(kind) in self._tiers

    # read_bw, write_bw, latency for one endpoint
    def _endpoint(self, ep: Endpoint) -> tuple[float, float, float]:
        if ep.nam is not None:
            if not 0 <= ep.nam < len(self.spec.nam_devices):
                raise RouteError(f"unknown NAM device {ep.nam}")
            nam = self.spec.nam_devices[ep.nam]
            return nam.link_bw, nam.link_bw, 0.0
        if ep.node is None:
            g = self.spec.global_fs
            return g.read_bw, g.write_bw, g.access_latency
        t = self.tier(ep.node, ep.tier)
        return t.read_bw, t.write_bw, t.access_latency

    def route_latency(self, route: Route) -> float:
        _, _, ls = self._endpoint(route.src)
        _, _, ld = self._endpoint(route.dst)
        lat = ls + ld
        if route.inter_node:
            lat += self.spec.network.base_latency
        return lat

    def route_bandwidth(self, route: Route) -> float:
        """Effective bandwidth of ``route`` when it runs alone."""
        rs, _, _ = self._endpoint(route.src)
        _, wd, _ = self._endpoint(route.dst)
        bw = min(rs, wd)
        if route.inter_node and (route.src.node is not None or route.dst.node is not None):
            bw = min(bw, self.spec.network.link_bw)
        return bw

    def transfer_time(self, size: int, route: Route, creates: int = 0) -> float:
        """Seconds to move ``size`` bytes over ``route`` with no contention."""
        return self.concurrent_times([Transfer(size, route, creates)])[0]

    def _resources(self, route: Route) -> list[tuple[tuple, float]]:
        res: list[tuple[tuple, float]] = []
        src, dst = route.src, route.dst
        rs, _, _ = self._endpoint(src)
        _, wd, _ = self._endpoint(dst)
        for ep, cap, direction in ((src, rs, "r"), (dst, wd, "w")):
            if ep.nam is not None:
                res.append((("nam", ep.nam), cap))
            elif ep.node is None:
                res.append((("global", direction), cap))
            else:
                res.append((("tier", ep.node, ep.tier, direction), cap))
        if route.inter_node:
            link = self.spec.network.link_bw
            if src.node is not None:
                res.append((("nic-out", src.node), link))
            if dst.node is not None:
                res.append((("nic-in", dst.node), link))
            res.append((("bisection",), self.spec.network.bisection_limit))
        return res

    def concurrent_times(self, transfers: Sequence[Transfer]) -> list[float]:
        """Durations of ``transfers`` when all of them run at the same time.

        Each shared resource is split in equal parts among the transfers that
        use it; a transfer runs at the minimum of its shares.  Global file
        creates are serialized at the metadata server, so every transfer that
        creates files waits for all creates in the batch.
        """
        usage: dict[tuple, int] = {}
        per_transfer = []
        for t in transfers:
            if t.size < 0:
                raise ValueError(f"negative transfer size {t.size}")
            res = self._resources(t.route)
            per_transfer.append(res)
            for key, _ in res:
                usage[key] = usage.get(key, 0) + 1
        creates = sum(t.creates for t in transfers)
        meta = creates * self.spec.file_create_cost
        out = []
        for t, res in zip(transfers, per_transfer):
            lat = self.route_latency(t.route)
            if t.creates:
                lat += meta
            if t.size == 0:
                out.append(lat)
                continue
            bw = min(cap / usage[key] for key, cap in res)
            out.append(lat + t.size / bw)
        return out


def build_cluster(spec: ClusterSpec | None = None) -> ClusterState:
    """Validate ``spec`` and return the immutable machine state.

    Node ids run ``0..N-1``: Cluster nodes first, then Booster nodes.
    """
    spec = spec or default_spec()
    validate_spec(spec)
    cluster_ids = tuple(range(spec.cluster_nodes))
    booster_ids = tuple(range(spec.cluster_nodes, spec.cluster_nodes + spec.booster_nodes))
    tiers = {t.kind: t for t in spec.tiers_per_node}
    return ClusterState(spec, cluster_ids, booster_ids, tiers)


# -- config file -----------------------------------------------------------------

def read_kv(path: str | Path) -> dict[str, str]:
    return parse_kv(Path(path).read_text(encoding="utf-8"))


def parse_kv(text: str) -> dict[str, str]:
    """Parse ``section.key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise SpecError(f"line {lineno}", f"expected 'section.key = value', got {raw!r}")
        out[key.strip()] = value.strip()
    return out


_TIER_KEYS = ("capacity", "write_bw", "read_bw", "access_latency")
_NAM_KEYS = ("capacity", "link_bw", "xor_throughput", "ring_buffers", "buffer_size")


def _num(key: str, value: str, integer: bool = False):
    try:
        x = float(value)
    except ValueError:
        raise SpecError(key, f"not a number: {value!r}") from None
    if integer:
        if not x.is_integer():
            raise SpecError(key, f"expected an integer, got {value!r}")
        return int(x)
    return x


def spec_from_kv(kv: Mapping[str, str], base: ClusterSpec | None = None) -> ClusterSpec:
    """Apply machine keys from ``kv`` on top of ``base`` (default machine).

    Keys outside the machine sections (``workload.*``, ``scenario.*``) are
    ignored so one file may carry both.
    """
    spec = base or default_spec()
    tiers = {t.kind: t for t in spec.tiers_per_node}
    net = spec.network
    gfs = spec.global_fs
    nams = list(spec.nam_devices)
    nam_proto = nams[0] if nams else NamSpec(2 * GB, net.link_bw, net.link_bw)
    nam_changes: dict[str, float] = {}
    nam_count = len(nams)
    top: dict[str, object] = {}
    dropped: set[TierKind] = set()

    for key, value in kv.items():
        parts = key.split(".")
        section = parts[0]
        if section in ("workload", "scenario"):
            continue
        if section == "cluster" and len(parts) == 2:
            name = parts[1]
            if name in ("cluster_nodes", "booster_nodes", "spare_nodes"):
                top[name] = _num(key, value, integer=True)
            elif name == "host_xor_bw":
                top[name] = _num(key, value)
            else:
                raise SpecError(key, "unknown key")
        elif section == "tier" and len(parts) == 3:
            try:
                kind = TierKind(parts[1])
            except ValueError:
                raise SpecError(key, "unknown tier kind") from None
            if kind is TierKind.GLOBAL_FS:
                raise SpecError(key, "use the global_fs section")
            if parts[2] == "enabled":
                if value.lower() in ("0", "false", "no"):
                    dropped.add(kind)
                continue
            if parts[2] not in _TIER_KEYS:
                raise SpecError(key, "unknown key")
            cur = tiers.get(kind) or TierSpec(kind, 1, 1.0, 1.0, 0.0)
            tiers[kind] = replace(cur, **{parts[2]: _num(key, value, parts[2] == "capacity")})
        elif section == "global_fs" and len(parts) == 2:
            if parts[1] == "file_create_cost":
                top["file_create_cost"] = _num(key, value)
            elif parts[1] in _TIER_KEYS:
                gfs = replace(gfs, **{parts[1]: _num(key, value, parts[1] == "capacity")})
            else:
                raise SpecError(key, "unknown key")
        elif section == "network" and len(parts) == 2:
            if parts[1] not in ("link_bw", "base_latency", "bisection_limit"):
                raise SpecError(key, "unknown key")
            net = replace(net, **{parts[1]: _num(key, value)})
        elif section == "nam" and len(parts) == 2:
            if parts[1] == "count":
                nam_count = _num(key, value, integer=True)
            elif parts[1] in _NAM_KEYS:
                integer = parts[1] in ("capacity", "ring_buffers", "buffer_size")
                nam_changes[parts[1]] = _num(key, value, integer)
            else:
                raise SpecError(key, "unknown key")
        else:
            raise SpecError(key, "unknown key")

    if nam_count < 0:
        raise SpecError("nam.count", "must be >= 0")
    if nam_changes or nam_count != len(nams):
        proto = replace(nam_proto, **nam_changes)
        nams = [proto] * nam_count if nam_changes else (nams + [proto] * nam_count)[:nam_count]
    order = [TierKind.RAM, TierKind.NVME, TierKind.HDD]
    tier_tuple = tuple(tiers[k] for k in order if k in tiers and k not in dropped)
    return replace(
        spec,
        tiers_per_node=tier_tuple,
        network=net,
        global_fs=gfs,
        nam_devices=tuple(nams),
        **top,
    )


def load_config(*sources: str | Path, base: ClusterSpec | None = None) -> ClusterSpec:
    spec = base or default_spec()
    for src in sources:
        spec = spec_from_kv(read_kv(src), spec)
    validate_spec(spec)
    return spec


def dump_config(spec: ClusterSpec) -> str:
    """Serialize ``spec`` in the flat key-value format understood by :func:`load_config`."""
    lines = [
        f"cluster.cluster_nodes = {spec.cluster_nodes}",
        f"cluster.booster_nodes = {spec.booster_nodes}",
        f"cluster.spare_nodes = {spec.spare_nodes}",
        f"cluster.host_xor_bw = {spec.host_xor_bw!r}",
    ]
    present = {t.kind for t in spec.tiers_per_node}
    for kind in (TierKind.RAM, TierKind.NVME, TierKind.HDD):
        if kind not in present:
            lines.append(f"tier.{kind.value}.enabled = false")
    for t in spec.tiers_per_node:
        for key in _TIER_KEYS:
            lines.append(f"tier.{t.kind.value}.{key} = {getattr(t, key)!r}")
    for key in _TIER_KEYS:
        lines.append(f"global_fs.{key} = {getattr(spec.global_fs, key)!r}")
    lines.append(f"global_fs.file_create_cost = {spec.file_create_cost!r}")
    for f in fields(NetworkSpec):
        lines.append(f"network.{f.name} = {getattr(spec.network, f.name)!r}")
    lines.append(f"nam.count = {len(spec.nam_devices)}")
    if spec.nam_devices:
        if len(set(spec.nam_devices)) != 1:
            raise SpecError("nam", "config format requires identical NAM devices")
        for key in _NAM_KEYS:
            lines.append(f"nam.{key} = {getattr(spec.nam_devices[0], key)!r}")
    return "\n".join(lines) + "\n"


def default_config_path() -> Path:
    return Path(str(resources.files("deepckpt") / "data" / "deeper.cfg"))


def ceil_div(a: int, b: int) -> int:
    return -(-a // b) if b else 0


__all__ = [
    "GB",
    "TierKind",
    "TierSpec",
    "NetworkSpec",
    "NamSpec",
    "ClusterSpec",
    "ClusterState",
    "Endpoint",
    "GLOBAL",
    "Route",
    "Transfer",
    "default_spec",
    "validate_spec",
    "build_cluster",
    "read_kv",
    "spec_from_kv",
    "load_config",
    "dump_config",
    "default_config_path",
    "parse_kv",
    "ceil_div",
]
