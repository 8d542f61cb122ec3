"""Task-local I/O aggregation: many rank streams in one aligned container file.

Layout (little-endian)::

    0       header   magic "AGG1", version u16, flags u16, n_ranks u32,
                     block_align u32, table_offset u64           (24 bytes)
    24      u32      header crc32c
    T       table    n_ranks x ChunkEntry (rank, reserved, offset, length,
                     crc32c, pad) = 32 bytes each; T = block_align
    D...    data     one block_align-aligned reservation per rank

The header crc covers the 24 header bytes, the whole chunk table and the
final file size, so a truncated file never verifies.  Every byte that is not
header, table or chunk payload must be zero.
"""

from __future__ import annotations

import os
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .cluster_model import GLOBAL, ClusterState, Endpoint, Route, TierKind, Transfer
from .crc import crc32c
from .errors import (
    AlignError,
    ChunkOverflowError,
    CorruptChunk,
    DoubleWrite,
    NotAContainer,
    UnknownRank,
)

MAGIC = b"AGG1"
VERSION = 1
FLAG_FINALIZED = 0x1
DEFAULT_ALIGN = 4096

_HEADER = struct.Struct("<4sHHIIQ")
_HEADER_CRC = struct.Struct("<I")
_ENTRY = struct.Struct("<IIQQII")
HEADER_SIZE = _HEADER.size + _HEADER_CRC.size
ENTRY_SIZE = _ENTRY.size


def align_up(n: int, align: int) -> int:
    return -(-n // align) * align


def _check_align(block_align: int) -> None:
    if block_align < 512 or block_align & (block_align - 1):
        raise AlignError(f"block_align must be a power of two >= 512, got {block_align}")


@dataclass(frozen=True)
class ChunkEntry:
    rank: int
    offset: int
    length: int
    crc32c: int
    reserved: int = 0
    pad: int = 0

    def pack(self) -> bytes:
        return _ENTRY.pack(self.rank, self.reserved, self.offset, self.length, self.crc32c, self.pad)

    @classmethod
    def unpack(cls, raw: bytes) -> "ChunkEntry":
        rank, reserved, offset, length, crc, pad = _ENTRY.unpack(raw)
        return cls(rank, offset, length, crc, reserved, pad)


@dataclass(frozen=True)
class Layout:
    n_ranks: int
    block_align: int
    table_offset: int
    offsets: tuple[int, ...]
    reservations: tuple[int, ...]
    file_size: int


def plan_layout(sizes: Sequence[int], block_align: int = DEFAULT_ALIGN) -> Layout:
    """Offsets for ranks with the given maximum sizes; each slot is padded to ``block_align``."""
    _check_align(block_align)
    if len(sizes) < 1:
        raise ValueError("a container needs at least one rank")
    if any(s < 0 for s in sizes):
        raise ValueError("chunk sizes must be >= 0")
    table_offset = block_align
    pos = align_up(table_offset + ENTRY_SIZE * len(sizes), block_align)
    offsets = []
    for s in sizes:
        offsets.append(pos)
        pos += align_up(s, block_align)
    return Layout(len(sizes), block_align, table_offset, tuple(offsets), tuple(sizes), pos)


def container_size(sizes: Sequence[int], block_align: int = DEFAULT_ALIGN) -> int:
    return plan_layout(sizes, block_align).file_size


def _header_bytes(flags: int, n_ranks: int, block_align: int, table_offset: int) -> bytes:
    return _HEADER.pack(MAGIC, VERSION, flags, n_ranks, block_align, table_offset)


def _header_crc(header: bytes, table: bytes, file_size: int) -> int:
    return crc32c(header + table + struct.pack("<Q", file_size))


class WriterSet:
    """Open container being filled by up to ``n_ranks`` concurrent writers.

    Distinct ranks write to disjoint byte ranges through ``os.pwrite`` on a
    shared descriptor, so they never contend.  The chunk table and header crc
    are written by :meth:`close`.
    """

    def __init__(self, path: str | Path, layout: Layout):
        self.path = Path(path)
        self.layout = layout
        self._lock = threading.Lock()
        self._entries = [ChunkEntry(r, off, 0, 0) for r, off in enumerate(layout.offsets)]
        self._written = [False] * layout.n_ranks
        self._fd: int | None = os.open(self.path, os.O_RDWR | os.O_CREAT | os.O_TRUNC, 0o644)
        try:
            os.ftruncate(self._fd, layout.file_size)
            self._write_meta(flags=0)
        except BaseException:
            os.close(self._fd)
            self._fd = None
            raise

    @property
    def n_ranks(self) -> int:
        return self.layout.n_ranks

    def reservation(self, rank: int) -> int:
        return self.layout.reservations[rank]

    def _write_meta(self, flags: int) -> None:
        lay = self.layout
        header = _header_bytes(flags, lay.n_ranks, lay.block_align, lay.table_offset)
        table = b"".join(e.pack() for e in self._entries)
        crc = _header_crc(header, table, lay.file_size)
        os.pwrite(self._fd, header + _HEADER_CRC.pack(crc), 0)
        os.pwrite(self._fd, table, lay.table_offset)

    def write_chunk(self, rank: int, data) -> ChunkEntry:
        if self._fd is None:
            raise ValueError("container already closed")
        if not 0 <= rank < self.n_ranks:
            raise UnknownRank(f"rank {rank} not in container of {self.n_ranks}")
        data = memoryview(data).cast("B")
        if len(data) > self.layout.reservations[rank]:
            raise ChunkOverflowError(
                f"rank {rank}: {len(data)} bytes exceed reservation {self.layout.reservations[rank]}"
            )
        with self._lock:
            if self._written[rank]:
                raise DoubleWrite(f"rank {rank} already written")
            self._written[rank] = True
        offset = self.layout.offsets[rank]
        if len(data):
            os.pwrite(self._fd, data, offset)
        entry = ChunkEntry(rank, offset, len(data), crc32c(data))
        with self._lock:
            self._entries[rank] = entry
        return entry

    def entries(self) -> list[ChunkEntry]:
        with self._lock:
            return list(self._entries)

    def close(self) -> None:
        if self._fd is None:
            return
        try:
            with self._lock:
                self._write_meta(flags=FLAG_FINALIZED)
            os.fsync(self._fd)
        finally:
            os.close(self._fd)
            self._fd = None

    def __enter__(self) -> "WriterSet":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def create_container(path: str | Path, n_ranks: int, sizes: Sequence[int],
                     block_align: int = DEFAULT_ALIGN) -> WriterSet:
    if n_ranks < 1:
        raise ValueError("n_ranks must be >= 1")
    if len(sizes) != n_ranks:
        raise ValueError(f"expected {n_ranks} sizes, got {len(sizes)}")
    return WriterSet(path, plan_layout(sizes, block_align))


def write_chunk(writer: WriterSet, rank: int, data) -> ChunkEntry:
    return writer.write_chunk(rank, data)


def pack(path: str | Path, payloads: Sequence[bytes], block_align: int = DEFAULT_ALIGN) -> list[ChunkEntry]:
    """Write ``payloads`` (one per rank) into a new container."""
    with create_container(path, len(payloads), [len(p) for p in payloads], block_align) as w:
        for rank, data in enumerate(payloads):
            w.write_chunk(rank, data)
        return w.entries()


# -- reading -------------------------------------------------------------------

@dataclass(frozen=True)
class ChunkStatus:
    rank: int
    offset: int
    length: int
    crc32c: int
    status: str
    reason: str = ""


@dataclass
class ContainerReport:
    n_ranks: int
    block_align: int
    file_size: int
    total_bytes: int
    finalized: bool
    header_ok: bool
    padding_ok: bool
    chunks: list[ChunkStatus] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return self.finalized and self.header_ok and self.padding_ok and all(
            c.status == "VALID" for c in self.chunks
        )

    @property
    def status(self) -> str:
        return "VALID" if self.valid else "CORRUPT"

    def summary(self) -> str:
        lines = [
            f"container: {self.status}",
            f"ranks={self.n_ranks} align={self.block_align} size={self.file_size} "
            f"payload={self.total_bytes} finalized={self.finalized} "
            f"header_ok={self.header_ok} padding_ok={self.padding_ok}",
        ]
        for c in self.chunks:
            extra = f" ({c.reason})" if c.reason else ""
            lines.append(f"rank {c.rank:4d} off={c.offset} len={c.length} crc={c.crc32c:08x} {c.status}{extra}")
        return "\n".join(lines)


def _read_meta(buf: bytes) -> tuple[int, int, int, int, int, list[ChunkEntry]]:
    if len(buf) < HEADER_SIZE:
        raise NotAContainer(f"file too short for a header ({len(buf)} bytes)")
    magic, version, flags, n_ranks, block_align, table_offset = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise NotAContainer(f"bad magic {magic!r}")
    if version != VERSION:
        raise NotAContainer(f"unsupported version {version}")
    if block_align < 512 or block_align & (block_align - 1):
        raise NotAContainer(f"bad block_align {block_align}")
    if n_ranks < 1 or table_offset % block_align or table_offset < HEADER_SIZE:
        raise NotAContainer("bad chunk table geometry")
    table_end = table_offset + ENTRY_SIZE * n_ranks
    if table_end > len(buf):
        raise NotAContainer("chunk table truncated")
    (stored_crc,) = _HEADER_CRC.unpack_from(buf, _HEADER.size)
    entries = [ChunkEntry.unpack(buf[table_offset + i * ENTRY_SIZE:table_offset + (i + 1) * ENTRY_SIZE])
               for i in range(n_ranks)]
    return flags, n_ranks, block_align, table_offset, stored_crc, entries


def inspect(path: str | Path) -> ContainerReport:
    """Check every byte of a container; never modifies it."""
    buf = Path(path).read_bytes()
    flags, n_ranks, block_align, table_offset, stored_crc, entries = _read_meta(buf)
    table_end = table_offset + ENTRY_SIZE * n_ranks
    header_ok = stored_crc == _header_crc(buf[:_HEADER.size], buf[table_offset:table_end], len(buf))

    # bytes that are allowed to be non-zero
    covered = [(0, HEADER_SIZE), (table_offset, table_end)]
    chunks: list[ChunkStatus] = []
    data_start = align_up(table_end, block_align)
    for i, e in enumerate(entries):
        reason = ""
        if e.rank != i:
            reason = f"rank field {e.rank} at table slot {i}"
        elif e.reserved or e.pad:
            reason = "non-zero reserved fields"
        elif e.offset % block_align:
            reason = "misaligned offset"
        elif e.offset < data_start:
            reason = "offset inside header or table"
        elif e.offset + e.length > len(buf):
            reason = "chunk beyond end of file"
        elif crc32c(buf[e.offset:e.offset + e.length]) != e.crc32c:
            reason = "crc mismatch"
        chunks.append(ChunkStatus(i, e.offset, e.length, e.crc32c, "CORRUPT" if reason else "VALID", reason))
        if not reason:
            covered.append((e.offset, e.offset + e.length))

    live = sorted((c.offset, c.offset + c.length, j) for j, c in enumerate(chunks)
                  if c.status == "VALID" and c.length)
    for (_, a_end, ja), (b_lo, _, jb) in zip(live, live[1:]):
        if b_lo < a_end:
            for j in (ja, jb):
                c = chunks[j]
                chunks[j] = ChunkStatus(c.rank, c.offset, c.length, c.crc32c, "CORRUPT", "overlapping chunk")
    ordered = sorted(c for c in covered if c[1] > c[0])
    padding_ok = True
    pos = 0
    for lo, hi in ordered:
        if lo > pos and buf[pos:lo].count(0) != lo - pos:
            padding_ok = False
            break
        pos = max(pos, hi)
    if padding_ok and pos < len(buf) and buf[pos:].count(0) != len(buf) - pos:
        padding_ok = False

    return ContainerReport(
        n_ranks=n_ranks,
        block_align=block_align,
        file_size=len(buf),
        total_bytes=sum(e.length for e in entries),
        finalized=bool(flags & FLAG_FINALIZED),
        header_ok=header_ok,
        padding_ok=padding_ok,
        chunks=chunks,
    )


def read_chunk(path: str | Path, rank: int) -> bytes:
    """Return rank's payload after verifying its crc32c."""
    with open(path, "rb") as f:
        head = f.read(HEADER_SIZE)
        if len(head) < HEADER_SIZE:
            raise NotAContainer("file too short for a header")
        magic, version, _, n_ranks, block_align, table_offset = _HEADER.unpack_from(head, 0)
        if magic != MAGIC or version != VERSION:
            raise NotAContainer(f"bad magic/version {magic!r}/{version}")
        if not 0 <= rank < n_ranks:
            raise UnknownRank(f"rank {rank} not in container of {n_ranks}")
        f.seek(table_offset + rank * ENTRY_SIZE)
        raw = f.read(ENTRY_SIZE)
        if len(raw) < ENTRY_SIZE:
            raise NotAContainer("chunk table truncated")
        e = ChunkEntry.unpack(raw)
        f.seek(e.offset)
        data = f.read(e.length)
    if len(data) != e.length:
        raise CorruptChunk(rank, e.offset, "chunk truncated")
    if crc32c(data) != e.crc32c:
        raise CorruptChunk(rank, e.offset)
    return data


def read_all(path: str | Path) -> list[bytes]:
    report = inspect(path)
    return [read_chunk(path, r) for r in range(report.n_ranks)]


def unpack(path: str | Path, outdir: str | Path) -> list[Path]:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for rank, data in enumerate(read_all(path)):
        p = out / f"rank{rank:05d}.bin"
        p.write_bytes(data)
        written.append(p)
    return written


# -- cost model ------------------------------------------------------------------

def simulated_write_time(cluster: ClusterState, sizes: Sequence[int], aggregated: bool,
                         node: int = 0, block_align: int = DEFAULT_ALIGN) -> float:
    """Seconds for one node to push ``sizes`` rank chunks to the global FS.

    Aggregated: one container, one file create.  Otherwise one file and one
    create per rank, all in flight together.
    """
    src = Endpoint.at(node, TierKind.RAM)
    route = Route(src, GLOBAL)
    if aggregated:
        return cluster.concurrent_times([Transfer(container_size(sizes, block_align), route, creates=1)])[0]
    times = cluster.concurrent_times([Transfer(s, route, creates=1) for s in sizes])
    return max(times)


def aggregation_speedup(cluster: ClusterState, sizes: Iterable[int], **kw) -> float:
    sizes = list(sizes)
    return simulated_write_time(cluster, sizes, False, **kw) / simulated_write_time(cluster, sizes, True, **kw)


__all__ = [
    "MAGIC",
    "VERSION",
    "DEFAULT_ALIGN",
    "ChunkEntry",
    "Layout",
    "WriterSet",
    "ChunkStatus",
    "ContainerReport",
    "align_up",
    "plan_layout",
    "container_size",
    "create_container",
    "write_chunk",
    "pack",
    "inspect",
    "read_chunk",
    "read_all",
    "unpack",
    "simulated_write_time",
    "aggregation_speedup",
]
