"""Single-parity XOR codes.

Two layouts are used:

* *whole-block*: one parity block ``P = B0 ^ B1 ^ ... ^ Bk-1`` kept off the
  group (on a NAM device);
* *rotated* (RAID-5 style): every member splits its padded block into
  ``k - 1`` chunks and stores the parity of one stripe.  Stripe ``j`` holds
  one chunk of every member except ``j``, so losing any single member leaves
  every stripe it contributed to with its parity intact.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyInput, TooManyErasures


def _as_array(block, length: int) -> np.ndarray:
    arr = np.zeros(length, dtype=np.uint8)
    view = np.frombuffer(block, dtype=np.uint8) if len(block) else arr[:0]
    arr[: view.size] = view
    return arr


def xor_fold(blocks: Sequence[bytes], length: int | None = None) -> bytes:
    """Byte-wise XOR of ``blocks`` zero-padded to ``length`` (default: longest)."""
    if not blocks:
        raise EmptyInput("xor of zero blocks")
    if length is None:
        length = max(len(b) for b in blocks)
    acc = np.zeros(length, dtype=np.uint8)
    for b in blocks:
        if len(b) > length:
            raise ValueError(f"block of {len(b)} bytes exceeds length {length}")
        if len(b):
            acc[: len(b)] ^= np.frombuffer(b, dtype=np.uint8)
    return acc.tobytes()


def chunk_size(block_len: int, k: int) -> int:
    if k < 2:
        raise ValueError("rotated parity needs at least two members")
    return -(-block_len // (k - 1))


def _chunk_index(member: int, stripe: int) -> int:
    # member's chunks fill every stripe except its own, in stripe order
    return stripe if stripe < member else stripe - 1


def _chunks(block: bytes, c: int, k: int) -> list[np.ndarray]:
    arr = _as_array(block, c * (k - 1))
    return [arr[i * c:(i + 1) * c] for i in range(k - 1)]


def rotated_encode(blocks: Sequence[bytes]) -> list[bytes]:
    """Return one parity slice per member for the rotated layout."""
    k = len(blocks)
    L = max(len(b) for b in blocks)
    c = chunk_size(L, k)
    chunks = [_chunks(b, c, k) for b in blocks]
    out = []
    for j in range(k):
        acc = np.zeros(c, dtype=np.uint8)
        for i in range(k):
            if i != j:
                acc ^= chunks[i][_chunk_index(i, j)]
        out.append(acc.tobytes())
    return out


def rotated_decode(
    missing: int,
    surviving: Mapping[int, bytes],
    parity: Mapping[int, bytes],
    k: int,
    block_len: int,
) -> bytes:
    """Rebuild member ``missing`` (a position ``0..k-1``) from the others.

    ``surviving`` and ``parity`` are keyed by member position; the missing
    member's own parity slice is never needed.
    """
    c = chunk_size(block_len, k)
    others = [i for i in range(k) if i != missing]
    if set(surviving) != set(others):
        raise TooManyErasures(f"need all of {others}, have {sorted(surviving)}")
    chunks = {i: _chunks(surviving[i], c, k) for i in others}
    rebuilt = np.zeros(c * (k - 1), dtype=np.uint8)
    for j in others:
        if j not in parity:
            raise TooManyErasures(f"parity slice {j} unavailable")
        acc = np.frombuffer(parity[j], dtype=np.uint8).copy()
        if acc.size != c:
            raise ValueError(f"parity slice {j} has {acc.size} bytes, expected {c}")
        for i in others:
            if i != j:
                acc ^= chunks[i][_chunk_index(i, j)]
        idx = _chunk_index(missing, j)
        rebuilt[idx * c:(idx + 1) * c] = acc
    return rebuilt[:block_len].tobytes()
