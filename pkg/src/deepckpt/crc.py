"""CRC-32C (Castagnoli) helpers backed by the ``crc32c`` C extension."""

from __future__ import annotations

import crc32c as _crc32c


def crc32c(data, value: int = 0) -> int:
    """Return the CRC-32C of ``data``, continuing from ``value``."""
    return _crc32c.crc32c(data, value)


def crc_hex(value: int) -> str:
    return f"{value:08x}"
