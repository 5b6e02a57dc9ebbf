"""Photon timestamp streams and their on-disk formats.

Binary layout (little-endian)::

    magic               4 bytes  b"PHTS"
    version             u16      1
    channel             u8       0 = A, 1 = B
    tick_resolution_ps  u32      1
    count               u64
    ticks               count x u64, strictly ascending

The text alternative is one integer tick per line under a ``# ticks_ps``
header line. Neither format stores the acquisition length; readers take it
as an argument and otherwise assume the last tick plus one.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "TICKS_PER_SECOND",
    "PhotonStream",
    "StreamFormatError",
    "write_phts",
    "read_phts",
    "write_ticks_csv",
    "read_ticks_csv",
    "read_stream",
    "write_stream",
]

TICKS_PER_SECOND = 10 ** 12
MAGIC = b"PHTS"
VERSION = 1
_HEADER = struct.Struct("<4sHBIQ")
_CHANNELS = {"A": 0, "B": 1}
_CHANNEL_NAMES = {v: k for k, v in _CHANNELS.items()}
_INT64_MAX = np.iinfo(np.int64).max


class StreamFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PhotonStream:
    """Detection times of one channel in integer picosecond ticks."""

    timestamps: np.ndarray
    channel: str
    duration_ticks: int

    def __post_init__(self):
        ts = np.asarray(self.timestamps)
        if ts.dtype != np.int64:
            if ts.size and (ts.min() < 0 or ts.max() > _INT64_MAX):
                raise ValueError("timestamps out of range")
            ts = ts.astype(np.int64)
        object.__setattr__(self, "timestamps", ts)
        if self.channel not in _CHANNELS:
            raise ValueError(f"channel must be 'A' or 'B', got {self.channel!r}")
        if ts.ndim != 1:
            raise ValueError("timestamps must be one-dimensional")
        if ts.size:
            if ts[0] < 0:
                raise ValueError("timestamps must be nonnegative")
            if not np.all(ts[1:] > ts[:-1]):
                raise ValueError("timestamps must be strictly ascending")
            if ts[-1] >= self.duration_ticks:
                raise ValueError("timestamps must lie before duration_ticks")

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def duration(self) -> float:
        return self.duration_ticks / TICKS_PER_SECOND

    @property
    def rate(self) -> float:
        return len(self) / self.duration if self.duration_ticks else 0.0

    def __eq__(self, other):
        if not isinstance(other, PhotonStream):
            return NotImplemented
        return (self.channel == other.channel and self.duration_ticks == other.duration_ticks
                and np.array_equal(self.timestamps, other.timestamps))


def write_phts(stream: PhotonStream, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, _CHANNELS[stream.channel], 1, len(stream)))
        stream.timestamps.astype("<u8").tofile(fh)


def read_phts(path, duration_ticks=None) -> PhotonStream:
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise StreamFormatError(f"{path}: truncated header")
        magic, version, channel, resolution, count = _HEADER.unpack(head)
        if magic != MAGIC:
            raise StreamFormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise StreamFormatError(f"{path}: unsupported version {version}")
        if channel not in _CHANNEL_NAMES:
            raise StreamFormatError(f"{path}: unknown channel code {channel}")
        if resolution != 1:
            raise StreamFormatError(f"{path}: tick resolution {resolution} ps not supported")
        if size != _HEADER.size + 8 * count:
            raise StreamFormatError(f"{path}: header declares {count} ticks, file holds {(size - _HEADER.size) / 8:g}")
        ticks = np.fromfile(fh, dtype="<u8", count=count)
    return _validated(ticks, _CHANNEL_NAMES[channel], duration_ticks, path)


def write_ticks_csv(stream: PhotonStream, path) -> None:
    np.savetxt(path, stream.timestamps, fmt="%d", header="ticks_ps", comments="# ")


def read_ticks_csv(path, channel: str = "A", duration_ticks=None) -> PhotonStream:
    with open(path) as fh:
        first = fh.readline().strip()
    if first.lstrip("#").strip() != "ticks_ps":
        raise StreamFormatError(f"{path}: expected '# ticks_ps' header, found {first!r}")
    ticks = np.loadtxt(path, dtype=np.uint64, comments="#", ndmin=1)
    return _validated(ticks, channel, duration_ticks, path)


def _validated(ticks, channel, duration_ticks, path) -> PhotonStream:
    if ticks.size and ticks.max() > _INT64_MAX:
        raise StreamFormatError(f"{path}: ticks beyond 2**63 are not supported")
    ticks = ticks.astype(np.int64)
    if ticks.size and not np.all(ticks[1:] > ticks[:-1]):
        raise StreamFormatError(f"{path}: ticks are not strictly ascending")
    if duration_ticks is None:
        duration_ticks = int(ticks[-1]) + 1 if ticks.size else 0
    return PhotonStream(ticks, channel, int(duration_ticks))


def read_stream(path, channel: str = "A", duration_ticks=None) -> PhotonStream:
    """Read either format, chosen by extension (``.csv``/``.txt`` vs binary)."""
    if str(path).endswith((".csv", ".txt")):
        return read_ticks_csv(path, channel, duration_ticks)
    return read_phts(path, duration_ticks)


def write_stream(stream: PhotonStream, path) -> None:
    if str(path).endswith((".csv", ".txt")):
        write_ticks_csv(stream, path)
    else:
        write_phts(stream, path)
