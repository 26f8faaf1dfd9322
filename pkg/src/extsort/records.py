"""Record layout, key ordering, key-reference extraction and the multiset checksum.

A record is a fixed 100-byte frame: a 10-byte key followed by a 90-byte
opaque payload.  Sorting operates on key references (a copy of the key plus
the record's ordinal) laid out as packed 18-byte rows so the kernels can move
them as raw bytes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

from .errors import MalformedInputError

RECORD_SIZE = 100
KEY_SIZE = 10
PAYLOAD_SIZE = RECORD_SIZE - KEY_SIZE
ORDINAL_SIZE = 8
KEYREF_SIZE = KEY_SIZE + ORDINAL_SIZE

#: Packed (unaligned) so one KeyRef is exactly 18 bytes in memory.
KEYREF_DTYPE = np.dtype([("key", np.uint8, (KEY_SIZE,)), ("ordinal", "<u8")])
assert KEYREF_DTYPE.itemsize == KEYREF_SIZE

BytesLike = Union[bytes, bytearray, memoryview, np.ndarray]


class Ordering(enum.IntEnum):
    LESS = -1
    EQUAL = 0
    GREATER = 1


@dataclass(frozen=True)
class Record:
    data: bytes

    def __post_init__(self):
        if len(self.data) != RECORD_SIZE:
            raise MalformedInputError(
                f"record must be {RECORD_SIZE} bytes, got {len(self.data)}"
            )

    @property
    def key(self) -> bytes:
        return self.data[:KEY_SIZE]

    @property
    def payload(self) -> bytes:
        return self.data[KEY_SIZE:]


@dataclass(frozen=True, order=True)
class KeyRef:
    key: bytes
    ordinal: int


def key_compare(a: bytes, b: bytes) -> Ordering:
    """Unsigned lexicographic comparison of two 10-byte keys."""
    if len(a) != KEY_SIZE or len(b) != KEY_SIZE:
        raise MalformedInputError(
            f"keys must be {KEY_SIZE} bytes, got {len(a)} and {len(b)}"
        )
    a, b = bytes(a), bytes(b)
    if a < b:
        return Ordering.LESS
    if a > b:
        return Ordering.GREATER
    return Ordering.EQUAL


def record_view(span: BytesLike) -> np.ndarray:
    """View ``span`` as an ``(n, 100)`` uint8 array without copying."""
    if isinstance(span, np.ndarray):
        arr = span.reshape(-1) if span.ndim != 1 else span
        if arr.dtype != np.uint8:
            arr = arr.view(np.uint8)
    else:
        arr = np.frombuffer(span, dtype=np.uint8)
    residue = arr.size % RECORD_SIZE
    if residue:
        raise MalformedInputError(
            f"span of {arr.size} bytes is not a whole number of records "
            f"({residue} trailing bytes)"
        )
    return arr.reshape(-1, RECORD_SIZE)


def keyref_rows(keyrefs: np.ndarray) -> np.ndarray:
    """Raw ``(n, 18)`` byte view of a KeyRef array; shares memory."""
    if keyrefs.dtype != KEYREF_DTYPE:
        raise TypeError(f"expected KEYREF_DTYPE array, got {keyrefs.dtype}")
    return keyrefs.reshape(-1).view(np.uint8).reshape(-1, KEYREF_SIZE)


def empty_keyrefs(n: int) -> np.ndarray:
    return np.empty(n, dtype=KEYREF_DTYPE)


def extract_keyrefs(
    span: BytesLike, base_ordinal: int = 0, out: np.ndarray | None = None
) -> np.ndarray:
    """Copy each record's key and pair it with its ordinal.

    Ordinals run ``base_ordinal, base_ordinal + 1, ...`` in record order.
    When ``out`` is given it must hold at least as many KeyRefs as ``span``
    has records; the filled prefix is returned.
    """
    recs = record_view(span)
    n = recs.shape[0]
    if out is None:
        out = np.empty(n, dtype=KEYREF_DTYPE)
    else:
        out = out[:n]
    out["key"] = recs[:, :KEY_SIZE]
    out["ordinal"] = np.arange(base_ordinal, base_ordinal + n, dtype=np.uint64)
    return out


def keyrefs_from_keys(keys: Iterable[bytes], base_ordinal: int = 0) -> np.ndarray:
    """Build a KeyRef array straight from a sequence of 10-byte keys."""
    keys = list(keys)
    out = np.empty(len(keys), dtype=KEYREF_DTYPE)
    if keys:
        out["key"] = np.frombuffer(b"".join(keys), dtype=np.uint8).reshape(-1, KEY_SIZE)
    out["ordinal"] = np.arange(base_ordinal, base_ordinal + len(keys), dtype=np.uint64)
    return out


def to_keyref_list(keyrefs: np.ndarray) -> list[KeyRef]:
    return [KeyRef(bytes(k), int(o)) for k, o in zip(keyrefs["key"], keyrefs["ordinal"])]


def key_words(keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split ``(n, 10)`` keys into big-endian (uint64, uint16) words.

    Comparing the pairs lexicographically is the same as comparing the keys.
    """
    keys = np.asarray(keys, dtype=np.uint8).reshape(-1, KEY_SIZE)
    hi = np.ascontiguousarray(keys[:, :8]).view(">u8").reshape(-1).astype(np.uint64)
    lo = np.ascontiguousarray(keys[:, 8:]).view(">u2").reshape(-1).astype(np.uint16)
    return hi, lo


def first_descent(keys: np.ndarray, prev_key: bytes | None = None) -> int:
    """Index of the first key strictly less than its predecessor, or -1.

    ``prev_key`` is the key that precedes ``keys[0]`` (carried across chunks).
    """
    keys = np.asarray(keys, dtype=np.uint8).reshape(-1, KEY_SIZE)
    if keys.shape[0] == 0:
        return -1
    if prev_key is not None:
        head = np.frombuffer(bytes(prev_key), dtype=np.uint8).reshape(1, KEY_SIZE)
        keys = np.concatenate([head, keys])
        shift = -1
    else:
        shift = 0
    hi, lo = key_words(keys)
    down = (hi[1:] < hi[:-1]) | ((hi[1:] == hi[:-1]) & (lo[1:] < lo[:-1]))
    hits = np.flatnonzero(down)
    if hits.size == 0:
        return -1
    return int(hits[0]) + 1 + shift


# -- multiset checksum -------------------------------------------------------

_MASK64 = (1 << 64) - 1
_MASK128 = (1 << 128) - 1
_LANE_SEEDS = (0x9E3779B97F4A7C15, 0xD6E8FEB86659FD93)
_LANE_MULTS = (0xFF51AFD7ED558CCD, 0xC4CEB9FE1A85EC53)
_FMIX1 = 0xFF51AFD7ED558CCD
_FMIX2 = 0xC4CEB9FE1A85EC53
_CHECKSUM_BATCH = 1 << 16


def _record_words(record: bytes) -> list[int]:
    words = [int.from_bytes(record[i:i + 8], "little") for i in range(0, 96, 8)]
    words.append(int.from_bytes(record[96:100], "little"))
    return words


def record_hash(record: bytes) -> int:
    """128-bit mixing hash of one record (scalar reference implementation)."""
    if len(record) != RECORD_SIZE:
        raise MalformedInputError(f"record must be {RECORD_SIZE} bytes, got {len(record)}")
    words = _record_words(bytes(record))
    lanes = []
    for seed, mult in zip(_LANE_SEEDS, _LANE_MULTS):
        h = seed
        for w in words:
            h = ((h ^ w) * mult) & _MASK64
            h ^= h >> 32
        h ^= h >> 33
        h = (h * _FMIX1) & _MASK64
        h ^= h >> 33
        h = (h * _FMIX2) & _MASK64
        h ^= h >> 33
        lanes.append(h)
    return (lanes[1] << 64) | lanes[0]


def _hash_lanes(recs: np.ndarray) -> list[np.ndarray]:
    n = recs.shape[0]
    body = np.ascontiguousarray(recs[:, :96]).view("<u8").reshape(n, 12)
    tail = np.ascontiguousarray(recs[:, 96:]).view("<u4").reshape(n).astype(np.uint64)
    lanes = []
    for seed, mult in zip(_LANE_SEEDS, _LANE_MULTS):
        h = np.full(n, seed, dtype=np.uint64)
        m = np.uint64(mult)
        for j in range(13):
            w = body[:, j] if j < 12 else tail
            h ^= w
            h *= m
            h ^= h >> np.uint64(32)
        h ^= h >> np.uint64(33)
        h *= np.uint64(_FMIX1)
        h ^= h >> np.uint64(33)
        h *= np.uint64(_FMIX2)
        h ^= h >> np.uint64(33)
        lanes.append(h)
    return lanes


def _lane_sum(lane: np.ndarray) -> int:
    low = int((lane & np.uint64(0xFFFFFFFF)).sum(dtype=np.uint64))
    high = int((lane >> np.uint64(32)).sum(dtype=np.uint64))
    return low + (high << 32)


@dataclass(frozen=True)
class MultisetChecksum:
    """Order-independent digest: sum of per-record hashes modulo 2**128."""

    value: int = 0

    def __add__(self, other: "MultisetChecksum") -> "MultisetChecksum":
        return MultisetChecksum((self.value + other.value) & _MASK128)

    @property
    def hex(self) -> str:
        return f"{self.value:032x}"

    def __str__(self) -> str:
        return self.hex


def checksum_span(span: BytesLike) -> MultisetChecksum:
    """Checksum of a contiguous run of records (vectorised fast path)."""
    recs = record_view(span)
    total = 0
    with np.errstate(over="ignore"):
        for lo in range(0, recs.shape[0], _CHECKSUM_BATCH):
            lane0, lane1 = _hash_lanes(recs[lo:lo + _CHECKSUM_BATCH])
            total += _lane_sum(lane0) + (_lane_sum(lane1) << 64)
    return MultisetChecksum(total & _MASK128)


def multiset_checksum(records: Union[BytesLike, Iterable]) -> MultisetChecksum:
    """Checksum a span of records or a stream of records.

    Streams may yield :class:`Record` objects or raw 100-byte strings; any
    other length raises :class:`MalformedInputError`.
    """
    if isinstance(records, (bytes, bytearray, memoryview, np.ndarray)):
        return checksum_span(records)
    acc = MultisetChecksum()
    batch: list[bytes] = []
    for rec in records:
        data = rec.data if isinstance(rec, Record) else bytes(rec)
        if len(data) != RECORD_SIZE:
            raise MalformedInputError(
                f"record must be {RECORD_SIZE} bytes, got {len(data)}"
            )
        batch.append(data)
        if len(batch) == _CHECKSUM_BATCH:
            acc = acc + checksum_span(b"".join(batch))
            batch.clear()
    if batch:
        acc = acc + checksum_span(b"".join(batch))
    return acc
