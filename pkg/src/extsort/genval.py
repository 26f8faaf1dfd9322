"""Seeded record generator and streaming output validator."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import MalformedInputError
from .records import (KEY_SIZE, RECORD_SIZE, MultisetChecksum, checksum_span,
                      first_descent, record_view)

#: records per independently seeded block; fixing it keeps output identical
#: whatever the worker count
GEN_BLOCK = 1 << 16
ASCII_LO, ASCII_HI = 0x20, 0x7E
_HEX = np.frombuffer(b"0123456789ABCDEF", dtype=np.uint8)
_VALIDATE_CHUNK = 40_960 * RECORD_SIZE

DISTRIBUTIONS = ("uniform", "skewed")
ENCODINGS = ("binary", "ascii")


@dataclass(frozen=True)
class GenSpec:
    count: int
    seed: int = 0
    distribution: str = "uniform"
    encoding: str = "binary"
    skew_exponent: float = 1.0

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("record count must be non-negative")
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"distribution must be one of {DISTRIBUTIONS}")
        if self.encoding not in ENCODINGS:
            raise ValueError(f"encoding must be one of {ENCODINGS}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")


def _zipf_octets(rng, size, alphabet, exponent):
    ranks = np.arange(1, alphabet + 1, dtype=np.float64)
    p = ranks ** -exponent
    return rng.choice(alphabet, size=size, p=p / p.sum()).astype(np.uint8)


def _mix64(x: np.ndarray) -> np.ndarray:
    x = x.copy()
    with np.errstate(over="ignore"):
        x += np.uint64(0x9E3779B97F4A7C15)
        x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def _hex_digits(values: np.ndarray) -> np.ndarray:
    shifts = np.arange(60, -4, -4, dtype=np.uint64)
    return _HEX[((values[:, None] >> shifts) & np.uint64(0xF)).astype(np.intp)]


def generate_block(spec: GenSpec, block: int) -> np.ndarray:
    """Records ``[block * GEN_BLOCK, ...)`` of the dataset as an (m, 100) array."""
    first = block * GEN_BLOCK
    m = min(GEN_BLOCK, spec.count - first)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, block])))
    out = np.empty((m, RECORD_SIZE), dtype=np.uint8)
    ascii_ = spec.encoding == "ascii"
    lo, alphabet = (ASCII_LO, ASCII_HI - ASCII_LO + 1) if ascii_ else (0, 256)
    keys = rng.integers(0, alphabet, size=(m, KEY_SIZE), dtype=np.uint16)
    if spec.distribution == "skewed":
        keys[:, 0] = _zipf_octets(rng, m, alphabet, spec.skew_exponent)
        keys[:, 1] = _zipf_octets(rng, m, alphabet, spec.skew_exponent)
    out[:, :KEY_SIZE] = keys + lo

    ordinals = np.arange(first, first + m, dtype=np.uint64)
    out[:, 10:26] = _hex_digits(ordinals)
    filler = _hex_digits(_mix64(ordinals ^ np.uint64(spec.seed)))
    out[:, 26:] = np.tile(filler, (1, 5))[:, :RECORD_SIZE - 26]
    if ascii_:
        out[:, 98] = 0x0D
        out[:, 99] = 0x0A
    return out


def generate(spec: GenSpec, path, workers: int = 1) -> int:
    """Write ``spec.count`` records to ``path``; returns the count written."""
    blocks = range(-(-spec.count // GEN_BLOCK))
    with open(path, "wb") as f:
        if workers > 1 and len(blocks) > 1:
            with ThreadPoolExecutor(workers) as ex:
                for arr in ex.map(lambda b: generate_block(spec, b), blocks):
                    f.write(arr.data)
        else:
            for b in blocks:
                f.write(generate_block(spec, b).data)
    return spec.count


@dataclass(frozen=True)
class ValidationReport:
    ordered: bool
    first_violation: int | None
    record_count: int
    checksum: MultisetChecksum = field(default_factory=MultisetChecksum)

    def as_dict(self) -> dict:
        return {
            "ordered": self.ordered,
            "first_violation": self.first_violation,
            "record_count": self.record_count,
            "checksum": self.checksum.hex,
        }


def validate_span(span) -> ValidationReport:
    recs = record_view(span)
    bad = first_descent(recs[:, :KEY_SIZE])
    return ValidationReport(bad < 0, None if bad < 0 else bad, recs.shape[0], checksum_span(recs))


def validate(path, chunk_size: int = _VALIDATE_CHUNK) -> ValidationReport:
    """One streaming pass: key order, first inversion, count and checksum."""
    size = os.path.getsize(path)
    if size % RECORD_SIZE:
        raise MalformedInputError(
            f"{path}: {size} bytes is not a whole number of records "
            f"({size % RECORD_SIZE} trailing bytes)"
        )
    chunk_size = max(RECORD_SIZE, chunk_size // RECORD_SIZE * RECORD_SIZE)
    first_bad = None
    prev = None
    count = 0
    checksum = MultisetChecksum()
    with open(path, "rb") as f:
        while True:
            data = f.read(chunk_size)
            if not data:
                break
            recs = record_view(data)
            keys = recs[:, :KEY_SIZE]
            if first_bad is None:
                bad = first_descent(keys, prev)
                if bad >= 0:
                    first_bad = count + bad
            prev = bytes(keys[-1])
            checksum = checksum + checksum_span(recs)
            count += recs.shape[0]
    return ValidationReport(first_bad is None, first_bad, count, checksum)


def validate_order(path) -> bool:
    return validate(path).ordered
