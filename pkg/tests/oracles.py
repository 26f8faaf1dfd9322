"""Independent reference implementations used by the tests.

These deliberately avoid the package's kernels: plain Python loops and
built-in sorting only.
"""

from __future__ import annotations

import numpy as np

RECORD = 100
KEY = 10


def octet_compare(a: bytes, b: bytes) -> int:
    for x, y in zip(a, b):
        if x != y:
            return -1 if x < y else 1
    return 0


def naive_tally(keys, depth):
    counts = [0] * 256
    for k in keys:
        counts[k[depth]] += 1
    return counts


def sorted_keys(keys):
    return sorted(bytes(k) for k in keys)


def key_list(keyrefs):
    return [bytes(k) for k in np.asarray(keyrefs["key"])]


def records_of(data: bytes):
    return [data[i:i + RECORD] for i in range(0, len(data), RECORD)]


def is_ordered(data: bytes) -> bool:
    recs = records_of(data)
    return all(recs[i][:KEY] <= recs[i + 1][:KEY] for i in range(len(recs) - 1))


def multiset(data: bytes):
    return sorted(records_of(data))


def linear_partition_counts(run_keys, splitters):
    """Per run, per partition counts found by scanning every key."""
    bounds = [None, *splitters, None]
    out = []
    for keys in run_keys:
        row = []
        for j in range(len(bounds) - 1):
            lo, hi = bounds[j], bounds[j + 1]
            row.append(sum(1 for k in keys if (lo is None or k >= lo) and (hi is None or k < hi)))
        out.append(row)
    return out


def random_records(rng, n, key_alphabet=256):
    recs = rng.integers(0, 256, size=(n, RECORD), dtype=np.uint8)
    recs[:, :KEY] = rng.integers(0, key_alphabet, size=(n, KEY), dtype=np.uint8)
    return recs


def pad(s: str) -> bytes:
    return s.encode().ljust(KEY, b"\0")
