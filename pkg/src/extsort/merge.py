"""K-way merging of key-sorted record slices."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import _kernels as K
from .errors import DataIntegrityError
from .records import KEY_SIZE, RECORD_SIZE, first_descent, record_view

#: scratch bytes per record a merge needs beyond input and output
MERGE_SCRATCH_PER_RECORD = 8 + 2 + 8


def kway_merge_order(key_slices: Sequence[np.ndarray]) -> np.ndarray:
    """Merged order of several sorted ``(m_i, 10)`` key arrays.

    Returns indices into the concatenation of the slices.  Equal keys come
    out in slice order, so the result is deterministic.
    """
    sizes = [len(k) for k in key_slices]
    keys = (np.concatenate([np.asarray(k, dtype=np.uint8).reshape(-1, KEY_SIZE) for k in key_slices])
            if key_slices else np.empty((0, KEY_SIZE), np.uint8))
    return _merge_order(keys, sizes)


def _merge_order(rows, sizes, scratch=None):
    total = rows.shape[0]
    if scratch is None:
        scratch = np.empty(total * MERGE_SCRATCH_PER_RECORD, dtype=np.uint8)
    out = scratch[:8 * total].view(np.int64)
    hi = scratch[8 * total:16 * total].view(np.uint64)
    lo = scratch[16 * total:18 * total].view(np.uint16)
    if total:
        K.pack_keys(rows, hi, lo)
        ends = np.cumsum(np.asarray(sizes, dtype=np.int64))
        starts = ends - np.asarray(sizes, dtype=np.int64)
        K.loser_tree_merge(hi, lo, starts, ends, out)
    return out


def check_sorted(views: Sequence[np.ndarray]):
    for i, v in enumerate(views):
        bad = first_descent(v[:, :KEY_SIZE])
        if bad >= 0:
            raise DataIntegrityError(f"merge input slice {i} is out of order at record {bad}")


def merge_concatenated(flat: np.ndarray, sizes: Sequence[int], out: np.ndarray,
                       scratch: np.ndarray | None = None) -> np.ndarray:
    """Merge sorted slices stored back to back in ``flat`` into ``out``.

    ``scratch`` (``MERGE_SCRATCH_PER_RECORD`` bytes per record, 8-byte
    aligned) avoids hidden allocations when memory is budgeted.
    """
    flat = record_view(flat)
    edges = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    check_sorted([flat[edges[i]:edges[i + 1]] for i in range(len(sizes))])
    total = flat.shape[0]
    out = record_view(out)[:total]
    if total == 0:
        return out
    if len(sizes) == 1:
        out[:] = flat
        return out
    order = _merge_order(flat, sizes, scratch)
    K.gather_records(flat, order, 0, 0, total, out, 0)
    return out


def merge_partition(slices: Sequence, out: np.ndarray | None = None) -> np.ndarray:
    """Merge key-sorted record slices into one key-sorted ``(M, 100)`` array.

    Raises :class:`DataIntegrityError` if any slice is out of order.
    """
    views = [record_view(s) for s in slices]
    check_sorted(views)
    total = sum(v.shape[0] for v in views)
    if out is None:
        out = np.empty((total, RECORD_SIZE), dtype=np.uint8)
    flat = np.concatenate(views) if views else np.empty((0, RECORD_SIZE), np.uint8)
    return merge_concatenated(flat, [v.shape[0] for v in views], out)
