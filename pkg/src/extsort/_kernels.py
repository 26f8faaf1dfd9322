"""Compiled inner loops.

All kernels release the GIL so worker threads run them concurrently.  KeyRef
arrays arrive as ``(n, 18)`` uint8 row views: bytes 0-9 are the key, 10-17
the little-endian ordinal.  Two same-shaped buffers ``a`` (primary) and ``b``
(auxiliary) ping-pong between radix levels: a span at depth ``d`` lives in
``a`` when ``d`` is even and in ``b`` when odd.  Every finished span is left
in ``a``.
"""

from __future__ import annotations

import numpy as np
from numba import njit

ROW = 18
KEY = 10
INSERTION_LIMIT = 16

_jit = njit(nogil=True, cache=True)


@_jit
def histogram(rows, lo, hi, depth):
    counts = np.zeros(256, np.int64)
    for i in range(lo, hi):
        counts[rows[i, depth]] += 1
    return counts


@_jit
def exclusive_offsets(counts, base):
    pos = np.empty(256, np.int64)
    acc = base
    for b in range(256):
        pos[b] = acc
        acc += counts[b]
    return pos


@_jit
def copy_rows(src, dst, lo, hi):
    for i in range(lo, hi):
        for c in range(ROW):
            dst[i, c] = src[i, c]


@_jit
def scatter(src, dst, lo, hi, depth, write_pos):
    for i in range(lo, hi):
        bucket = src[i, depth]
        p = write_pos[bucket]
        for c in range(ROW):
            dst[p, c] = src[i, c]
        write_pos[bucket] = p + 1


@_jit
def scatter_staged(src, dst, lo, hi, depth, write_pos, stage, fill):
    # stage: (256, capacity, ROW) worker-private staging area
    cap = stage.shape[1]
    for i in range(lo, hi):
        bucket = src[i, depth]
        f = fill[bucket]
        for c in range(ROW):
            stage[bucket, f, c] = src[i, c]
        f += 1
        if f == cap:
            p = write_pos[bucket]
            for k in range(cap):
                for c in range(ROW):
                    dst[p + k, c] = stage[bucket, k, c]
            write_pos[bucket] = p + cap
            f = 0
        fill[bucket] = f
    for bucket in range(256):
        f = fill[bucket]
        if f:
            p = write_pos[bucket]
            for k in range(f):
                for c in range(ROW):
                    dst[p + k, c] = stage[bucket, k, c]
            write_pos[bucket] = p + f
            fill[bucket] = 0


@_jit
def row_less(x, i, y, j, depth):
    for c in range(depth, KEY):
        u = x[i, c]
        v = y[j, c]
        if u != v:
            return u < v
    return False


@_jit
def insertion_sort(rows, lo, hi, depth, tmp):
    for i in range(lo + 1, hi):
        if not row_less(rows, i, rows, i - 1, depth):
            continue
        for c in range(ROW):
            tmp[0, c] = rows[i, c]
        j = i - 1
        while j >= lo and row_less(tmp, 0, rows, j, depth):
            for c in range(ROW):
                rows[j + 1, c] = rows[j, c]
            j -= 1
        for c in range(ROW):
            rows[j + 1, c] = tmp[0, c]


@_jit
def merge_runs(src, dst, lo, mid, hi, depth):
    i = lo
    j = mid
    k = lo
    while i < mid and j < hi:
        if row_less(src, j, src, i, depth):
            for c in range(ROW):
                dst[k, c] = src[j, c]
            j += 1
        else:
            for c in range(ROW):
                dst[k, c] = src[i, c]
            i += 1
        k += 1
    while i < mid:
        for c in range(ROW):
            dst[k, c] = src[i, c]
        i += 1
        k += 1
    while j < hi:
        for c in range(ROW):
            dst[k, c] = src[j, c]
        j += 1
        k += 1


@_jit
def sort_leaf(a, b, lo, hi, depth, in_b):
    """Stable comparison sort of ``[lo, hi)`` on key bytes ``depth..9``; result in ``a``."""
    n = hi - lo
    if n <= 0:
        return
    tmp = np.empty((1, ROW), np.uint8)
    if n <= INSERTION_LIMIT:
        if in_b:
            copy_rows(b, a, lo, hi)
        insertion_sort(a, lo, hi, depth, tmp)
        return
    cur_b = in_b
    for s in range(lo, hi, INSERTION_LIMIT):
        e = min(s + INSERTION_LIMIT, hi)
        if cur_b:
            insertion_sort(b, s, e, depth, tmp)
        else:
            insertion_sort(a, s, e, depth, tmp)
    width = INSERTION_LIMIT
    while width < n:
        for s in range(lo, hi, 2 * width):
            mid = min(s + width, hi)
            e = min(s + 2 * width, hi)
            if cur_b:
                merge_runs(b, a, s, mid, e, depth)
            else:
                merge_runs(a, b, s, mid, e, depth)
        cur_b = not cur_b
        width *= 2
    if cur_b:
        copy_rows(b, a, lo, hi)


@_jit
def radix_task(a, b, lo, hi, depth, tiny, out_spans, stats):
    """One single-threaded radix pass over a queued span.

    Sub-buckets that still need work are written to ``out_spans`` (at depth
    ``depth + 1``) and their number returned.  ``stats`` accumulates
    [comparison sorts, radix passes].
    """
    in_b = depth % 2 == 1
    n = hi - lo
    if n < tiny:
        sort_leaf(a, b, lo, hi, depth, in_b)
        stats[0] += 1
        return 0
    if in_b:
        src = b
        dst = a
    else:
        src = a
        dst = b
    counts = histogram(src, lo, hi, depth)
    write_pos = exclusive_offsets(counts, lo)
    scatter(src, dst, lo, hi, depth, write_pos)
    stats[1] += 1
    nd = depth + 1
    dst_b = not in_b
    m = 0
    start = lo
    for bucket in range(256):
        s = counts[bucket]
        if s == 0:
            continue
        end = start + s
        if s == 1 or nd >= KEY:
            if dst_b:
                copy_rows(b, a, start, end)
        elif s < tiny:
            sort_leaf(a, b, start, end, nd, dst_b)
            stats[0] += 1
        else:
            out_spans[m, 0] = start
            out_spans[m, 1] = end
            m += 1
        start = end
    return m


@_jit
def classify_buckets(a, b, counts, lo, next_depth, big):
    """Split a scattered span's buckets into big (recurse) and small (queue) spans.

    Buckets that are already final (size 1, or depth exhausted) are copied
    back to ``a`` here.
    """
    big_spans = np.empty((256, 2), np.int64)
    small_spans = np.empty((256, 2), np.int64)
    nb = 0
    ns = 0
    dst_b = next_depth % 2 == 1
    start = lo
    for bucket in range(256):
        s = counts[bucket]
        if s == 0:
            continue
        end = start + s
        if s == 1 or next_depth >= KEY:
            if dst_b:
                copy_rows(b, a, start, end)
        elif s > big:
            big_spans[nb, 0] = start
            big_spans[nb, 1] = end
            nb += 1
        else:
            small_spans[ns, 0] = start
            small_spans[ns, 1] = end
            ns += 1
        start = end
    return big_spans[:nb], small_spans[:ns]


@_jit
def gather_records(records, ordinals, base, lo, hi, out, out_lo):
    """``out[out_lo + k] = records[ordinals[lo + k] - base]``."""
    width = records.shape[1]
    for i in range(lo, hi):
        src = np.int64(ordinals[i]) - base
        dst = out_lo + i - lo
        for c in range(width):
            out[dst, c] = records[src, c]


@_jit
def run_before(x, y, k, pos, ends, hi, lo):
    # exhausted runs compare as +infinity; ties resolve to the lower run index
    if x >= k or pos[x] >= ends[x]:
        return False
    if y >= k or pos[y] >= ends[y]:
        return True
    px = pos[x]
    py = pos[y]
    if hi[px] != hi[py]:
        return hi[px] < hi[py]
    if lo[px] != lo[py]:
        return lo[px] < lo[py]
    return x < y


@_jit
def loser_tree_merge(hi, lo, starts, ends, out):
    """K-way merge of sorted runs laid end to end in ``hi``/``lo``.

    ``out`` receives global indices into the concatenation in merged order.
    """
    k = starts.shape[0]
    size = 1
    while size < k:
        size *= 2
    pos = starts.copy()
    losers = np.empty(size, np.int64)
    winners = np.empty(2 * size, np.int64)
    for i in range(size):
        winners[size + i] = i
    for node in range(size - 1, 0, -1):
        left = winners[2 * node]
        right = winners[2 * node + 1]
        if run_before(right, left, k, pos, ends, hi, lo):
            winners[node] = right
            losers[node] = left
        else:
            winners[node] = left
            losers[node] = right
    champion = winners[1] if size > 1 else 0
    total = out.shape[0]
    for o in range(total):
        w = champion
        out[o] = pos[w]
        pos[w] += 1
        node = (w + size) // 2
        while node >= 1:
            if run_before(losers[node], w, k, pos, ends, hi, lo):
                t = losers[node]
                losers[node] = w
                w = t
            node //= 2
        champion = w


@_jit
def pack_keys(rows, hi, lo):
    """Big-endian (uint64, uint16) words of the 10-byte keys at the start of each row."""
    for i in range(rows.shape[0]):
        h = np.uint64(0)
        for c in range(8):
            h = (h << np.uint64(8)) | np.uint64(rows[i, c])
        hi[i] = h
        lo[i] = (np.uint16(rows[i, 8]) << np.uint16(8)) | np.uint16(rows[i, 9])
