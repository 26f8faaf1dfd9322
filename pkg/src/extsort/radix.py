"""Adaptive parallel MSD radix sort over KeyRef arrays.

The top level (and any bucket larger than ``big_bucket_threshold``) is
histogrammed and scattered by all workers at once.  Smaller buckets become
tasks on a shared queue that workers drain single-threadedly, comparison
sorting anything below ``tiny_bucket_threshold``.
"""

from __future__ import annotations

import logging
import os
import threading
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels as K
from .errors import InternalInvariantError
from .records import KEY_SIZE, KEYREF_DTYPE, KEYREF_SIZE, keyref_rows

log = logging.getLogger(__name__)

#: spans shorter than this are never split across workers
MIN_PARALLEL_SLICE = 1 << 14
_THRESHOLD_CAP = 1 << 62


def default_worker_count() -> int:
    return max(1, os.cpu_count() or 1)


def _as_threshold(value) -> int:
    if value is None:
        return None
    if value == float("inf"):
        return _THRESHOLD_CAP
    value = int(value)
    if value < 0:
        raise ValueError(f"thresholds must be non-negative, got {value}")
    return min(value, _THRESHOLD_CAP)


@dataclass
class RadixConfig:
    """Knobs for :func:`msd_radix_sort`.

    ``big_bucket_threshold=None`` resolves per call to
    ``max(n // (8 * worker_count), 65536)``.  ``float('inf')`` is accepted
    for either threshold.
    """

    big_bucket_threshold: int | None = None
    tiny_bucket_threshold: int = 64
    worker_count: int = field(default_factory=default_worker_count)
    scatter_buffer_capacity: int = 16

    def __post_init__(self):
        self.big_bucket_threshold = _as_threshold(self.big_bucket_threshold)
        self.tiny_bucket_threshold = _as_threshold(self.tiny_bucket_threshold)
        if self.worker_count < 1:
            raise ValueError(f"worker_count must be >= 1, got {self.worker_count}")
        if self.scatter_buffer_capacity < 1:
            raise ValueError("scatter_buffer_capacity must be >= 1")

    def big_threshold_for(self, n: int) -> int:
        if self.big_bucket_threshold is not None:
            return self.big_bucket_threshold
        return max(n // (8 * self.worker_count), 65536)


@dataclass(frozen=True)
class BucketLayout:
    counts: np.ndarray
    offsets: np.ndarray

    @classmethod
    def from_counts(cls, counts) -> "BucketLayout":
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (256,):
            raise ValueError("a bucket layout has exactly 256 counts")
        offsets = np.zeros(256, dtype=np.int64)
        np.cumsum(counts[:-1], out=offsets[1:])
        return cls(counts, offsets)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def splits(self) -> np.ndarray:
        """The 257 bucket boundaries, ``offsets`` followed by the total."""
        return np.append(self.offsets, self.total)

    def non_empty(self) -> int:
        return int(np.count_nonzero(self.counts))


class SortTask(NamedTuple):
    lo: int
    hi: int
    depth: int


def _check_depth(depth: int):
    if not 0 <= depth < KEY_SIZE:
        raise ValueError(f"radix depth must be in [0, {KEY_SIZE}), got {depth}")


def build_histogram(span: np.ndarray, depth: int) -> BucketLayout:
    _check_depth(depth)
    rows = keyref_rows(span)
    return BucketLayout.from_counts(K.histogram(rows, 0, rows.shape[0], depth))


def _check_scatter_args(span, layout, destination):
    if layout.total != len(span):
        raise InternalInvariantError(
            f"layout covers {layout.total} KeyRefs but span holds {len(span)}"
        )
    if len(destination) < len(span):
        raise ValueError("destination is smaller than the span")


def scatter(span: np.ndarray, layout: BucketLayout, depth: int,
            destination: np.ndarray) -> np.ndarray:
    """Group ``span`` by the key byte at ``depth`` into ``destination``.

    Sequential and stable.  Returns the 257 bucket boundaries.
    """
    _check_depth(depth)
    _check_scatter_args(span, layout, destination)
    src, dst = keyref_rows(span), keyref_rows(destination)
    K.scatter(src, dst, 0, src.shape[0], depth, layout.offsets.copy())
    return layout.splits()


def _slice_bounds(lo: int, hi: int, workers: int) -> list[tuple[int, int]]:
    n = hi - lo
    parts = max(1, min(workers, n // MIN_PARALLEL_SLICE))
    edges = [lo + n * i // parts for i in range(parts + 1)]
    return list(zip(edges[:-1], edges[1:]))


def _new_stage(capacity: int) -> tuple[np.ndarray, np.ndarray]:
    return np.empty((256, capacity, KEYREF_SIZE), np.uint8), np.zeros(256, np.int64)


def _parallel_pass(src, dst, lo, hi, depth, capacity, executor, workers):
    """Histogram and staged scatter of ``src[lo:hi]`` using per-worker slices.

    Worker ``w``'s share of bucket ``b`` lands after workers ``< w``, so the
    pass is stable whatever the slice count.  Returns the bucket counts.
    """
    slices = _slice_bounds(lo, hi, workers)
    if len(slices) == 1 or executor is None:
        counts = K.histogram(src, lo, hi, depth)
        stage, fill = _new_stage(capacity)
        K.scatter_staged(src, dst, lo, hi, depth, K.exclusive_offsets(counts, lo), stage, fill)
        return counts
    per_slice = np.stack(list(executor.map(lambda s: K.histogram(src, s[0], s[1], depth), slices)))
    totals = per_slice.sum(axis=0)
    starts = lo + BucketLayout.from_counts(totals).offsets[None, :] \
        + np.cumsum(per_slice, axis=0) - per_slice

    def run(i):
        stage, fill = _new_stage(capacity)
        s0, s1 = slices[i]
        K.scatter_staged(src, dst, s0, s1, depth, starts[i].copy(), stage, fill)

    list(executor.map(run, range(len(slices))))
    return totals


def scatter_buffered(span: np.ndarray, layout: BucketLayout, depth: int,
                     destination: np.ndarray, config: RadixConfig | None = None) -> np.ndarray:
    """Scatter through small per-worker, per-bucket staging buffers.

    Each worker fills ``scatter_buffer_capacity`` KeyRefs per bucket before
    flushing them to ``destination`` in one batch.  With one worker the
    result is byte-identical to :func:`scatter`.
    """
    config = config or RadixConfig()
    _check_depth(depth)
    _check_scatter_args(span, layout, destination)
    src, dst = keyref_rows(span), keyref_rows(destination)
    n = src.shape[0]
    workers = config.worker_count
    if workers > 1 and len(_slice_bounds(0, n, workers)) > 1:
        with ThreadPoolExecutor(workers) as ex:
            counts = _parallel_pass(src, dst, 0, n, depth, config.scatter_buffer_capacity, ex, workers)
    else:
        counts = _parallel_pass(src, dst, 0, n, depth, config.scatter_buffer_capacity, None, 1)
    if not np.array_equal(counts, layout.counts):
        raise InternalInvariantError("layout does not match the span's histogram")
    return layout.splits()


def comparison_sort_fallback(span: np.ndarray, depth: int = 0) -> np.ndarray:
    """Sort ``span`` in place comparing key bytes ``depth..9`` only.

    All KeyRefs are assumed to share key bytes before ``depth``.
    """
    if not 0 <= depth <= KEY_SIZE:
        raise ValueError(f"depth must be in [0, {KEY_SIZE}], got {depth}")
    rows = keyref_rows(span)
    K.sort_leaf(rows, np.empty_like(rows), 0, rows.shape[0], depth, False)
    return span


class SmallBucketQueue:
    """Shared queue of small-bucket tasks with termination detection.

    ``outstanding`` counts tasks that are queued or in flight; workers leave
    once it reaches zero, which is the only moment no worker can enqueue
    more work.
    """

    def __init__(self, primary: np.ndarray, aux: np.ndarray):
        self.a = primary
        self.b = aux
        self._tasks: deque[SortTask] = deque()
        self._cond = threading.Condition()
        self._outstanding = 0
        self._aborted = False
        self.comparison_sorts = 0
        self.radix_passes = 0
        self.tasks_processed = 0
        self.max_depth = -1

    def put(self, task: SortTask):
        self.put_spans(np.array([[task.lo, task.hi]], dtype=np.int64), task.depth)

    def put_spans(self, spans: np.ndarray, depth: int):
        if len(spans) == 0:
            return
        if depth >= KEY_SIZE:
            raise InternalInvariantError(f"task created at depth {depth}")
        with self._cond:
            self._tasks.extend(SortTask(int(lo), int(hi), depth) for lo, hi in spans)
            self._outstanding += len(spans)
            self.max_depth = max(self.max_depth, depth)
            self._cond.notify_all()

    def get(self) -> SortTask | None:
        with self._cond:
            while not self._tasks:
                if self._outstanding == 0 or self._aborted:
                    return None
                self._cond.wait()
            return self._tasks.popleft()

    def task_done(self, comparison_sorts: int = 0, radix_passes: int = 0):
        with self._cond:
            self._outstanding -= 1
            self.tasks_processed += 1
            self.comparison_sorts += comparison_sorts
            self.radix_passes += radix_passes
            if self._outstanding == 0:
                self._cond.notify_all()

    def abort(self):
        with self._cond:
            self._aborted = True
            self._cond.notify_all()

    @property
    def outstanding(self) -> int:
        return self._outstanding


def small_bucket_worker(queue: SmallBucketQueue, config: RadixConfig):
    """Drain ``queue`` until no task is queued or in flight anywhere."""
    tiny = config.tiny_bucket_threshold
    spans = np.empty((256, 2), dtype=np.int64)
    stats = np.zeros(2, dtype=np.int64)
    try:
        while True:
            task = queue.get()
            if task is None:
                return
            stats[:] = 0
            m = K.radix_task(queue.a, queue.b, task.lo, task.hi, task.depth, tiny, spans, stats)
            if m:
                queue.put_spans(spans[:m].copy(), task.depth + 1)
            queue.task_done(int(stats[0]), int(stats[1]))
    except BaseException:
        queue.abort()
        raise


def _msd(a, b, lo, hi, depth, big, queue, config, executor):
    src, dst = (b, a) if depth % 2 else (a, b)
    counts = _parallel_pass(src, dst, lo, hi, depth, config.scatter_buffer_capacity,
                            executor, config.worker_count)
    queue.radix_passes += 1  # workers start only after the recursive phase
    big_spans, small_spans = K.classify_buckets(a, b, counts, lo, depth + 1, big)
    if depth + 1 < KEY_SIZE:
        queue.put_spans(small_spans, depth + 1)
    for blo, bhi in big_spans:
        _msd(a, b, int(blo), int(bhi), depth + 1, big, queue, config, executor)


def msd_radix_sort(keyrefs: np.ndarray, config: RadixConfig | None = None,
                   aux: np.ndarray | None = None, stats: dict | None = None) -> np.ndarray:
    """Sort a KeyRef array by key, in place, and return it.

    Parameters
    ----------
    keyrefs : ndarray of KEYREF_DTYPE
    config : RadixConfig, optional
    aux : ndarray of KEYREF_DTYPE, optional
        Scratch buffer at least as long as ``keyrefs``; allocated if omitted.
    stats : dict, optional
        Filled with queue counters (tasks, comparison sorts, radix passes).

    Equal keys keep their input order, but callers should not rely on it.
    """
    config = config or RadixConfig()
    if keyrefs.dtype != KEYREF_DTYPE:
        raise TypeError(f"expected KEYREF_DTYPE array, got {keyrefs.dtype}")
    n = len(keyrefs)
    if n <= 1:
        return keyrefs
    if aux is None:
        aux = np.empty(n, dtype=KEYREF_DTYPE)
    a = keyref_rows(keyrefs)
    b = keyref_rows(aux[:n])
    big = config.big_threshold_for(n)
    queue = SmallBucketQueue(a, b)
    workers = config.worker_count
    if workers == 1:
        _msd(a, b, 0, n, 0, big, queue, config, None)
        small_bucket_worker(queue, config)
    else:
        with ThreadPoolExecutor(workers, thread_name_prefix="radix") as ex:
            _msd(a, b, 0, n, 0, big, queue, config, ex)
            futures = [ex.submit(small_bucket_worker, queue, config) for _ in range(workers)]
            for f in futures:
                f.result()
    if queue.outstanding:
        raise InternalInvariantError(f"{queue.outstanding} tasks left unfinished")
    if stats is not None:
        stats.update(tasks=queue.tasks_processed, comparison_sorts=queue.comparison_sorts,
                     radix_passes=queue.radix_passes, max_task_depth=queue.max_depth, big_threshold=big)
    return keyrefs
