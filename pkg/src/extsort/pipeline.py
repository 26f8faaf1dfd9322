"""Adaptive sort driver: internal sort, run formation and the partitioned merge.

Memory is accounted through a :class:`~extsort.ioengine.BufferPool`.  Every
pipeline stage that needs a large buffer gets it from the stage that feeds
it, so only the first stage ever waits on the pool and back-pressure can
never deadlock.
"""

from __future__ import annotations

import bisect
import logging
import math
import mmap
import os
import queue
import shutil
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from contextlib import ExitStack
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels as K
from .errors import (ConfigurationError, DataIntegrityError, InternalInvariantError,
                     MalformedInputError, SortError, StageError)
from .ioengine import (DEFAULT_CHUNK_SIZE, DEFAULT_WATCHDOG, BufferPool, MappedSink,
                       StreamedSink, _Source, chunk_records_aligned, default_reader_count,
                       direct_io_supported, parallel_read)
from .merge import MERGE_SCRATCH_PER_RECORD, merge_concatenated
from .radix import RadixConfig, default_worker_count, msd_radix_sort
from .records import KEY_SIZE, KEYREF_DTYPE, KEYREF_SIZE, RECORD_SIZE, extract_keyrefs
from .report import StageClock, TimingBreakdown

log = logging.getLogger(__name__)

#: records + KeyRefs + auxiliary KeyRefs
RUN_BYTES_PER_RECORD = RECORD_SIZE + 2 * KEYREF_SIZE
#: partition input + merged output + merge scratch
MERGE_BYTES_PER_RECORD = 2 * RECORD_SIZE + MERGE_SCRATCH_PER_RECORD
#: run sizes are rounded to this many records so runs start 4 KiB-aligned
RUN_ALIGN_RECORDS = 1024
SAMPLES_PER_RUN = 256
MODES = ("auto", "internal", "external")
DIRECT_IO_MODES = ("on", "off", "auto")


def default_memory_budget() -> int:
    try:
        phys = os.sysconf("SC_PAGE_SIZE") * os.sysconf("SC_PHYS_PAGES")
    except (ValueError, OSError, AttributeError):
        phys = 8 << 30
    return max(64 << 20, phys // 2)


@dataclass
class SortConfig:
    memory_budget: int = field(default_factory=default_memory_budget)
    worker_count: int = field(default_factory=default_worker_count)
    reader_count: int | None = None
    chunk_size: int = DEFAULT_CHUNK_SIZE
    big_bucket_threshold: int | None = None
    tiny_bucket_threshold: int = 64
    scatter_buffer_capacity: int = 16
    direct_io: str = "auto"
    mode: str = "auto"
    queue_capacity: int = 2
    sequential: bool = False
    run_records: int | None = None
    partition_count: int | None = None
    watchdog: float = DEFAULT_WATCHDOG

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.direct_io not in DIRECT_IO_MODES:
            raise ConfigurationError(f"direct_io must be one of {DIRECT_IO_MODES}")
        if self.worker_count < 1 or (self.reader_count is not None and self.reader_count < 1):
            raise ConfigurationError("worker and reader counts must be positive")
        if self.chunk_size <= 0:
            raise ConfigurationError("chunk_size must be positive")
        if self.queue_capacity < 1:
            raise ConfigurationError("queue_capacity must be at least 1")

    @property
    def readers(self) -> int:
        if self.sequential:
            return 1
        return self.reader_count or default_reader_count(self.worker_count)

    @property
    def use_direct_io(self) -> bool:
        return self.direct_io != "off"

    def radix_config(self) -> RadixConfig:
        return RadixConfig(
            big_bucket_threshold=self.big_bucket_threshold,
            tiny_bucket_threshold=self.tiny_bucket_threshold,
            worker_count=1 if self.sequential else self.worker_count,
            scatter_buffer_capacity=self.scatter_buffer_capacity,
        )

    def echo(self) -> dict:
        return {
            "memory_budget": self.memory_budget,
            "worker_count": self.worker_count,
            "reader_count": self.readers,
            "chunk_size": self.chunk_size,
            "big_bucket_threshold": self.big_bucket_threshold,
            "tiny_bucket_threshold": self.tiny_bucket_threshold,
            "scatter_buffer_capacity": self.scatter_buffer_capacity,
            "direct_io": self.direct_io,
            "mode": self.mode,
            "queue_capacity": self.queue_capacity,
            "sequential": self.sequential,
            "run_records": self.run_records,
            "partition_count": self.partition_count,
        }


@dataclass(frozen=True)
class WorkerAllocation:
    readers: int
    sorters: int
    mergers: int
    writers: int


@dataclass
class SortPlan:
    mode: str
    input_bytes: int
    memory_budget: int
    record_count: int
    estimated_peak: int
    workers: WorkerAllocation
    run_records: int | None = None
    partition_count: int | None = None
    splitters: list = field(default_factory=list)


@dataclass(frozen=True)
class RunDescriptor:
    path: str
    record_count: int
    first_key: bytes
    last_key: bytes


@dataclass(frozen=True)
class MergePartition:
    """Key range ``[low, high)`` (``None`` = unbounded) and one slice per run.

    Each slice is ``(start record, record count)`` in its run.  Pieces split
    off an oversized partition share its key range.
    """

    low: bytes | None
    high: bytes | None
    slices: tuple

    @property
    def record_count(self) -> int:
        return sum(count for _, count in self.slices)


# -- planning ----------------------------------------------------------------

def fixed_overhead(config: SortConfig) -> int:
    return 4 * config.chunk_size


def minimum_working_set(config: SortConfig) -> int:
    """One chunk for each of the read, sort, merge and write stages."""
    return 4 * config.chunk_size


def estimate_internal_peak(records: int, config: SortConfig) -> int:
    return records * RECORD_SIZE + 2 * KEYREF_SIZE * records + fixed_overhead(config)


def plan(input_bytes: int, memory_budget: int, config: SortConfig | None = None) -> SortPlan:
    """Choose internal or external mode and size runs and partitions."""
    config = config or SortConfig(memory_budget=memory_budget)
    if input_bytes < 0 or input_bytes % RECORD_SIZE:
        raise MalformedInputError(
            f"input of {input_bytes} bytes is not a whole number of records"
        )
    if memory_budget < minimum_working_set(config):
        raise ConfigurationError(
            f"memory budget {memory_budget} is below the minimum working set "
            f"of {minimum_working_set(config)} bytes"
        )
    n = input_bytes // RECORD_SIZE
    peak = estimate_internal_peak(n, config)
    workers = WorkerAllocation(readers=config.readers,
                               sorters=1 if config.sequential else config.worker_count,
                               mergers=1, writers=1)
    if config.mode == "internal" and peak > memory_budget:
        raise ConfigurationError(
            f"internal mode needs about {peak} bytes but the budget is {memory_budget}"
        )
    internal = peak <= memory_budget if config.mode == "auto" else config.mode == "internal"
    if internal:
        return SortPlan("internal", input_bytes, memory_budget, n, peak, workers)

    run_records = config.run_records
    if run_records is None:
        run_records = memory_budget // 4 // RUN_BYTES_PER_RECORD
        if run_records >= RUN_ALIGN_RECORDS:
            run_records -= run_records % RUN_ALIGN_RECORDS
    run_records = max(1, run_records)
    partitions = config.partition_count
    if partitions is None:
        partitions = max(1, math.ceil(n * MERGE_BYTES_PER_RECORD / (memory_budget / 4)))
    return SortPlan("external", input_bytes, memory_budget, n, peak, workers,
                    run_records=run_records, partition_count=partitions)


# -- staged execution --------------------------------------------------------

_DONE = object()


def _run_stages(items: Iterable, stages: Sequence[tuple[str, Callable]],
                capacity: int, sequential: bool) -> list:
    """Push items through ``(name, fn)`` stages joined by bounded queues.

    One thread per stage keeps items in order.  The first failure aborts
    every stage and is re-raised as :class:`StageError`.
    """
    if sequential:
        out = []
        for item in items:
            for name, fn in stages:
                try:
                    item = fn(item)
                except StageError:
                    raise
                except Exception as e:
                    raise StageError(name, e) from e
            out.append(item)
        return out

    abort = threading.Event()
    errors: list[StageError] = []
    queues = [queue.Queue(maxsize=capacity) for _ in stages[:-1]]
    results: list = []

    def put(q, x):
        while not abort.is_set():
            try:
                q.put(x, timeout=0.05)
                return True
            except queue.Full:
                pass
        return False

    def get(q):
        while not abort.is_set():
            try:
                return q.get(timeout=0.05)
            except queue.Empty:
                pass
        return _DONE

    def worker(i):
        name, fn = stages[i]
        last = i == len(stages) - 1
        try:
            source = iter(items) if i == 0 else iter(lambda: get(queues[i - 1]), _DONE)
            for x in source:
                if abort.is_set():
                    return
                y = fn(x)
                if last:
                    results.append(y)
                elif not put(queues[i], y):
                    return
            if not last:
                put(queues[i], _DONE)
        except BaseException as e:
            errors.append(e if isinstance(e, StageError) else StageError(name, e))
            abort.set()

    threads = [threading.Thread(target=worker, args=(i,), name=f"stage-{stages[i][0]}", daemon=True)
               for i in range(len(stages))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    return results


def _input_records(path) -> int:
    size = os.path.getsize(path)
    if size % RECORD_SIZE:
        raise MalformedInputError(
            f"{path}: {size} bytes is not a whole number of records "
            f"({size % RECORD_SIZE} trailing bytes)"
        )
    return size // RECORD_SIZE


def _parallel_gather(records, keyrefs, out, workers, base=0):
    n = len(keyrefs)
    ordinals = keyrefs["ordinal"]
    parts = max(1, min(workers, n // (1 << 16)))
    edges = [n * i // parts for i in range(parts + 1)]

    def run(i):
        K.gather_records(records, ordinals, base, edges[i], edges[i + 1], out, edges[i])

    if parts == 1:
        run(0)
    else:
        with ThreadPoolExecutor(parts) as ex:
            list(ex.map(run, range(parts)))


def _read_keyed(path, config, start, count, records, keyrefs, direct):
    """Read ``count`` records at ``start`` into ``records``, extracting KeyRefs as chunks land."""
    byte_start = start * RECORD_SIZE

    def consume(offset, view):
        first = (offset - byte_start) // RECORD_SIZE
        extract_keyrefs(view, first, out=keyrefs[first:])

    parallel_read(path, consume, chunk_records_aligned(config.chunk_size), config.readers,
                  start=byte_start, length=count * RECORD_SIZE, destination=records,
                  direct_io=direct)


# -- internal path -----------------------------------------------------------

def sort_internal(input_path, output_path, plan: SortPlan, config: SortConfig | None = None,
                  pool: BufferPool | None = None) -> TimingBreakdown:
    """Read and key-extract, radix sort the KeyRefs, then place records via a mapped sink."""
    config = config or SortConfig(memory_budget=plan.memory_budget)
    if plan.mode != "internal":
        raise ConfigurationError("sort_internal needs an internal plan")
    clock = StageClock()
    pool = pool or BufferPool(plan.memory_budget, config.watchdog)
    n = _input_records(input_path)
    if n != plan.record_count:
        raise ConfigurationError(f"plan is for {plan.record_count} records, input has {n}")
    stage = "read"
    try:
        if n == 0:
            stage = "write"
            MappedSink(output_path, 0).finalize()
        else:
            with clock.span("read"):
                rec_lease = pool.lease(n * RECORD_SIZE)
                kr_lease = pool.lease(n * KEYREF_SIZE)
                records = rec_lease.array(np.uint8, n * RECORD_SIZE).reshape(n, RECORD_SIZE)
                keyrefs = kr_lease.array(KEYREF_DTYPE, n)
                _read_keyed(input_path, config, 0, n, records, keyrefs, config.use_direct_io)
            stage = "sort"
            with clock.span("sort"):
                with pool.lease(n * KEYREF_SIZE) as aux_lease:
                    msd_radix_sort(keyrefs, config.radix_config(), aux=aux_lease.array(KEYREF_DTYPE, n))
            stage = "write"
            with clock.span("write"):
                sink = MappedSink(output_path, n * RECORD_SIZE)
                out = sink.region(0, n * RECORD_SIZE).reshape(n, RECORD_SIZE)
                _parallel_gather(records, keyrefs, out, 1 if config.sequential else config.worker_count)
                del out
                sink.finalize()
            del records, keyrefs
            rec_lease.release()
            kr_lease.release()
    except SortError as e:
        if isinstance(e, StageError):
            raise
        raise StageError(stage, e) from e
    except OSError as e:
        raise StageError(stage, e) from e
    return TimingBreakdown.from_clock("internal", clock, config.echo(), records=n,
                                      pool_peak=pool.peak, pool_budget=pool.budget,
                                      **_direct_extras(input_path, config))


def _direct_extras(path, config) -> dict:
    if not config.use_direct_io:
        return {"direct_io_effective": False}
    try:
        return {"direct_io_effective": direct_io_supported(path)}
    except OSError:
        return {"direct_io_effective": False}


# -- external path -----------------------------------------------------------

class _RunWork:
    __slots__ = ("index", "count", "records", "keyrefs", "aux", "leases")


def form_runs(input_path, plan: SortPlan, config: SortConfig | None = None,
              pool: BufferPool | None = None, workdir=None,
              clock: StageClock | None = None) -> list[RunDescriptor]:
    """Cut the input into key-sorted run files ``workdir/run-{index}``.

    Reading run ``i+1``, sorting run ``i`` and writing run ``i-1`` overlap.
    """
    config = config or SortConfig(memory_budget=plan.memory_budget)
    if plan.mode != "external":
        raise ConfigurationError("form_runs needs an external plan")
    pool = pool or BufferPool(plan.memory_budget, config.watchdog)
    clock = clock or StageClock()
    workdir = Path(workdir) if workdir is not None else Path(
        tempfile.mkdtemp(prefix=".runs-", dir=Path(output_dir_for(input_path))))
    n = _input_records(input_path)
    size = plan.run_records
    count = -(-n // size) if n else 0
    radix = config.radix_config()
    direct = config.use_direct_io
    batch = max(1, chunk_records_aligned(config.chunk_size) // RECORD_SIZE)
    scratch_lease = pool.lease(batch * RECORD_SIZE)
    scratch = scratch_lease.array(np.uint8, batch * RECORD_SIZE).reshape(batch, RECORD_SIZE)

    def read(i):
        with clock.span("read"):
            w = _RunWork()
            w.index = i
            w.count = m = min(size, n - i * size)
            rec = pool.lease(m * RECORD_SIZE)
            kr = pool.lease(m * KEYREF_SIZE)
            aux = pool.lease(m * KEYREF_SIZE)
            w.leases = [rec, kr, aux]
            w.records = rec.array(np.uint8, m * RECORD_SIZE).reshape(m, RECORD_SIZE)
            w.keyrefs = kr.array(KEYREF_DTYPE, m)
            w.aux = aux.array(KEYREF_DTYPE, m)
            try:
                _read_keyed(input_path, config, i * size, m, w.records, w.keyrefs, direct)
            except OSError as e:
                raise OSError(f"run {i}: {e}") from e
            return w

    def sort(w):
        with clock.span("sort"):
            msd_radix_sort(w.keyrefs, radix, aux=w.aux)
            w.aux = None
            w.leases.pop().release()
            return w

    def write(w):
        with clock.span("write"):
            path = workdir / f"run-{w.index}"
            sink = StreamedSink(path)
            try:
                for lo in range(0, w.count, batch):
                    hi = min(lo + batch, w.count)
                    K.gather_records(w.records, w.keyrefs["ordinal"], 0, lo, hi, scratch, 0)
                    sink.append(scratch[:hi - lo])
                sink.finalize()
            except OSError as e:
                sink.abort()
                raise OSError(f"run {w.index}: {e}") from e
            desc = RunDescriptor(str(path), w.count, bytes(w.records[w.keyrefs["ordinal"][0]][:KEY_SIZE]),
                                 bytes(w.records[w.keyrefs["ordinal"][-1]][:KEY_SIZE]))
            w.records = w.keyrefs = None
            for lease in w.leases:
                lease.release()
            return desc

    try:
        return _run_stages(range(count), [("read", read), ("sort", sort), ("write", write)],
                           config.queue_capacity, config.sequential)
    finally:
        scratch_lease.release()


def output_dir_for(path) -> str:
    return os.path.dirname(os.path.abspath(path))


class _RunKeys:
    """Read-only random access to the keys of a run file."""

    def __init__(self, path):
        self.path = path
        self._file = open(path, "rb")
        size = os.fstat(self._file.fileno()).st_size
        self.n = size // RECORD_SIZE
        self._map = mmap.mmap(self._file.fileno(), 0, access=mmap.ACCESS_READ) if size else None

    def __len__(self):
        return self.n

    def __getitem__(self, i):
        if not 0 <= i < self.n:
            raise IndexError(i)
        o = i * RECORD_SIZE
        return self._map[o:o + KEY_SIZE]

    def close(self):
        if self._map is not None:
            self._map.close()
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def sample_splitters(runs: Sequence[RunDescriptor], partition_count: int,
                     samples_per_run: int = SAMPLES_PER_RUN) -> list[bytes]:
    """Pick ``partition_count - 1`` non-decreasing splitter keys from run samples.

    Each run contributes evenly spaced keys in proportion to its length;
    splitters are the quantiles of the pooled sample.  Heavy duplication can
    make consecutive splitters equal, leaving empty partitions.
    """
    if partition_count < 1:
        raise ValueError("partition_count must be at least 1")
    if partition_count == 1:
        return []
    if not runs:
        raise ValueError("cannot sample splitters from zero runs")
    per_run = max(samples_per_run, 4 * partition_count)
    largest = max(r.record_count for r in runs) or 1
    samples: list[bytes] = []
    for run in runs:
        n = run.record_count
        if n == 0:
            continue
        m = min(n, max(1, -(-per_run * n // largest)))
        with _RunKeys(run.path) as keys:
            samples.extend(keys[(2 * j + 1) * n // (2 * m)] for j in range(m))
    if not samples:
        return []
    samples.sort()
    return [samples[i * len(samples) // partition_count] for i in range(1, partition_count)]


def locate_partitions(runs: Sequence[RunDescriptor], splitters: Sequence[bytes]) -> list[MergePartition]:
    """Binary-search every splitter in every run; slices tile each run exactly."""
    bounds = [None, *splitters, None]
    cuts = []
    with ExitStack() as stack:
        for r, run in enumerate(runs):
            keys = stack.enter_context(_RunKeys(run.path))
            row = [0]
            for s in splitters:
                c = bisect.bisect_left(keys, s, lo=row[-1])
                n = len(keys)
                if ((c > 0 and (keys[c - 1] >= s or keys[0] > keys[c - 1]))
                        or (c < n and (keys[c] < s or keys[c] > keys[n - 1]))):
                    raise DataIntegrityError(f"run {r} ({run.path}) is not key-sorted")
                row.append(c)
            row.append(len(keys))
            cuts.append(row)
    parts = []
    for j in range(len(splitters) + 1):
        slices = tuple((row[j], row[j + 1] - row[j]) for row in cuts)
        parts.append(MergePartition(bounds[j], bounds[j + 1], slices))
    return parts


def _corank(keys: Sequence[_RunKeys], slices, target: int) -> list[int]:
    """Per-slice cut offsets putting exactly ``target`` records first in (key, run) order."""
    live = [(k, s, c) for k, (s, c) in zip(keys, slices)]
    lo_v = min((int.from_bytes(k[s], "big") for k, s, c in live if c), default=0)
    hi_v = max((int.from_bytes(k[s + c - 1], "big") for k, s, c in live if c), default=0)

    def count_le(v):
        b = v.to_bytes(KEY_SIZE, "big")
        return sum(bisect.bisect_right(k, b, s, s + c) - s for k, s, c in live)

    while lo_v < hi_v:
        mid = (lo_v + hi_v) // 2
        if count_le(mid) >= target:
            hi_v = mid
        else:
            lo_v = mid + 1
    pivot = lo_v.to_bytes(KEY_SIZE, "big")
    less = [bisect.bisect_left(k, pivot, s, s + c) - s for k, s, c in live]
    equal = [bisect.bisect_right(k, pivot, s, s + c) - s - l for (k, s, c), l in zip(live, less)]
    need = target - sum(less)
    cut = []
    for l, e in zip(less, equal):
        take = min(need, e)
        cut.append(l + take)
        need -= take
    return cut


def balance_partitions(partitions: Sequence[MergePartition], runs: Sequence[RunDescriptor],
                       max_records: int, target_records: int | None = None) -> list[MergePartition]:
    """Split any partition above ``max_records`` into pieces of ``target_records``.

    Cuts follow the merge order (key, then run index), so duplicate-heavy
    ranges split cleanly and the concatenated output is unchanged.
    """
    target = max(1, min(target_records or max_records, max_records))
    out = []
    with ExitStack() as stack:
        keys = None
        for part in partitions:
            total = part.record_count
            if total <= max_records:
                out.append(part)
                continue
            if keys is None:
                keys = [stack.enter_context(_RunKeys(r.path)) for r in runs]
            pieces = -(-total // target)
            prev = [0] * len(part.slices)
            for j in range(1, pieces + 1):
                cut = ([c for _, c in part.slices] if j == pieces
                       else _corank(keys, part.slices, total * j // pieces))
                slices = tuple((s + p, c - p) for (s, _), p, c in zip(part.slices, prev, cut))
                out.append(MergePartition(part.low, part.high, slices))
                prev = cut
    return out


class _PartitionWork:
    __slots__ = ("index", "total", "sizes", "inbuf", "outbuf", "scratch", "leases")


def _merge_write(runs, partitions, output_path, config, pool, clock):
    sources = [_Source(r.path, False) for r in runs]
    chunk = chunk_records_aligned(config.chunk_size)
    readers = ThreadPoolExecutor(config.readers, thread_name_prefix="merge-reader") \
        if config.readers > 1 else None
    sink = StreamedSink(output_path)

    def load(j):
        with clock.span("read"):
            part = partitions[j]
            w = _PartitionWork()
            w.index = j
            w.total = total = part.record_count
            w.sizes = [c for _, c in part.slices]
            w.leases = []
            if total == 0:
                return w
            nbytes = total * RECORD_SIZE
            for size in (nbytes, nbytes, total * MERGE_SCRATCH_PER_RECORD):
                w.leases.append(pool.lease(size))
            w.inbuf = w.leases[0].array(np.uint8, nbytes)
            w.outbuf = w.leases[1].array(np.uint8, nbytes)
            w.scratch = w.leases[2].array(np.uint8, total * MERGE_SCRATCH_PER_RECORD)
            jobs = []
            dest = 0
            for r, (start, count) in enumerate(part.slices):
                off = start * RECORD_SIZE
                end = off + count * RECORD_SIZE
                while off < end:
                    nb = min(chunk, end - off)
                    jobs.append((r, off, dest, nb))
                    off += nb
                    dest += nb

            def fetch(job):
                r, off, d, nb = job
                sources[r].read_into(memoryview(w.inbuf[d:d + nb]), off)

            if readers is None:
                for job in jobs:
                    fetch(job)
            else:
                list(readers.map(fetch, jobs))
            return w

    def merge(w):
        with clock.span("merge"):
            if w.total:
                try:
                    merge_concatenated(w.inbuf, w.sizes, w.outbuf, w.scratch)
                except DataIntegrityError as e:
                    raise DataIntegrityError(f"partition {w.index}: {e}") from e
                w.inbuf = w.scratch = None
                w.leases[2].release()
                w.leases[0].release()
            return w

    def write(w):
        with clock.span("write"):
            if w.total:
                sink.append(w.outbuf)
                w.outbuf = None
                w.leases[1].release()
            return w.total

    try:
        written = _run_stages(range(len(partitions)), [("read", load), ("merge", merge), ("write", write)],
                              config.queue_capacity, config.sequential)
        with clock.span("write"):
            sink.finalize()
    except BaseException:
        sink.abort()
        raise
    finally:
        if readers is not None:
            readers.shutdown()
        for s in sources:
            s.close()
    return sum(written)


def execute_external(input_path, output_path, plan: SortPlan, config: SortConfig | None = None,
                     pool: BufferPool | None = None) -> TimingBreakdown:
    """Form runs, partition them by key and run the read/merge/write pipeline.

    Temporary run files are removed whether or not the sort succeeds; a
    partial output is removed on failure.
    """
    config = config or SortConfig(memory_budget=plan.memory_budget)
    if plan.mode != "external":
        raise ConfigurationError("execute_external needs an external plan")
    clock = StageClock()
    pool = pool or BufferPool(plan.memory_budget, config.watchdog)
    n = _input_records(input_path)
    out_dir = output_dir_for(output_path)
    workdir = Path(tempfile.mkdtemp(prefix=f".{Path(output_path).name}.runs-", dir=out_dir))
    ok = False
    try:
        runs = form_runs(input_path, plan, config, pool=pool, workdir=workdir, clock=clock)
        if runs:
            splitters = sample_splitters(runs, plan.partition_count)
            partitions = locate_partitions(runs, splitters)
        else:
            splitters, partitions = [], []
        plan.splitters = splitters
        target = -(-n // max(1, plan.partition_count))
        max_records = max(1, plan.memory_budget // 2 // MERGE_BYTES_PER_RECORD)
        partitions = balance_partitions(partitions, runs, max_records, target)
        tiled = sum(p.record_count for p in partitions)
        if tiled != sum(r.record_count for r in runs) or tiled != n:
            raise InternalInvariantError(f"partitions cover {tiled} of {n} records")
        written = _merge_write(runs, partitions, output_path, config, pool, clock)
        if written != n:
            raise InternalInvariantError(f"wrote {written} of {n} records")
        ok = True
    except OSError as e:
        raise StageError("merge", e) from e
    finally:
        shutil.rmtree(workdir, ignore_errors=True)
        if not ok and os.path.exists(output_path):
            os.unlink(output_path)
    return TimingBreakdown.from_clock(
        "external", clock, config.echo(), records=n, runs=len(runs), partitions=len(partitions),
        run_records=plan.run_records,
        max_partition_bytes=max((p.record_count for p in partitions), default=0) * MERGE_BYTES_PER_RECORD,
        pool_peak=pool.peak, pool_budget=pool.budget,
        temporaries_removed=not workdir.exists(), **_direct_extras(input_path, config))


def sort_file(input_path, output_path, config: SortConfig | None = None) -> TimingBreakdown:
    """Plan and run a sort of ``input_path`` into ``output_path``."""
    config = config or SortConfig()
    p = plan(os.path.getsize(input_path), config.memory_budget, config)
    if p.mode == "internal":
        return sort_internal(input_path, output_path, p, config)
    return execute_external(input_path, output_path, p, config)
