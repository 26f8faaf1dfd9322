"""Chunked parallel reads, a leased buffer pool and the two write sinks."""

from __future__ import annotations

import logging
import math
import mmap
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

from .errors import BudgetExhaustedError, InternalInvariantError, UsageError

log = logging.getLogger(__name__)

BLOCK_SIZE = 4096
DEFAULT_CHUNK_SIZE = 256 * 1024
DEFAULT_WATCHDOG = 60.0
_DIRECT_ALIGN = 4096


def default_reader_count(workers: int | None = None) -> int:
    return max(1, min(workers or (os.cpu_count() or 1), 10))


def round_to_blocks(size: int) -> int:
    return -(-size // BLOCK_SIZE) * BLOCK_SIZE


def aligned_empty(nbytes: int, align: int = BLOCK_SIZE) -> np.ndarray:
    raw = np.empty(nbytes + align, dtype=np.uint8)
    skip = (-raw.ctypes.data) % align
    return raw[skip:skip + nbytes]


# -- buffer pool -------------------------------------------------------------

class BufferLease:
    """A 4 KiB-granular region held by one or more owners.

    The region goes back to the pool when the last owner releases it.
    """

    def __init__(self, pool: "BufferPool", size: int, nbytes: int):
        self.pool = pool
        self.size = size
        self.nbytes = nbytes
        self.lease_count = 1
        self._region: np.ndarray | None = aligned_empty(nbytes)

    @property
    def region(self) -> np.ndarray:
        if self._region is None:
            raise UsageError("lease has been released")
        return self._region

    def array(self, dtype=np.uint8, count: int | None = None) -> np.ndarray:
        """Typed view over the start of the region."""
        dtype = np.dtype(dtype)
        if count is None:
            count = self.size // dtype.itemsize
        return self.region[:count * dtype.itemsize].view(dtype)

    def retain(self) -> int:
        return self.pool._retain(self)

    def release(self) -> int:
        return self.pool._release(self)

    @property
    def released(self) -> bool:
        return self._region is None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if not self.released:
            self.release()


class BufferPool:
    """Budgeted allocator with reference-counted leases.

    Every lease is rounded up to whole 4 KiB blocks and counted against
    ``budget``.  A lease that does not fit waits for releases; if nothing is
    released for ``watchdog`` seconds the wait fails with
    :class:`BudgetExhaustedError`.  Memory of a fully released lease is
    dropped immediately rather than cached.
    """

    def __init__(self, budget: int, watchdog: float = DEFAULT_WATCHDOG):
        if budget <= 0:
            raise ValueError("budget must be positive")
        self.budget = int(budget)
        self.watchdog = watchdog
        self._cond = threading.Condition()
        self._outstanding = 0
        self._peak = 0
        self._leases = 0

    @property
    def outstanding(self) -> int:
        return self._outstanding

    @property
    def free(self) -> int:
        return self.budget - self._outstanding

    @property
    def peak(self) -> int:
        return self._peak

    @property
    def live_leases(self) -> int:
        return self._leases

    def lease(self, size: int) -> BufferLease:
        if size <= 0:
            raise ValueError(f"lease size must be positive, got {size}")
        nbytes = round_to_blocks(size)
        if nbytes > self.budget:
            raise BudgetExhaustedError(
                f"lease of {nbytes} bytes exceeds the whole budget of {self.budget}"
            )
        deadline = time.monotonic() + self.watchdog
        with self._cond:
            while self._outstanding + nbytes > self.budget:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise BudgetExhaustedError(
                        f"waited {self.watchdog:.0f}s for {nbytes} bytes; "
                        f"{self._outstanding} of {self.budget} still leased"
                    )
                self._cond.wait(remaining)
            self._outstanding += nbytes
            self._leases += 1
            self._peak = max(self._peak, self._outstanding)
        return BufferLease(self, size, nbytes)

    def _retain(self, lease: BufferLease) -> int:
        with self._cond:
            if lease.lease_count < 1:
                raise InternalInvariantError("retain on a released lease")
            lease.lease_count += 1
            return lease.lease_count

    def _release(self, lease: BufferLease) -> int:
        with self._cond:
            if lease.lease_count < 1:
                raise InternalInvariantError("release below zero")
            lease.lease_count -= 1
            if lease.lease_count == 0:
                lease._region = None
                self._outstanding -= lease.nbytes
                self._leases -= 1
                self._cond.notify_all()
            return lease.lease_count


def lease(pool: BufferPool, size: int) -> BufferLease:
    return pool.lease(size)


def retain(lease: BufferLease) -> int:
    return lease.retain()


def release(lease: BufferLease) -> int:
    return lease.release()


# -- reads -------------------------------------------------------------------

class _Source:
    """A buffered descriptor plus, when the platform allows, a direct one."""

    def __init__(self, path, direct_io):
        self.path = os.fspath(path)
        try:
            self.fd = os.open(self.path, os.O_RDONLY)
        except OSError as e:
            raise OSError(e.errno, f"cannot open {self.path}: {e.strerror}") from e
        self.direct_fd = None
        if direct_io and hasattr(os, "O_DIRECT"):
            try:
                self.direct_fd = os.open(self.path, os.O_RDONLY | os.O_DIRECT)
            except OSError as e:
                log.info("direct I/O refused for %s (%s); using buffered reads", self.path, e)

    @property
    def direct(self) -> bool:
        return self.direct_fd is not None

    def size(self) -> int:
        return os.fstat(self.fd).st_size

    def read_into(self, view: memoryview, offset: int):
        want = len(view)
        got = 0
        if (self.direct_fd is not None and offset % _DIRECT_ALIGN == 0
                and want % _DIRECT_ALIGN == 0 and _address(view) % _DIRECT_ALIGN == 0):
            try:
                got = os.preadv(self.direct_fd, [view], offset)
            except OSError:
                got = 0
        while got < want:
            n = os.preadv(self.fd, [view[got:]], offset + got)
            if n == 0:
                raise OSError(f"short read of {self.path} at offset {offset + got}")
            got += n

    def close(self):
        os.close(self.fd)
        if self.direct_fd is not None:
            os.close(self.direct_fd)


def _address(view: memoryview) -> int:
    return np.frombuffer(view, dtype=np.uint8).ctypes.data


def direct_io_supported(path) -> bool:
    """Whether ``path`` can be opened for cache-bypassing reads."""
    src = _Source(path, True)
    try:
        return src.direct
    finally:
        src.close()


def parallel_read(path, consumer: Callable[[int, memoryview], None] | None = None,
                  chunk_size: int = DEFAULT_CHUNK_SIZE, reader_count: int | None = None, *,
                  start: int = 0, length: int | None = None,
                  destination: np.ndarray | None = None, pool: BufferPool | None = None,
                  direct_io: bool = False) -> int:
    """Read ``[start, start + length)`` of ``path`` with concurrent positional reads.

    Each chunk is delivered once as ``consumer(file_offset, data)``; calls
    may arrive concurrently and out of order.  If ``destination`` is given,
    chunks land at ``destination[file_offset - start]`` and ``data`` is a view
    of it; otherwise each chunk is leased from ``pool`` (or allocated) and
    released after the callback returns.  Returns the number of bytes read.
    """
    if chunk_size <= 0:
        raise ValueError("chunk_size must be positive")
    readers = reader_count or default_reader_count()
    src = _Source(path, direct_io)
    try:
        if length is None:
            length = src.size() - start
        if length <= 0:
            return 0
        if destination is not None:
            dest = destination.reshape(-1).view(np.uint8)
            if dest.size < length:
                raise ValueError("destination is smaller than the read range")
        offsets = range(start, start + length, chunk_size)

        def one(offset):
            n = min(chunk_size, start + length - offset)
            if destination is not None:
                view = memoryview(dest[offset - start:offset - start + n])
                src.read_into(view, offset)
                if consumer is not None:
                    consumer(offset, view)
                return n
            buf = pool.lease(n) if pool is not None else None
            region = buf.region if buf is not None else aligned_empty(n)
            try:
                view = memoryview(region[:n])
                src.read_into(view, offset)
                if consumer is not None:
                    consumer(offset, view)
            finally:
                if buf is not None:
                    buf.release()
            return n

        if readers == 1 or len(offsets) == 1:
            return sum(one(o) for o in offsets)
        with ThreadPoolExecutor(min(readers, len(offsets)), thread_name_prefix="reader") as ex:
            return sum(ex.map(one, offsets))
    finally:
        src.close()


# -- write sinks -------------------------------------------------------------

class WriteSink:
    mode = ""

    def __init__(self, path):
        self.path = os.fspath(path)
        self.bytes_written = 0
        self._lock = threading.Lock()
        self.closed = False

    def _check_open(self):
        if self.closed:
            raise UsageError(f"sink for {self.path} is already finalized")

    def write(self, offset: int, data) -> int:
        raise NotImplementedError

    def finalize(self) -> int:
        raise NotImplementedError


class MappedSink(WriteSink):
    """Pre-sized, memory-mapped output accepting concurrent disjoint writes."""

    mode = "mapped"

    def __init__(self, path, length: int):
        super().__init__(path)
        self.length = int(length)
        self._fd = os.open(self.path, os.O_RDWR | os.O_CREAT | os.O_TRUNC, 0o644)
        os.ftruncate(self._fd, self.length)
        self._map = mmap.mmap(self._fd, self.length) if self.length else None
        self._array = (np.frombuffer(self._map, dtype=np.uint8) if self._map is not None
                       else np.empty(0, dtype=np.uint8))

    def region(self, offset: int, nbytes: int) -> np.ndarray:
        """Writable view of ``[offset, offset + nbytes)``; counts as written."""
        self._check_open()
        if offset < 0 or offset + nbytes > self.length:
            raise UsageError(f"write [{offset}, {offset + nbytes}) outside file of {self.length}")
        with self._lock:
            self.bytes_written += nbytes
        return self._array[offset:offset + nbytes]

    def write(self, offset: int, data) -> int:
        data = np.frombuffer(data, dtype=np.uint8) if not isinstance(data, np.ndarray) \
            else data.reshape(-1).view(np.uint8)
        self.region(offset, data.size)[:] = data
        return data.size

    def finalize(self) -> int:
        self._check_open()
        self.closed = True
        self._array = None
        if self._map is not None:
            self._map.flush()
            try:
                self._map.close()
            except BufferError:
                # a caller still holds a region view; the mapping closes with it
                pass
        os.fsync(self._fd)
        os.close(self._fd)
        if self.bytes_written != self.length:
            raise OSError(
                f"{self.path}: {self.bytes_written} bytes submitted to a {self.length}-byte mapping"
            )
        return os.path.getsize(self.path)


class StreamedSink(WriteSink):
    """Single-writer append-only sink; offsets must arrive in order."""

    mode = "streamed"

    def __init__(self, path, buffering: int = DEFAULT_CHUNK_SIZE):
        super().__init__(path)
        self._file = open(self.path, "wb", buffering=buffering)

    def write(self, offset: int, data) -> int:
        self._check_open()
        with self._lock:
            if offset != self.bytes_written:
                raise UsageError(
                    f"streamed sink expects offset {self.bytes_written}, got {offset}"
                )
            n = self._file.write(data)
            self.bytes_written += n
            return n

    def append(self, data) -> int:
        return self.write(self.bytes_written, data)

    def finalize(self) -> int:
        self._check_open()
        self.closed = True
        self._file.flush()
        os.fsync(self._file.fileno())
        self._file.close()
        return os.path.getsize(self.path)

    def abort(self):
        if not self.closed:
            self.closed = True
            self._file.close()


def open_sink(path, mode: str, length: int | None = None) -> WriteSink:
    if mode == "mapped":
        if length is None:
            raise UsageError("a mapped sink needs its final length up front")
        return MappedSink(path, length)
    if mode == "streamed":
        return StreamedSink(path)
    raise ValueError(f"unknown sink mode {mode!r}")


def sink_write(sink: WriteSink, offset: int, data) -> int:
    return sink.write(offset, data)


def finalize(sink: WriteSink) -> int:
    return sink.finalize()


def chunk_records_aligned(chunk_size: int, record_size: int = 100) -> int:
    """Largest multiple of ``lcm(record_size, 4096)`` not above ``chunk_size``.

    Record scans use this so no record straddles two chunks and every chunk
    stays eligible for direct I/O.  Falls back to a plain record multiple
    when ``chunk_size`` is smaller than the common multiple.
    """
    unit = math.lcm(record_size, _DIRECT_ALIGN)
    if chunk_size >= unit:
        return chunk_size // unit * unit
    return max(record_size, chunk_size // record_size * record_size)
