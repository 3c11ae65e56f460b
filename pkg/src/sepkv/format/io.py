"""File access with I/O accounting, read tracing, and crash injection.

Every byte the engine reads or writes goes through an :class:`Env`.  The env
keeps per-category counters (``user``, ``flush``, ``compaction``, ``gc``,
``wal``, ``manifest``), the instantaneous and peak disk usage of the files
it created, and optionally a byte-range log per file so tests can prove
which parts of a table were touched.
"""
from __future__ import annotations

import contextlib
import os
import random
import threading
from dataclasses import dataclass, field

from ..errors import SimulatedCrash

_local = threading.local()

CATEGORIES = ("user", "flush", "compaction", "gc", "wal", "manifest", "recovery")


def current_category():
    return getattr(_local, "category", "user")


@contextlib.contextmanager
def io_category(name):
    prev = getattr(_local, "category", "user")
    _local.category = name
    try:
        yield
    finally:
        _local.category = prev


@dataclass
class CategoryCounters:
    bytes_read: int = 0
    read_requests: int = 0
    bytes_written: int = 0
    write_requests: int = 0


@dataclass
class IOStats:
    by_category: dict = field(default_factory=lambda: {c: CategoryCounters() for c in CATEGORIES})

    def __post_init__(self):
        self._lock = threading.Lock()
        self.written_by_type = {}  # (category, file extension) -> bytes

    def on_read(self, nbytes, category=None):
        c = self.by_category.setdefault(category or current_category(), CategoryCounters())
        with self._lock:
            c.bytes_read += nbytes
            c.read_requests += 1

    def on_write(self, nbytes, category=None, ext=""):
        cat = category or current_category()
        c = self.by_category.setdefault(cat, CategoryCounters())
        with self._lock:
            c.bytes_written += nbytes
            c.write_requests += 1
            k = (cat, ext)
            self.written_by_type[k] = self.written_by_type.get(k, 0) + nbytes

    def written(self, category, ext):
        with self._lock:
            return self.written_by_type.get((category, ext), 0)

    def snapshot(self):
        with self._lock:
            return {
                name: dict(vars(c)) for name, c in self.by_category.items()
            }

    def total(self, attr):
        return sum(getattr(c, attr) for c in self.by_category.values())


class FaultInjector:
    """Raise :class:`SimulatedCrash` at the ``crash_at``-th mutating I/O call.

    Mutating calls are physical writes, renames and removes.  A crashed write
    may be torn: a random prefix of its payload reaches the file first.
    """

    def __init__(self, crash_at, torn=True, seed=0):
        self.crash_at = crash_at
        self.torn = torn
        self.count = 0
        self.crashed = False
        self._rng = random.Random(seed)
        self._lock = threading.Lock()

    def check(self, payload_len=0):
        """Return ``None`` to proceed, or the prefix length to write before crashing."""
        with self._lock:
            if self.crashed:
                raise SimulatedCrash("I/O after simulated crash")
            self.count += 1
            if self.count < self.crash_at:
                return None
            self.crashed = True
            if self.torn and payload_len > 1:
                return self._rng.randrange(0, payload_len)
            return 0


class RandomAccessFile:
    def __init__(self, env, path):
        self.env = env
        self.path = path
        self._fd = os.open(path, os.O_RDONLY)
        self.size = os.fstat(self._fd).st_size

    def read(self, offset, length, category=None):
        if offset < 0 or offset + length > self.size:
            raise ValueError(
                "read [%d, %d) outside %s (size %d)" % (offset, offset + length, self.path, self.size)
            )
        cat = category or current_category()
        limiter = self.env.rate_limiter
        if limiter is not None and cat == "gc":
            limiter.request(length, "read")
        data = os.pread(self._fd, length, offset)
        self.env.stats.on_read(len(data), cat)
        trace = self.env.read_trace
        if trace is not None:
            trace.setdefault(self.path, []).append((offset, length, cat))
        return data

    def close(self):
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


class WritableFile:
    def __init__(self, env, path, category=None, buffer_size=256 * 1024):
        self.env = env
        self.path = path
        self.category = category
        self._fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o644)
        self._buf = bytearray()
        self._buffer_size = buffer_size
        self._ext = os.path.splitext(path)[1].lstrip(".")
        self.offset = 0
        env._track(path, 0)

    def append(self, data):
        n = len(data)
        self._buf += data
        self.offset += n
        self.env._grow(self.path, n)
        if len(self._buf) >= self._buffer_size:
            self.flush()

    def flush(self):
        if not self._buf:
            return
        data = bytes(self._buf)
        self._buf.clear()
        cat = self.category or current_category()
        limiter = self.env.rate_limiter
        if limiter is not None and cat == "gc":
            limiter.request(len(data), "write")
        fault = self.env.fault
        if fault is not None:
            cut = fault.check(len(data))
            if cut is not None:
                if cut:
                    os.write(self._fd, data[:cut])
                raise SimulatedCrash("crash during write to %s" % self.path)
        view = memoryview(data)
        while view:
            written = os.write(self._fd, view)
            view = view[written:]
        self.env.stats.on_write(len(data), cat, self._ext)

    def sync(self):
        self.flush()
        if self.env.use_fsync:
            os.fsync(self._fd)

    def discard(self):
        """Drop buffered bytes and the descriptor without writing (after a crash)."""
        self._buf.clear()
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None

    def close(self):
        if self._fd is None:
            return
        try:
            self.flush()
        finally:
            os.close(self._fd)
            self._fd = None


class Env:
    """Factory for instrumented files rooted anywhere on the local filesystem."""

    def __init__(self, fault=None, use_fsync=False):
        self.stats = IOStats()
        self.fault = fault
        self.use_fsync = use_fsync
        self.rate_limiter = None
        self.read_trace = None
        self._sizes = {}
        self._lock = threading.Lock()
        self.usage = 0
        self.peak_usage = 0

    # usage accounting -------------------------------------------------
    def _track(self, path, size):
        with self._lock:
            old = self._sizes.get(path, 0)
            self._sizes[path] = size
            self.usage += size - old
            if self.usage > self.peak_usage:
                self.peak_usage = self.usage

    def _grow(self, path, n):
        with self._lock:
            self._sizes[path] = self._sizes.get(path, 0) + n
            self.usage += n
            if self.usage > self.peak_usage:
                self.peak_usage = self.usage

    def track_directory(self, dirpath):
        """Account for files that already exist (after reopening a store)."""
        for entry in os.scandir(dirpath):
            if entry.is_file():
                self._track(entry.path, entry.stat().st_size)

    def reset_peak(self):
        with self._lock:
            self.peak_usage = self.usage

    # file operations --------------------------------------------------
    def open_writable(self, path, category=None, buffer_size=256 * 1024):
        return WritableFile(self, path, category=category, buffer_size=buffer_size)

    def open_readable(self, path):
        return RandomAccessFile(self, path)

    def read_file(self, path, category=None):
        with open(path, "rb") as f:
            data = f.read()
        self.stats.on_read(len(data), category)
        return data

    def write_file_atomic(self, path, data, category="manifest"):
        """Write ``data`` to ``path`` via a temp file and rename."""
        tmp = path + ".tmp"
        wf = self.open_writable(tmp, category=category)
        wf.append(data)
        wf.sync()
        wf.close()
        self.rename(tmp, path)

    def rename(self, src, dst):
        if self.fault is not None and self.fault.check() is not None:
            raise SimulatedCrash("crash before rename %s -> %s" % (src, dst))
        os.replace(src, dst)
        with self._lock:
            size = self._sizes.pop(src, None)
            if size is None:
                size = os.path.getsize(dst)
            old = self._sizes.get(dst, 0)
            self._sizes[dst] = size
            self.usage -= old

    def remove(self, path):
        if self.fault is not None and self.fault.check() is not None:
            raise SimulatedCrash("crash before remove %s" % path)
        try:
            os.remove(path)
        except FileNotFoundError:
            pass
        with self._lock:
            self.usage -= self._sizes.pop(path, 0)

    def exists(self, path):
        return os.path.exists(path)

    def listdir(self, path):
        return os.listdir(path)

    def file_size(self, path):
        return os.path.getsize(path)
