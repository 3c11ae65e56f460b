"""Value-table garbage collection.

A job collects one candidate RTable:

1. read the keys and record extents from its index blocks only;
2. check every key against the index tree in one batch, producing a bitmap
   of valid records (an entry is valid when the newest index entry for the
   key resolves, through the inheritance map, to the candidate);
3. read the valid records, one request per maximal run of valid records;
4. copy them into hot or cold output tables (hot when the key is in the
   DropCache) and retire the candidate with an inheritance edge to the
   outputs.  The index tree is never written.
"""
from __future__ import annotations

import json
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import NamedTuple

from . import kernels
from .format.rtable import decode_record

DROPCACHE_ENTRY_BYTES = 32


class DropCache:
    """LRU set of recently overwritten or deleted keys."""

    def __init__(self, capacity):
        self.capacity = max(1, int(capacity))
        self._keys = OrderedDict()
        self._lock = threading.Lock()
        self.inserts = 0
        self.hits = 0
        self.queries = 0

    @property
    def budget_bytes(self):
        return self.capacity * DROPCACHE_ENTRY_BYTES

    def __len__(self):
        return len(self._keys)

    def insert(self, key):
        with self._lock:
            self.inserts += 1
            if key in self._keys:
                self._keys.move_to_end(key)
                return
            self._keys[key] = None
            while len(self._keys) > self.capacity:
                self._keys.popitem(last=False)

    def contains(self, key):
        """Membership test; a hit refreshes the key's recency."""
        with self._lock:
            self.queries += 1
            if key in self._keys:
                self._keys.move_to_end(key)
                self.hits += 1
                return True
            return False

    def resize(self, capacity):
        with self._lock:
            self.capacity = max(1, int(capacity))
            while len(self._keys) > self.capacity:
                self._keys.popitem(last=False)


def dropcache_capacity(unique_keys, fraction=0.01, minimum=1000):
    return max(minimum, int(unique_keys * fraction))


def should_trigger_gc(garbage_bytes, total_bytes, ratio=0.2):
    """True when exposed garbage strictly exceeds ``ratio`` of value-table bytes."""
    if total_bytes <= 0:
        return False
    return garbage_bytes / total_bytes > ratio


def pick_gc_candidate(vssts, garbage, exclude=(), min_ratio=0.0):
    """Live value table with the highest garbage ratio (ties to the lower
    file number); None when nothing has garbage above ``min_ratio``."""
    best = None
    for n, meta in vssts.items():
        if n in exclude or meta.total_bytes <= 0:
            continue
        r = garbage.get(n, 0) / meta.total_bytes
        if r <= min_ratio or r <= 0:
            continue
        if best is None or r > best[0] or (r == best[0] and n < best[1]):
            best = (r, n)
    return None if best is None else best[1]


def is_valid(index_file, candidate, inherit):
    """Does an index entry naming ``index_file`` resolve to ``candidate``?

    Keys are unique within a value table and GC has a single source, so the
    descendants of one file hold disjoint key sets; membership of the
    candidate among the redirect targets is therefore sufficient.
    """
    if index_file is None:
        return False
    if index_file == candidate:
        return True
    return candidate in inherit.get(index_file, ())


def gc_lookup_batch(keys, lookup, candidate, inherit):
    """Bitmap (bytearray of 0/1) of valid records; ``lookup(key)`` returns the
    value-table number of the newest index entry for ``key`` or None."""
    bitmap = bytearray(len(keys))
    for i, key in enumerate(keys):
        if is_valid(lookup(key), candidate, inherit):
            bitmap[i] = 1
    return bitmap


class ReadPlan(NamedTuple):
    first: int  # record index where the run starts
    last: int  # one past the final record
    offset: int  # byte offset of the first record
    length: int  # exact byte extent of the run
    estimate: int  # run length times the average record size


def plan_readahead(bitmap, entries, average_record_size, enabled=True):
    """One read per maximal run of valid records.

    ``entries`` are ``(key, offset, length)`` in file order.  The estimate
    (run length x average record size) is kept for reporting; the read length
    is the run's exact extent from the dense index, so skewed record sizes can
    neither truncate a read nor pull in bytes of invalid neighbours.  With
    ``enabled=False`` every valid record is its own request.
    """
    plans = []
    if enabled:
        runs = kernels.valid_runs(bitmap)
    else:
        runs = [(i, i + 1) for i, b in enumerate(bitmap) if b]
    for s, e in runs:
        off = entries[s][1]
        end = entries[e - 1][1] + entries[e - 1][2]
        plans.append(ReadPlan(s, e, off, end - off, int(round((e - s) * average_record_size))))
    return plans


@dataclass
class GcJobStats:
    file_number: int
    tag: str
    garbage_ratio: float
    total_records: int = 0
    valid_records: int = 0
    read_seconds: float = 0.0
    lookup_seconds: float = 0.0
    write_seconds: float = 0.0
    index_bytes_read: int = 0
    record_bytes_read: int = 0
    read_requests: int = 0
    bytes_written: int = 0
    outputs: list = field(default_factory=list)
    planned_bytes: int = 0
    estimated_bytes: int = 0
    boosted: bool = False

    def log_line(self):
        return json.dumps({
            "event": "gc_job",
            "file_number": self.file_number,
            "tag": self.tag,
            "garbage_ratio": round(self.garbage_ratio, 6),
            "total_records": self.total_records,
            "valid_records": self.valid_records,
            "read_latency": round(self.read_seconds, 6),
            "lookup_latency": round(self.lookup_seconds, 6),
            "write_latency": round(self.write_seconds, 6),
            "bytes_read": self.index_bytes_read + self.record_bytes_read,
            "record_bytes_read": self.record_bytes_read,
            "read_requests": self.read_requests,
            "bytes_written": self.bytes_written,
            "outputs": self.outputs,
            "boosted": self.boosted,
        }, separators=(",", ":"))


def collect_valid_records(rtable, plans):
    """Read each planned span once; yield ``(key, record_bytes, value_len)``."""
    for p in plans:
        buf = rtable.read_span(p.offset, p.length)
        pos = 0
        for _ in range(p.first, p.last):
            key, value, end = decode_record(buf, pos, rtable.path)
            yield key, buf[pos:end], len(value)
            pos = end


class _Clock:
    __slots__ = ("t",)

    def __init__(self):
        self.t = time.perf_counter()

    def lap(self):
        now = time.perf_counter()
        d = now - self.t
        self.t = now
        return d
