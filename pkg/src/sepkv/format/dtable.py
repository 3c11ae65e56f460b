"""DTable: key SST holding small values, tombstones and value-index entries.

Entries whose value lives in an RTable (``INDEX`` entries: key, seq, RTable
number, value size) go into their own *index-key blocks*; everything else
goes into *data blocks*.  A GC validity check therefore reads index-key
blocks only, and those are cached at high priority.  With
``layout="interleaved"`` both kinds share ``MIXED`` blocks (used as the
baseline when measuring lookup cache efficiency).

File layout::

    blocks           block*       (data / index-key / mixed, ~32 KiB each)
    locator parts    block*       (<= 128 <first key, block kind, handle> each)
    top-level index  block        (first key + handle per locator part)
    filter           block        (data-key bloom, index-key bloom)
    meta             block        (JSON)
    footer           57 bytes
"""
from __future__ import annotations

import bisect
import heapq
from typing import NamedTuple

from .. import kernels
from ..errors import BuildError, CorruptionError
from .block import (
    BLOOM_BITS_PER_KEY,
    DTABLE_MAGIC,
    FOOTER_SIZE,
    FORMAT_VERSION,
    BlockHandle,
    Footer,
    build_filter,
    decode_filters,
    decode_meta,
    encode_filters,
    encode_meta,
    may_contain,
    read_block,
    read_footer,
    write_block,
)
from .cache import HIGH, LOW

BLOCK_DATA = 0
BLOCK_INDEX = 1
BLOCK_MIXED = 2
BLOCK_NAMES = {BLOCK_DATA: "data", BLOCK_INDEX: "index_key", BLOCK_MIXED: "mixed"}

DEFAULT_BLOCK_SIZE = 32 * 1024
LOCATOR_ENTRIES = 128

PUT = kernels.KIND_PUT
DEL = kernels.KIND_DEL
INDEX = kernels.KIND_INDEX
_REF = kernels.KIND_REF


class IndexEntry(NamedTuple):
    key: bytes
    seq: int
    file_number: int
    value_size: int


class Entry(NamedTuple):
    """One decoded entry.  ``value`` is set for PUT; ``file_number`` and
    ``value_size`` for INDEX."""

    key: bytes
    seq: int
    kind: int
    value: bytes | None
    file_number: int
    value_size: int


class _Pending:
    __slots__ = ("keys", "seqs", "kinds", "values", "a", "b", "size")

    def __init__(self):
        self.keys, self.seqs, self.kinds, self.values, self.a, self.b = [], [], [], [], [], []
        self.size = 0

    def add(self, key, seq, kind, value, a, b):
        self.keys.append(key)
        self.seqs.append(seq)
        self.kinds.append(kind)
        self.values.append(value)
        self.a.append(a)
        self.b.append(b)
        self.size += len(key) + 12 + (len(value) if value is not None else 0)

    def encode(self):
        return kernels.encode_block(self.keys, self.seqs, self.kinds, self.values, self.a, self.b)


class DTableBuilder:
    def __init__(self, env, path, file_number, layout="separated", category=None,
                 block_size=DEFAULT_BLOCK_SIZE, bits_per_key=BLOOM_BITS_PER_KEY):
        if layout not in ("separated", "interleaved"):
            raise ValueError("unknown DTable layout %r" % layout)
        self.env = env
        self.path = path
        self.file_number = file_number
        self.layout = layout
        self.block_size = block_size
        self.bits_per_key = bits_per_key
        self._wf = env.open_writable(path, category=category)
        self._pending = {}
        self._locator = []  # (first_key, block_kind, handle) in key order
        self._data_keys = []
        self._index_keys = []
        self._last = None
        self.entries = 0
        self.counts = {PUT: 0, DEL: 0, INDEX: 0}
        self.sum_value_size = 0
        self.small_value_bytes = 0
        self.refs = set()
        self.smallest_seq = None
        self.largest_seq = None
        self.smallest = None
        self._done = False

    @property
    def size_estimate(self):
        return self._wf.offset + sum(p.size for p in self._pending.values())

    @property
    def compensated_estimate(self):
        return self.size_estimate + self.sum_value_size

    def add(self, key, seq, kind, value=None, file_number=0, value_size=0):
        if self._last is not None and key <= self._last:
            self.abandon()
            raise BuildError("keys not strictly ascending: %r after %r" % (key, self._last))
        if kind == INDEX:
            bkind = BLOCK_INDEX
            self._index_keys.append(key)
            self.sum_value_size += value_size
            self.refs.add(file_number)
        elif kind in (PUT, DEL):
            bkind = BLOCK_DATA
            self._data_keys.append(key)
            if kind == PUT:
                self.small_value_bytes += len(value)
        else:
            self.abandon()
            raise BuildError("entry kind %d not allowed in a DTable" % kind)
        if self.layout == "interleaved":
            bkind = BLOCK_MIXED
        pend = self._pending.get(bkind)
        if pend is None:
            pend = self._pending[bkind] = _Pending()
        pend.add(key, seq, kind, value if kind == PUT else None, file_number, value_size)
        if self.smallest is None:
            self.smallest = key
        self._last = key
        self.entries += 1
        self.counts[kind] += 1
        if self.smallest_seq is None or seq < self.smallest_seq:
            self.smallest_seq = seq
        if self.largest_seq is None or seq > self.largest_seq:
            self.largest_seq = seq
        if pend.size >= self.block_size:
            self._flush_block(bkind)

    def add_entry(self, e):
        self.add(e.key, e.seq, e.kind, e.value, e.file_number, e.value_size)

    def _flush_block(self, bkind):
        pend = self._pending.pop(bkind, None)
        if pend is None or not pend.keys:
            return
        h = write_block(self._wf, pend.encode())
        self._locator.append((pend.keys[0], bkind, h))

    def finish(self):
        if self.entries == 0:
            self.abandon()
            raise BuildError("a DTable needs at least one entry")
        for bkind in sorted(self._pending):
            self._flush_block(bkind)
        wf = self._wf
        loc = sorted(self._locator, key=lambda t: t[0])
        top_keys, top_offs, top_sizes = [], [], []
        for i in range(0, len(loc), LOCATOR_ENTRIES):
            part = loc[i:i + LOCATOR_ENTRIES]
            m = len(part)
            payload = kernels.encode_block(
                [t[0] for t in part], [t[1] for t in part], [_REF] * m, [None] * m,
                [t[2].offset for t in part], [t[2].size for t in part],
            )
            h = write_block(wf, payload)
            top_keys.append(part[0][0])
            top_offs.append(h.offset)
            top_sizes.append(h.size)
        p = len(top_keys)
        top = write_block(wf, kernels.encode_block(top_keys, [0] * p, [_REF] * p, [None] * p, top_offs, top_sizes))
        if self.layout == "separated":
            filters = [build_filter(self._data_keys, self.bits_per_key),
                       build_filter(self._index_keys, self.bits_per_key)]
        else:
            filters = [build_filter(self._data_keys + self._index_keys, self.bits_per_key)]
        filt = write_block(wf, encode_filters(filters))
        nblocks = {name: 0 for name in BLOCK_NAMES.values()}
        for _, bkind, _ in loc:
            nblocks[BLOCK_NAMES[bkind]] += 1
        meta = {
            "format": "dtable",
            "file_number": self.file_number,
            "layout": self.layout,
            "entries": self.entries,
            "put_entries": self.counts[PUT],
            "tombstones": self.counts[DEL],
            "index_entries": self.counts[INDEX],
            "sum_value_size": self.sum_value_size,
            "small_value_bytes": self.small_value_bytes,
            "refs": sorted(self.refs),
            "smallest": self.smallest.hex(),
            "largest": self._last.hex(),
            "smallest_seq": self.smallest_seq,
            "largest_seq": self.largest_seq,
            "blocks": nblocks,
            "locator_partitions": p,
        }
        mh = write_block(wf, encode_meta(meta))
        wf.append(Footer(top, filt, mh, FORMAT_VERSION, DTABLE_MAGIC).encode())
        wf.sync()
        wf.close()
        self._done = True
        meta["file_size"] = wf.offset
        return meta

    def abandon(self):
        if self._done:
            return
        self._done = True
        try:
            self._wf.close()
        finally:
            self.env.remove(self.path)


class DTable:
    """Immutable reader; safe to share between threads."""

    def __init__(self, env, path, file_number, cache=None):
        self.env = env
        self.path = path
        self.file_number = file_number
        self.cache = cache
        self._rf = env.open_readable(path)
        self.footer = read_footer(self._rf, DTABLE_MAGIC)
        self.meta = decode_meta(read_block(self._rf, self.footer.meta, "meta"), path)
        top = kernels.decode_block(read_block(self._rf, self.footer.index, "index"))
        self.top_keys = top[0]
        self.top_handles = [BlockHandle(o, s) for o, s in zip(top[4], top[5])]
        filters = decode_filters(read_block(self._rf, self.footer.filter, "filter"))
        if self.layout == "separated":
            self._data_filter, self._index_filter = filters
        else:
            self._data_filter = self._index_filter = filters[0]
        self.smallest = bytes.fromhex(self.meta["smallest"])
        self.largest = bytes.fromhex(self.meta["largest"])
        self._all_blocks = None

    @property
    def layout(self):
        return self.meta["layout"]

    @property
    def file_size(self):
        return self._rf.size

    @property
    def sum_value_size(self):
        return self.meta["sum_value_size"]

    @property
    def compensated_size(self):
        return self.file_size + self.meta["sum_value_size"]

    @property
    def entries(self):
        return self.meta["entries"]

    @property
    def refs(self):
        return self.meta["refs"]

    # locator ----------------------------------------------------------
    def _partition(self, i, tag, fill=True):
        h = self.top_handles[i]

        def load():
            payload = read_block(self._rf, h, "locator %d" % i)
            try:
                dec = kernels.decode_block(payload)
            except ValueError as exc:
                raise CorruptionError(str(exc), self.path, "locator %d" % i) from None
            handles = [BlockHandle(o, s) for o, s in zip(dec[4], dec[5])]
            return (dec[0], dec[1], handles), len(payload)

        if self.cache is None:
            return load()[0]
        return self.cache.get_or_load((self.file_number, h.offset), load, HIGH, tag, fill)

    def _find_block(self, key, kinds, tag):
        """Handle of the last block of one of ``kinds`` whose first key <= key."""
        p = bisect.bisect_right(self.top_keys, key) - 1
        first = True
        while p >= 0:
            fkeys, bkinds, handles = self._partition(p, tag)
            j = bisect.bisect_right(fkeys, key) - 1 if first else len(fkeys) - 1
            first = False
            while j >= 0:
                if bkinds[j] in kinds:
                    return bkinds[j], handles[j]
                j -= 1
            p -= 1
        return None

    def blocks(self):
        """All ``(first_key, block_kind, handle)`` in key order."""
        if self._all_blocks is None:
            out = []
            for i in range(len(self.top_handles)):
                fkeys, bkinds, handles = self._partition(i, "locator", fill=False)
                out.extend(zip(fkeys, bkinds, handles))
            self._all_blocks = out
        return self._all_blocks

    def read_data_block(self, bkind, handle, tag="get", fill=True):
        def load():
            payload = read_block(self._rf, handle, "%s block @%d" % (BLOCK_NAMES[bkind], handle.offset))
            try:
                return kernels.decode_block(payload), len(payload)
            except ValueError as exc:
                raise CorruptionError(str(exc), self.path, "%s block @%d" % (BLOCK_NAMES[bkind], handle.offset)) from None

        if self.cache is None:
            return load()[0]
        prio = HIGH if bkind == BLOCK_INDEX else LOW
        return self.cache.get_or_load((self.file_number, handle.offset), load, prio, tag, fill)

    def _lookup(self, key, kinds, tag):
        found = self._find_block(key, kinds, tag)
        if found is None:
            return None
        bkind, handle = found
        dec = self.read_data_block(bkind, handle, tag)
        keys = dec[0]
        j = bisect.bisect_left(keys, key)
        if j < len(keys) and keys[j] == key:
            return Entry(key, dec[1][j], dec[2][j], dec[3][j], dec[4][j], dec[5][j])
        return None

    # lookups ----------------------------------------------------------
    def get(self, key, tag="get"):
        """The entry for ``key`` (PUT, DEL or INDEX), or None."""
        if key < self.smallest or key > self.largest:
            return None
        if self.layout != "separated":
            if not may_contain(self._data_filter, key):
                return None
            return self._lookup(key, (BLOCK_MIXED,), tag)
        if may_contain(self._index_filter, key):
            e = self._lookup(key, (BLOCK_INDEX,), tag)
            if e is not None:
                return e
        if may_contain(self._data_filter, key):
            return self._lookup(key, (BLOCK_DATA,), tag)
        return None

    def get_index_entry(self, key, tag="gc_lookup"):
        """The INDEX entry for ``key`` without touching data blocks (separated
        layout); None when the key has no index entry here."""
        if key < self.smallest or key > self.largest:
            return None
        if not may_contain(self._index_filter, key):
            return None
        kinds = (BLOCK_INDEX,) if self.layout == "separated" else (BLOCK_MIXED,)
        e = self._lookup(key, kinds, tag)
        if e is None or e.kind != INDEX:
            return None
        return IndexEntry(e.key, e.seq, e.file_number, e.value_size)

    def contains_index_key(self, key):
        return self.get_index_entry(key, tag="resolve") is not None

    # iteration --------------------------------------------------------
    def _stream(self, blocks, start, tag, fill):
        for first, bkind, handle in blocks:
            dec = self.read_data_block(bkind, handle, tag, fill)
            keys, seqs, kinds, values, a, b = dec
            j = 0
            if start is not None and first < start:
                j = bisect.bisect_left(keys, start)
            for i in range(j, len(keys)):
                yield Entry(keys[i], seqs[i], kinds[i], values[i], a[i], b[i])

    def entries_from(self, start=None, tag="scan", fill=False):
        """Iterate entries with key >= ``start`` in key order."""
        blocks = self.blocks()
        streams = []
        for bkind in (BLOCK_DATA, BLOCK_INDEX, BLOCK_MIXED):
            mine = [t for t in blocks if t[1] == bkind]
            if not mine:
                continue
            if start is not None:
                j = bisect.bisect_right([t[0] for t in mine], start) - 1
                mine = mine[max(j, 0):]
            streams.append(self._stream(mine, start, tag, fill))
        if len(streams) == 1:
            return streams[0]
        return heapq.merge(*streams, key=lambda e: e.key)

    def __iter__(self):
        return self.entries_from(None)

    def index_entries(self, tag="scan", fill=False):
        for _, bkind, handle in self.blocks():
            if bkind == BLOCK_DATA:
                continue
            keys, seqs, kinds, _, a, b = self.read_data_block(bkind, handle, tag, fill)
            for i in range(len(keys)):
                if kinds[i] == INDEX:
                    yield IndexEntry(keys[i], seqs[i], a[i], b[i])

    def block_layout(self):
        f = self.footer
        return {
            "blocks": [
                {"kind": BLOCK_NAMES[k], "first_key": fk.hex(), "offset": h.offset, "size": h.size}
                for fk, k, h in self.blocks()
            ],
            "locator_partitions": [h._asdict() for h in self.top_handles],
            "index": f.index._asdict(),
            "filter": f.filter._asdict(),
            "meta": f.meta._asdict(),
            "footer": {"offset": self.file_size - FOOTER_SIZE, "size": FOOTER_SIZE},
        }

    def verify(self):
        prev = None
        n = 0
        for e in self.entries_from(None, tag="verify"):
            if prev is not None and e.key <= prev:
                raise CorruptionError("keys out of order", self.path, "data")
            prev = e.key
            n += 1
        if n != self.entries:
            raise CorruptionError("entry count mismatch", self.path, "meta")
        return True

    def close(self):
        self._rf.close()
