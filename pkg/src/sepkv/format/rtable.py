"""RTable: value SST with records laid out sequentially and a dense index.

File layout::

    record section   record*            (offset 0 .. record_section_size)
    index partitions block*             (<= 128 <key, offset, length> entries each)
    top-level index  block              (first key + handle per partition)
    filter           block              (bloom over all keys, 10 bits/key)
    meta             block              (JSON)
    footer           57 bytes

record = crc32:u32le | varint klen | varint vlen | key | value, with the CRC
covering everything after it.  Index entries carry the record's byte offset
and full length, so a value read is exactly one request of ``length`` bytes
and listing keys never touches the record section.
"""
from __future__ import annotations

import bisect
import struct
import zlib

from .. import kernels
from ..errors import BuildError, CorruptionError, RangeError
from .block import (
    BLOOM_BITS_PER_KEY,
    FOOTER_SIZE,
    FORMAT_VERSION,
    RTABLE_MAGIC,
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

PARTITION_ENTRIES = 128
_CRC = struct.Struct("<I")
_REF = kernels.KIND_REF


def encode_record(key, value):
    body = kernels.encode_varint(len(key)) + kernels.encode_varint(len(value)) + key + value
    return _CRC.pack(zlib.crc32(body)) + body


def decode_record(buf, pos=0, path=None):
    """Parse one record at ``pos``; returns ``(key, value, next_pos)``."""
    try:
        (crc,) = _CRC.unpack_from(buf, pos)
        klen, p = kernels.decode_varint(buf, pos + 4)
        vlen, p = kernels.decode_varint(buf, p)
    except (ValueError, struct.error):
        raise CorruptionError("truncated record header at %d" % pos, path, "record") from None
    end = p + klen + vlen
    if end > len(buf) or zlib.crc32(memoryview(buf)[pos + 4:end]) != crc:
        raise CorruptionError("record checksum mismatch at %d" % pos, path, "record")
    key = bytes(buf[p:p + klen])
    value = bytes(buf[p + klen:end])
    return key, value, end


def _record_end(buf, pos):
    """End offset of the record at ``pos``, or None if its header is incomplete."""
    try:
        klen, p = kernels.decode_varint(buf, pos + 4)
        vlen, p = kernels.decode_varint(buf, p)
    except ValueError:
        if len(buf) - pos >= 24:
            raise CorruptionError("bad record header at %d" % pos, None, "record") from None
        return None
    return p + klen + vlen


class RTableBuilder:
    def __init__(self, env, path, file_number, tag="cold", category=None,
                 partition_entries=PARTITION_ENTRIES, bits_per_key=BLOOM_BITS_PER_KEY):
        self.env = env
        self.path = path
        self.file_number = file_number
        self.tag = tag
        self.partition_entries = partition_entries
        self.bits_per_key = bits_per_key
        self._wf = env.open_writable(path, category=category)
        self.keys = []
        self.offsets = []
        self.lengths = []
        self.total_value_bytes = 0
        self.total_key_bytes = 0
        self._done = False

    @property
    def record_count(self):
        return len(self.keys)

    @property
    def size_estimate(self):
        return self._wf.offset

    def add(self, key, value):
        if self.keys and key <= self.keys[-1]:
            self.abandon()
            raise BuildError("keys not strictly ascending: %r after %r" % (key, self.keys[-1]))
        rec = encode_record(key, value)
        self.keys.append(key)
        self.offsets.append(self._wf.offset)
        self.lengths.append(len(rec))
        self.total_value_bytes += len(value)
        self.total_key_bytes += len(key)
        self._wf.append(rec)
        return self.offsets[-1], len(rec)

    def add_raw(self, key, record, value_len):
        """Append an already-encoded record (GC copies records verbatim)."""
        if self.keys and key <= self.keys[-1]:
            self.abandon()
            raise BuildError("keys not strictly ascending: %r after %r" % (key, self.keys[-1]))
        self.keys.append(key)
        self.offsets.append(self._wf.offset)
        self.lengths.append(len(record))
        self.total_value_bytes += value_len
        self.total_key_bytes += len(key)
        self._wf.append(record)
        return self.offsets[-1], len(record)

    def finish(self):
        """Write index, filter, meta and footer; returns the meta dict (plus ``file_size``)."""
        if not self.keys:
            self.abandon()
            raise BuildError("an RTable needs at least one record")
        wf = self._wf
        section = wf.offset
        n = len(self.keys)
        step = self.partition_entries
        part_keys, part_offs, part_sizes = [], [], []
        for i in range(0, n, step):
            keys = self.keys[i:i + step]
            m = len(keys)
            payload = kernels.encode_block(
                keys, [0] * m, [_REF] * m, [None] * m, self.offsets[i:i + step], self.lengths[i:i + step]
            )
            h = write_block(wf, payload)
            part_keys.append(keys[0])
            part_offs.append(h.offset)
            part_sizes.append(h.size)
        p = len(part_keys)
        top = write_block(wf, kernels.encode_block(part_keys, [0] * p, [_REF] * p, [None] * p, part_offs, part_sizes))
        filt = write_block(wf, encode_filters([build_filter(self.keys, self.bits_per_key)]))
        meta = {
            "format": "rtable",
            "file_number": self.file_number,
            "tag": self.tag,
            "record_count": n,
            "total_value_bytes": self.total_value_bytes,
            "total_key_bytes": self.total_key_bytes,
            "record_section_size": section,
            "average_record_size": section / n,
            "index_partitions": p,
            "partition_entries": step,
            "smallest": self.keys[0].hex(),
            "largest": self.keys[-1].hex(),
        }
        mh = write_block(wf, encode_meta(meta))
        wf.append(Footer(top, filt, mh, FORMAT_VERSION, RTABLE_MAGIC).encode())
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


class RTable:
    """Immutable reader; safe to share between threads."""

    def __init__(self, env, path, file_number, cache=None):
        self.env = env
        self.path = path
        self.file_number = file_number
        self.cache = cache
        self._rf = env.open_readable(path)
        self.footer = read_footer(self._rf, RTABLE_MAGIC)
        self.meta = decode_meta(read_block(self._rf, self.footer.meta, "meta"), path)
        top = kernels.decode_block(read_block(self._rf, self.footer.index, "index"))
        self.partition_keys = top[0]
        self.partition_handles = [BlockHandle(o, s) for o, s in zip(top[4], top[5])]
        self._filter = None

    @property
    def file_size(self):
        return self._rf.size

    @property
    def record_count(self):
        return self.meta["record_count"]

    @property
    def record_section_size(self):
        return self.meta["record_section_size"]

    @property
    def average_record_size(self):
        return self.meta["average_record_size"]

    @property
    def total_value_bytes(self):
        return self.meta["total_value_bytes"]

    @property
    def tag(self):
        return self.meta.get("tag", "cold")

    def block_layout(self):
        parts = [{"kind": "index_partition", "offset": h.offset, "size": h.size} for h in self.partition_handles]
        f = self.footer
        return {
            "record_section": {"offset": 0, "size": self.record_section_size},
            "index_partitions": parts,
            "index": f.index._asdict(),
            "filter": f.filter._asdict(),
            "meta": f.meta._asdict(),
            "footer": {"offset": self.file_size - FOOTER_SIZE, "size": FOOTER_SIZE},
        }

    # index ------------------------------------------------------------
    def _load_partition(self, i, fill=True, tag="rtable_index"):
        h = self.partition_handles[i]

        def load():
            payload = read_block(self._rf, h, "index partition %d" % i)
            try:
                dec = kernels.decode_block(payload)
            except ValueError as exc:
                raise CorruptionError(str(exc), self.path, "index partition %d" % i) from None
            return (dec[0], dec[4], dec[5]), len(payload)

        if self.cache is None:
            return load()[0]
        return self.cache.get_or_load((self.file_number, h.offset), load, HIGH, tag, fill)

    def read_keys(self, fill=True):
        """All ``(key, offset, length)`` entries in key order, from index blocks only."""
        out = []
        for i in range(len(self.partition_handles)):
            keys, offs, lens = self._load_partition(i, fill)
            out.extend(zip(keys, offs, lens))
        return out

    def find(self, key):
        i = bisect.bisect_right(self.partition_keys, key) - 1
        if i < 0:
            return None
        keys, offs, lens = self._load_partition(i)
        j = bisect.bisect_left(keys, key)
        if j < len(keys) and keys[j] == key:
            return offs[j], lens[j]
        return None

    def may_contain(self, key):
        if self._filter is None:
            self._filter = decode_filters(read_block(self._rf, self.footer.filter, "filter"))[0]
        return may_contain(self._filter, key)

    # records ----------------------------------------------------------
    def _check_range(self, offset, length):
        if offset < 0 or length <= 0 or offset + length > self.record_section_size:
            raise RangeError(
                "record range [%d, %d) outside record section of %s" % (offset, offset + length, self.path)
            )

    def read_record(self, offset, length, fill_cache=True):
        """``(key, value)`` of the record at ``offset``: one read of ``length`` bytes."""
        self._check_range(offset, length)

        def load():
            buf = self._rf.read(offset, length)
            key, value, end = decode_record(buf, 0, self.path)
            if end != length:
                raise CorruptionError("record length mismatch at %d" % offset, self.path, "record")
            return (key, value), length

        if self.cache is None:
            return load()[0]
        return self.cache.get_or_load((self.file_number, offset), load, LOW, "record", fill_cache)

    def read_value(self, offset, length, fill_cache=True):
        return self.read_record(offset, length, fill_cache)[1]

    def read_span(self, offset, length):
        """Raw bytes of a contiguous run of records (one request, uncached)."""
        self._check_range(offset, length)
        return self._rf.read(offset, length)

    def get(self, key):
        if not self.may_contain(key):
            return None
        loc = self.find(key)
        if loc is None:
            return None
        return self.read_value(*loc)

    def iterate(self, chunk=1 << 20):
        """Yield every ``(key, value)`` by scanning the record section."""
        end = self.record_section_size
        buf = b""
        p = 0
        read_to = 0
        while True:
            while True:
                rec_end = _record_end(buf, p)
                if rec_end is None or rec_end > len(buf):
                    break
                key, value, p = decode_record(buf, p, self.path)
                yield key, value
            if read_to >= end:
                if p != len(buf):
                    raise CorruptionError("record section ends mid-record", self.path, "record")
                return
            take = min(max(chunk, (rec_end or 0) - p), end - read_to)
            buf = buf[p:] + self._rf.read(read_to, take)
            read_to += take
            p = 0

    def verify(self):
        """Full integrity check: every block checksum, index/record agreement."""
        entries = self.read_keys(fill=False)
        if len(entries) != self.record_count:
            raise CorruptionError("index/record count mismatch", self.path, "index")
        expect = 0
        prev = None
        for (key, off, length), (rkey, _) in zip(entries, self.iterate()):
            if off != expect or key != rkey or (prev is not None and key <= prev):
                raise CorruptionError("index entry disagrees with record at %d" % off, self.path, "index")
            expect = off + length
            prev = key
        if expect != self.record_section_size:
            raise CorruptionError("record section size mismatch", self.path, "meta")
        decode_filters(read_block(self._rf, self.footer.filter, "filter"))
        return True

    def close(self):
        self._rf.close()
