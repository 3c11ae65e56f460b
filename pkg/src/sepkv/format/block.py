"""Block framing, footer layout and filter helpers shared by both table formats.

Every block is ``payload || crc32(payload)`` with the CRC stored as 4 bytes
little-endian; a :class:`BlockHandle` records the payload offset and size
(the CRC trailer is not included in ``size``).

Footer (57 bytes, at the very end of the file)::

    index ref   offset:u64le  size:u64le
    filter ref  offset:u64le  size:u64le
    meta ref    offset:u64le  size:u64le
    version     u8
    magic       8 bytes
"""
from __future__ import annotations

import json
import struct
import zlib
from typing import NamedTuple

from .. import kernels
from ..errors import CorruptionError

FORMAT_VERSION = 1
RTABLE_MAGIC = b"sepkvRTB"
DTABLE_MAGIC = b"sepkvDTB"
_FOOTER = struct.Struct("<QQQQQQB8s")
FOOTER_SIZE = _FOOTER.size
_CRC = struct.Struct("<I")
CRC_SIZE = 4

BLOOM_BITS_PER_KEY = 10


class BlockHandle(NamedTuple):
    offset: int
    size: int

    @property
    def end(self):
        return self.offset + self.size + CRC_SIZE


class Footer(NamedTuple):
    index: BlockHandle
    filter: BlockHandle
    meta: BlockHandle
    version: int
    magic: bytes

    def encode(self):
        return _FOOTER.pack(
            self.index.offset, self.index.size,
            self.filter.offset, self.filter.size,
            self.meta.offset, self.meta.size,
            self.version, self.magic,
        )

    @classmethod
    def decode(cls, data, path=None, expect_magic=None):
        if len(data) != FOOTER_SIZE:
            raise CorruptionError("short footer", path, "footer")
        io, isz, fo, fsz, mo, msz, version, magic = _FOOTER.unpack(data)
        if expect_magic is not None and magic != expect_magic:
            raise CorruptionError("bad magic %r" % magic, path, "footer")
        if version != FORMAT_VERSION:
            raise CorruptionError("unsupported format version %d" % version, path, "footer")
        return cls(BlockHandle(io, isz), BlockHandle(fo, fsz), BlockHandle(mo, msz), version, magic)


def write_block(wf, payload):
    handle = BlockHandle(wf.offset, len(payload))
    wf.append(payload)
    wf.append(_CRC.pack(zlib.crc32(payload)))
    return handle


def read_block(rf, handle, name, category=None):
    raw = rf.read(handle.offset, handle.size + CRC_SIZE, category)
    payload = raw[:handle.size]
    (crc,) = _CRC.unpack_from(raw, handle.size)
    if zlib.crc32(payload) != crc:
        raise CorruptionError("checksum mismatch", rf.path, name)
    return payload


def read_footer(rf, expect_magic, category=None):
    if rf.size < FOOTER_SIZE:
        raise CorruptionError("file shorter than footer", rf.path, "footer")
    data = rf.read(rf.size - FOOTER_SIZE, FOOTER_SIZE, category)
    return Footer.decode(data, rf.path, expect_magic)


def encode_meta(meta):
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()


def decode_meta(payload, path=None):
    try:
        return json.loads(payload)
    except ValueError as exc:
        raise CorruptionError("undecodable meta block: %s" % exc, path, "meta") from None


def encode_filters(filters):
    """Concatenate several bloom filters into one filter block."""
    out = bytearray(kernels.encode_varint(len(filters)))
    for f in filters:
        out += kernels.encode_varint(len(f))
        out += f
    return bytes(out)


def decode_filters(payload):
    n, pos = kernels.decode_varint(payload, 0)
    filters = []
    for _ in range(n):
        size, pos = kernels.decode_varint(payload, pos)
        filters.append(bytes(payload[pos:pos + size]))
        pos += size
    return filters


def build_filter(keys, bits_per_key=BLOOM_BITS_PER_KEY):
    return kernels.bloom_build(list(keys), bits_per_key)


def may_contain(filt, key):
    return kernels.bloom_may_contain(filt, key)
