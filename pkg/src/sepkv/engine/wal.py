"""Write-ahead log: one file per memtable generation.

record = crc32:u32le | length:u32le | payload
payload = varint seq | kind:u8 | varint klen | key | value

The CRC covers the length field and the payload.  Replay stops at the first
record that is truncated or fails its checksum; everything after a torn
record was never acknowledged.
"""
from __future__ import annotations

import struct
import zlib

from .. import kernels

_HEADER = struct.Struct("<II")


def encode_record(seq, kind, key, value):
    payload = b"".join((
        kernels.encode_varint(seq), bytes((kind,)), kernels.encode_varint(len(key)), key, value or b"",
    ))
    lenb = struct.pack("<I", len(payload))
    return struct.pack("<I", zlib.crc32(payload, zlib.crc32(lenb))) + lenb + payload


class WalWriter:
    def __init__(self, env, path, number, sync=False):
        self.env = env
        self.path = path
        self.number = number
        self.sync_each = sync
        self._wf = env.open_writable(path, category="wal", buffer_size=1 << 30)
        self.bytes_written = 0

    def append(self, seq, kind, key, value):
        rec = encode_record(seq, kind, key, value)
        self._wf.append(rec)
        # hand the record to the OS before acknowledging the write
        if self.sync_each:
            self._wf.sync()
        else:
            self._wf.flush()
        self.bytes_written += len(rec)

    def close(self):
        self._wf.close()


def read_wal(env, path):
    """Yield ``(seq, kind, key, value)``; returns silently at a torn tail."""
    data = env.read_file(path, category="recovery")
    pos = 0
    n = len(data)
    while pos + _HEADER.size <= n:
        crc, length = _HEADER.unpack_from(data, pos)
        start = pos + _HEADER.size
        end = start + length
        if end > n:
            return
        payload = data[start:end]
        if zlib.crc32(payload, zlib.crc32(data[pos + 4:start])) != crc:
            return
        try:
            seq, p = kernels.decode_varint(payload, 0)
            kind = payload[p]
            klen, p = kernels.decode_varint(payload, p + 1)
        except (ValueError, IndexError):
            return
        key = payload[p:p + klen]
        value = payload[p + klen:] if kind == 0 else None
        yield seq, kind, bytes(key), bytes(value) if value is not None else None
        pos = end
