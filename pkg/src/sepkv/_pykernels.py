"""Pure-Python implementations of the hot kernels.

These are the reference semantics.  ``_ckernels`` (Cython) must produce
byte-identical output for every function here; ``tests/test_kernels.py``
checks the two against each other.
"""

KIND_PUT = 0
KIND_DEL = 1
KIND_INDEX = 2
KIND_REF = 3

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data):
    h = _FNV_OFFSET
    for c in data:
        h ^= c
        h = (h * _FNV_PRIME) & _MASK64
    return h


def _put_varint(out, v):
    while v >= 0x80:
        out.append((v & 0x7F) | 0x80)
        v >>= 7
    out.append(v)


def _get_varint(buf, pos):
    result = 0
    shift = 0
    end = len(buf)
    while True:
        if pos >= end:
            raise ValueError("truncated varint")
        c = buf[pos]
        pos += 1
        result |= (c & 0x7F) << shift
        if c < 0x80:
            return result, pos
        shift += 7
        if shift > 63:
            raise ValueError("varint too long")


def encode_varint(v):
    out = bytearray()
    _put_varint(out, v)
    return bytes(out)


def decode_varint(buf, pos=0):
    return _get_varint(buf, pos)


def encode_block(keys, seqs, kinds, values, nums_a, nums_b):
    """Prefix-compressed entry block: ``count`` then one entry per key.

    Entry: shared, unshared, key suffix, seq, kind byte, then either
    ``vlen value`` (PUT), nothing (DEL) or two varints (INDEX/REF).
    """
    out = bytearray()
    n = len(keys)
    _put_varint(out, n)
    prev = b""
    for i in range(n):
        key = keys[i]
        limit = min(len(prev), len(key))
        shared = 0
        while shared < limit and prev[shared] == key[shared]:
            shared += 1
        _put_varint(out, shared)
        _put_varint(out, len(key) - shared)
        out += key[shared:]
        _put_varint(out, seqs[i])
        kind = kinds[i]
        out.append(kind)
        if kind == KIND_PUT:
            value = values[i]
            _put_varint(out, len(value))
            out += value
        elif kind != KIND_DEL:
            _put_varint(out, nums_a[i])
            _put_varint(out, nums_b[i])
        prev = key
    return bytes(out)


def decode_block(buf):
    n, pos = _get_varint(buf, 0)
    keys = []
    seqs = []
    kinds = []
    values = []
    nums_a = []
    nums_b = []
    prev = b""
    end = len(buf)
    for _ in range(n):
        shared, pos = _get_varint(buf, pos)
        unshared, pos = _get_varint(buf, pos)
        if shared > len(prev) or pos + unshared > end:
            raise ValueError("corrupt block entry")
        key = prev[:shared] + bytes(buf[pos:pos + unshared])
        pos += unshared
        seq, pos = _get_varint(buf, pos)
        if pos >= end:
            raise ValueError("corrupt block entry")
        kind = buf[pos]
        pos += 1
        if kind == KIND_PUT:
            vlen, pos = _get_varint(buf, pos)
            if pos + vlen > end:
                raise ValueError("corrupt block value")
            values.append(bytes(buf[pos:pos + vlen]))
            pos += vlen
            nums_a.append(0)
            nums_b.append(0)
        elif kind == KIND_DEL:
            values.append(None)
            nums_a.append(0)
            nums_b.append(0)
        elif kind == KIND_INDEX or kind == KIND_REF:
            a, pos = _get_varint(buf, pos)
            b, pos = _get_varint(buf, pos)
            values.append(None)
            nums_a.append(a)
            nums_b.append(b)
        else:
            raise ValueError("unknown entry kind %d" % kind)
        keys.append(key)
        seqs.append(seq)
        kinds.append(kind)
        prev = key
    if pos != end:
        raise ValueError("trailing bytes in block")
    return keys, seqs, kinds, values, nums_a, nums_b


def bloom_num_probes(bits_per_key):
    k = int(bits_per_key * 0.69)
    return max(1, min(30, k))


def bloom_build(keys, bits_per_key):
    """Filter bytes for ``keys``; the last byte stores the probe count."""
    k = bloom_num_probes(bits_per_key)
    nbits = max(64, len(keys) * bits_per_key)
    nbytes = (nbits + 7) // 8
    nbits = nbytes * 8
    bits = bytearray(nbytes)
    for key in keys:
        h = fnv1a64(key)
        h1 = h & 0xFFFFFFFF
        h2 = (h >> 32) | 1
        for i in range(k):
            pos = (h1 + i * h2) % nbits
            bits[pos >> 3] |= 1 << (pos & 7)
    bits.append(k)
    return bytes(bits)


def bloom_may_contain(filt, key):
    nbytes = len(filt) - 1
    if nbytes <= 0:
        return True
    k = filt[nbytes]
    nbits = nbytes * 8
    h = fnv1a64(key)
    h1 = h & 0xFFFFFFFF
    h2 = (h >> 32) | 1
    for i in range(k):
        pos = (h1 + i * h2) % nbits
        if not filt[pos >> 3] & (1 << (pos & 7)):
            return False
    return True


def valid_runs(bitmap):
    """Maximal runs of set bits as half-open ``(start, end)`` pairs."""
    runs = []
    n = len(bitmap)
    i = 0
    while i < n:
        if bitmap[i]:
            j = i + 1
            while j < n and bitmap[j]:
                j += 1
            runs.append((i, j))
            i = j
        else:
            i += 1
    return runs
