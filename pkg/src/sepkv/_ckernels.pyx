# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels.  Semantics mirror ``_pykernels`` exactly."""

from libc.stdint cimport uint64_t, uint32_t, uint8_t
from cpython.bytes cimport PyBytes_FromStringAndSize, PyBytes_AS_STRING, PyBytes_GET_SIZE
from libc.stdlib cimport malloc, realloc, free
from libc.string cimport memcpy

KIND_PUT = 0
KIND_DEL = 1
KIND_INDEX = 2
KIND_REF = 3

cdef enum:
    C_PUT = 0
    C_DEL = 1
    C_INDEX = 2
    C_REF = 3


cdef inline uint64_t _fnv(const unsigned char* p, Py_ssize_t n) nogil:
    cdef uint64_t h = 0xCBF29CE484222325ULL
    cdef Py_ssize_t i
    for i in range(n):
        h ^= p[i]
        h *= 0x100000001B3ULL
    return h


def fnv1a64(const unsigned char[:] data):
    if data.shape[0] == 0:
        return 0xCBF29CE484222325
    return _fnv(&data[0], data.shape[0])


cdef inline Py_ssize_t _varint_len(uint64_t v) nogil:
    cdef Py_ssize_t n = 1
    while v >= 0x80:
        v >>= 7
        n += 1
    return n


cdef inline Py_ssize_t _put(unsigned char* out, Py_ssize_t pos, uint64_t v) nogil:
    while v >= 0x80:
        out[pos] = <unsigned char>((v & 0x7F) | 0x80)
        pos += 1
        v >>= 7
    out[pos] = <unsigned char>v
    return pos + 1


cdef inline Py_ssize_t _get(const unsigned char* buf, Py_ssize_t pos, Py_ssize_t end,
                            uint64_t* out) except -1:
    cdef uint64_t result = 0
    cdef int shift = 0
    cdef unsigned char c
    while True:
        if pos >= end:
            raise ValueError("truncated varint")
        c = buf[pos]
        pos += 1
        result |= (<uint64_t>(c & 0x7F)) << shift
        if c < 0x80:
            out[0] = result
            return pos
        shift += 7
        if shift > 63:
            raise ValueError("varint too long")


def encode_varint(uint64_t v):
    cdef unsigned char tmp[10]
    cdef Py_ssize_t n = _put(tmp, 0, v)
    return PyBytes_FromStringAndSize(<char*>tmp, n)


def decode_varint(const unsigned char[:] buf, Py_ssize_t pos=0):
    cdef uint64_t v
    pos = _get(&buf[0], pos, buf.shape[0], &v)
    return v, pos


def encode_block(list keys, list seqs, list kinds, list values, list nums_a, list nums_b):
    cdef Py_ssize_t n = len(keys)
    cdef Py_ssize_t i, shared, limit, klen, plen, total, pos
    cdef bytes key, prev, value
    cdef const unsigned char* kp
    cdef const unsigned char* pp
    cdef int kind
    # sizing pass
    total = _varint_len(n)
    prev = b""
    for i in range(n):
        key = keys[i]
        klen = PyBytes_GET_SIZE(key)
        plen = PyBytes_GET_SIZE(prev)
        kp = <const unsigned char*>PyBytes_AS_STRING(key)
        pp = <const unsigned char*>PyBytes_AS_STRING(prev)
        limit = plen if plen < klen else klen
        shared = 0
        while shared < limit and pp[shared] == kp[shared]:
            shared += 1
        total += _varint_len(shared) + _varint_len(klen - shared) + (klen - shared)
        total += _varint_len(<uint64_t>seqs[i]) + 1
        kind = kinds[i]
        if kind == C_PUT:
            value = values[i]
            total += _varint_len(PyBytes_GET_SIZE(value)) + PyBytes_GET_SIZE(value)
        elif kind != C_DEL:
            total += _varint_len(<uint64_t>nums_a[i]) + _varint_len(<uint64_t>nums_b[i])
        prev = key
    out = PyBytes_FromStringAndSize(NULL, total)
    cdef unsigned char* o = <unsigned char*>PyBytes_AS_STRING(out)
    pos = _put(o, 0, n)
    prev = b""
    cdef Py_ssize_t j, vlen
    cdef const unsigned char* vp
    for i in range(n):
        key = keys[i]
        klen = PyBytes_GET_SIZE(key)
        plen = PyBytes_GET_SIZE(prev)
        kp = <const unsigned char*>PyBytes_AS_STRING(key)
        pp = <const unsigned char*>PyBytes_AS_STRING(prev)
        limit = plen if plen < klen else klen
        shared = 0
        while shared < limit and pp[shared] == kp[shared]:
            shared += 1
        pos = _put(o, pos, shared)
        pos = _put(o, pos, klen - shared)
        for j in range(shared, klen):
            o[pos] = kp[j]
            pos += 1
        pos = _put(o, pos, <uint64_t>seqs[i])
        kind = kinds[i]
        o[pos] = <unsigned char>kind
        pos += 1
        if kind == C_PUT:
            value = values[i]
            vlen = PyBytes_GET_SIZE(value)
            vp = <const unsigned char*>PyBytes_AS_STRING(value)
            pos = _put(o, pos, vlen)
            for j in range(vlen):
                o[pos + j] = vp[j]
            pos += vlen
        elif kind != C_DEL:
            pos = _put(o, pos, <uint64_t>nums_a[i])
            pos = _put(o, pos, <uint64_t>nums_b[i])
        prev = key
    return out


def decode_block(buf):
    cdef const unsigned char[:] view = buf
    cdef Py_ssize_t end = view.shape[0]
    if end == 0:
        raise ValueError("empty block")
    cdef const unsigned char* p = &view[0]
    cdef uint64_t n, shared, unshared, seq, vlen, a, b
    cdef Py_ssize_t pos = _get(p, 0, end, &n)
    cdef list keys = []
    cdef list seqs = []
    cdef list kinds = []
    cdef list values = []
    cdef list nums_a = []
    cdef list nums_b = []
    cdef Py_ssize_t cap = 64
    cdef Py_ssize_t prevlen = 0
    cdef unsigned char* kbuf = <unsigned char*>malloc(cap)
    cdef unsigned char* grown
    cdef bytes key
    cdef uint64_t i
    cdef int kind
    if kbuf == NULL:
        raise MemoryError()
    try:
        for i in range(n):
            pos = _get(p, pos, end, &shared)
            pos = _get(p, pos, end, &unshared)
            if shared > <uint64_t>prevlen or pos + <Py_ssize_t>unshared > end:
                raise ValueError("corrupt block entry")
            if <Py_ssize_t>(shared + unshared) > cap:
                cap = (shared + unshared) * 2
                grown = <unsigned char*>realloc(kbuf, cap)
                if grown == NULL:
                    raise MemoryError()
                kbuf = grown
            memcpy(kbuf + shared, p + pos, unshared)
            prevlen = shared + unshared
            key = PyBytes_FromStringAndSize(<const char*>kbuf, prevlen)
            pos += unshared
            pos = _get(p, pos, end, &seq)
            if pos >= end:
                raise ValueError("corrupt block entry")
            kind = p[pos]
            pos += 1
            if kind == C_PUT:
                pos = _get(p, pos, end, &vlen)
                if pos + <Py_ssize_t>vlen > end:
                    raise ValueError("corrupt block value")
                values.append(PyBytes_FromStringAndSize(<const char*>(p + pos), vlen))
                pos += vlen
                nums_a.append(0)
                nums_b.append(0)
            elif kind == C_DEL:
                values.append(None)
                nums_a.append(0)
                nums_b.append(0)
            elif kind == C_INDEX or kind == C_REF:
                pos = _get(p, pos, end, &a)
                pos = _get(p, pos, end, &b)
                values.append(None)
                nums_a.append(a)
                nums_b.append(b)
            else:
                raise ValueError("unknown entry kind %d" % kind)
            keys.append(key)
            seqs.append(seq)
            kinds.append(kind)
    finally:
        free(kbuf)
    if pos != end:
        raise ValueError("trailing bytes in block")
    return keys, seqs, kinds, values, nums_a, nums_b


def bloom_num_probes(bits_per_key):
    k = int(bits_per_key * 0.69)
    return max(1, min(30, k))


def bloom_build(list keys, int bits_per_key):
    cdef int k = bloom_num_probes(bits_per_key)
    cdef Py_ssize_t nbits = len(keys) * bits_per_key
    if nbits < 64:
        nbits = 64
    cdef Py_ssize_t nbytes = (nbits + 7) // 8
    nbits = nbytes * 8
    out = PyBytes_FromStringAndSize(NULL, nbytes + 1)
    cdef unsigned char* bits = <unsigned char*>PyBytes_AS_STRING(out)
    cdef Py_ssize_t i
    for i in range(nbytes):
        bits[i] = 0
    cdef uint64_t h, h1, h2, bitpos
    cdef bytes key
    cdef int j
    for key in keys:
        h = _fnv(<const unsigned char*>PyBytes_AS_STRING(key), PyBytes_GET_SIZE(key))
        h1 = h & 0xFFFFFFFFULL
        h2 = (h >> 32) | 1
        for j in range(k):
            bitpos = (h1 + j * h2) % <uint64_t>nbits
            bits[bitpos >> 3] |= <unsigned char>(1 << (bitpos & 7))
    bits[nbytes] = <unsigned char>k
    return out


def bloom_may_contain(const unsigned char[:] filt, const unsigned char[:] key):
    cdef Py_ssize_t nbytes = filt.shape[0] - 1
    if nbytes <= 0:
        return True
    cdef int k = filt[nbytes]
    cdef uint64_t nbits = nbytes * 8
    cdef uint64_t h
    if key.shape[0] == 0:
        h = 0xCBF29CE484222325ULL
    else:
        h = _fnv(&key[0], key.shape[0])
    cdef uint64_t h1 = h & 0xFFFFFFFFULL
    cdef uint64_t h2 = (h >> 32) | 1
    cdef uint64_t bitpos
    cdef int j
    for j in range(k):
        bitpos = (h1 + j * h2) % nbits
        if not (filt[bitpos >> 3] & (1 << (bitpos & 7))):
            return False
    return True


def valid_runs(const unsigned char[:] bitmap):
    cdef Py_ssize_t n = bitmap.shape[0]
    cdef Py_ssize_t i = 0, j
    cdef list runs = []
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
