"""In-memory write buffer: one newest entry per key, kept in key order."""
from __future__ import annotations

import bisect

PUT = 0
DEL = 1

_ENTRY_OVERHEAD = 16


class Memtable:
    def __init__(self, wal_number=0):
        self.wal_number = wal_number
        self._map = {}
        self._keys = []
        self.approximate_size = 0
        self.first_seq = None
        self.last_seq = 0

    def __len__(self):
        return len(self._map)

    def add(self, seq, kind, key, value=None):
        old = self._map.get(key)
        if old is None:
            bisect.insort(self._keys, key)
        else:
            self.approximate_size -= _ENTRY_OVERHEAD + len(key) + (len(old[2]) if old[2] else 0)
        self._map[key] = (seq, kind, value)
        self.approximate_size += _ENTRY_OVERHEAD + len(key) + (len(value) if value else 0)
        if self.first_seq is None:
            self.first_seq = seq
        self.last_seq = seq

    def get(self, key):
        """``(seq, kind, value)`` or None."""
        return self._map.get(key)

    def items_from(self, start=None):
        """``(key, seq, kind, value)`` in key order starting at ``start``."""
        keys = self._keys
        i = 0 if start is None else bisect.bisect_left(keys, start)
        m = self._map
        # snapshot the slice so concurrent inserts do not disturb iteration
        for key in keys[i:]:
            seq, kind, value = m[key]
            yield key, seq, kind, value

    def sorted_entries(self):
        return list(self.items_from())
