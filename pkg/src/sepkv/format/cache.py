"""Byte-bounded LRU block cache with a high- and a low-priority queue.

Index-style blocks (DTable index-key blocks, block locators, RTable index
partitions) are admitted high; data blocks and records low.  Eviction always
drains the low queue before touching the high one.
"""
from __future__ import annotations

import threading
from collections import OrderedDict

HIGH = 1
LOW = 0


class CacheStats:
    __slots__ = ("hits", "misses")

    def __init__(self):
        self.hits = 0
        self.misses = 0

    @property
    def hit_ratio(self):
        total = self.hits + self.misses
        return self.hits / total if total else 0.0


class BlockCache:
    def __init__(self, capacity):
        self.capacity = int(capacity)
        self._queues = {HIGH: OrderedDict(), LOW: OrderedDict()}
        self._where = {}
        self._by_file = {}
        self.used = 0
        self.stats = {}
        self._lock = threading.Lock()

    def _stat(self, tag):
        s = self.stats.get(tag)
        if s is None:
            s = self.stats[tag] = CacheStats()
        return s

    def lookup(self, key, tag="default"):
        with self._lock:
            prio = self._where.get(key)
            if prio is None:
                self._stat(tag).misses += 1
                return None
            q = self._queues[prio]
            q.move_to_end(key)
            self._stat(tag).hits += 1
            return q[key][0]

    def insert(self, key, value, charge, priority=LOW):
        """Cache ``value``; returns False when it is too large to cache."""
        if charge > self.capacity:
            return False
        with self._lock:
            old = self._where.get(key)
            if old is not None:
                _, old_charge = self._queues[old].pop(key)
                self.used -= old_charge
            while self.used + charge > self.capacity:
                self._evict_one()
            self._queues[priority][key] = (value, charge)
            self._where[key] = priority
            self._by_file.setdefault(key[0], set()).add(key)
            self.used += charge
        return True

    def _evict_one(self):
        q = self._queues[LOW] if self._queues[LOW] else self._queues[HIGH]
        key, (_, charge) = q.popitem(last=False)
        del self._where[key]
        keys = self._by_file.get(key[0])
        if keys is not None:
            keys.discard(key)
            if not keys:
                del self._by_file[key[0]]
        self.used -= charge

    def get_or_load(self, key, loader, priority=LOW, tag="default", fill=True):
        """Return the cached value for ``key`` or ``loader()`` -> (value, charge).

        ``key`` is ``(file_number, block_offset)``.  With ``fill=False`` a miss
        is served without admitting the block.
        """
        value = self.lookup(key, tag)
        if value is not None:
            return value
        value, charge = loader()
        if fill:
            self.insert(key, value, charge, priority)
        return value

    def contains(self, key):
        with self._lock:
            return key in self._where

    def priority_of(self, key):
        with self._lock:
            return self._where.get(key)

    def erase_file(self, file_number):
        with self._lock:
            for key in self._by_file.pop(file_number, ()):
                prio = self._where.pop(key)
                _, charge = self._queues[prio].pop(key)
                self.used -= charge

    def usage_by_priority(self):
        with self._lock:
            return {
                p: sum(c for _, c in q.values()) for p, q in self._queues.items()
            }

    def __len__(self):
        return len(self._where)
