"""Leveled compaction of the index tree.

Level sizes are measured in compensated bytes (table bytes plus the sizes of
the values its index entries point at) unless compensation is switched off,
in which case the physical table bytes are used, as a plain LSM-tree would.
Targets follow dynamic leveling: the largest level fixes the bottom target and
every level above is ``T`` times smaller, never below ``level_base_size``.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

from .format.dtable import DEL, INDEX

INF = math.inf


def table_size(t, compensated):
    return t.file_size + t.sum_value_size if compensated else t.file_size


@dataclass
class LevelTargets:
    base_level: int
    targets: list  # index = level; L0 and levels above base_level are INF

    def target(self, level):
        return self.targets[level]


def level_targets(level_sizes, multiplier, base_bytes_max, num_levels):
    """Dynamic level targets from per-level sizes (index 0 is L0 and ignored).

    The bottom level's current size is the bottom target and each level up is
    ``multiplier`` times smaller. The chain stops at the first level whose
    target is at most ``base_bytes_max``, or higher if data already sits
    above that point. An upper level holding more than its share scores above
    1 and drains downward.
    """
    last = num_levels - 1
    targets = [INF] * num_levels
    first = next((i for i in range(1, num_levels) if level_sizes[i] > 0), None)
    if first is None:
        targets[last] = base_bytes_max
        return LevelTargets(last, targets)
    # the bottom is empty only while data still sits in a single upper level
    size = float(level_sizes[last] or max(level_sizes[1:]))
    lvl = last
    targets[lvl] = size
    while lvl > 1 and (size > base_bytes_max or lvl > first):
        lvl -= 1
        size /= multiplier
        targets[lvl] = size
    return LevelTargets(lvl, targets)


def compute_level_targets(version, options):
    # targets are logical whether or not scoring is compensated: with
    # compensation off, physical sizes are measured against the same targets
    sizes = [sum(table_size(t, True) for t in tables) for tables in version.levels]
    return level_targets(sizes, options.level_multiplier, options.level_base_size, options.num_levels)


def level_score(tables, target, compensated=True):
    """Sum of level sizes over the target (0 for an empty level)."""
    if not tables or target == INF:
        return 0.0
    return sum(table_size(t, compensated) for t in tables) / target


def compaction_scores(version, options, targets=None):
    """Per-level scores; L0 is scored by file count over the trigger and the
    last level is never a compaction source."""
    if targets is None:
        targets = compute_level_targets(version, options)
    n = len(version.levels)
    scores = [0.0] * n
    scores[0] = len(version.levels[0]) / options.l0_trigger
    for lvl in range(1, n - 1):
        scores[lvl] = level_score(version.levels[lvl], targets.target(lvl), options.compensated_compaction)
    return scores


@dataclass
class CompactionJob:
    level: int
    output_level: int
    inputs: list  # tables from ``level``
    next_inputs: list  # overlapping tables from ``output_level``
    score: float = 0.0
    bottommost: bool = False
    trivial_move: bool = False
    outputs: list = field(default_factory=list)

    @property
    def all_inputs(self):
        return [(self.level, t) for t in self.inputs] + [(self.output_level, t) for t in self.next_inputs]

    @property
    def input_numbers(self):
        return {t.number for t in self.inputs} | {t.number for t in self.next_inputs}


def _key_range(tables):
    return min(t.smallest for t in tables), max(t.largest for t in tables)


def _pick_file(tables, compensated, busy):
    """The table with the largest (compensated) size; ties go to the older file."""
    best = None
    for t in tables:
        if t.number in busy:
            continue
        k = (table_size(t, compensated), -t.number)
        if best is None or k > best[0]:
            best = (k, t)
    return None if best is None else best[1]


def pick_compaction(version, options, busy=frozenset(), force_level=None):
    """Choose the next job or None.  ``busy`` holds table numbers owned by
    running jobs; a job never overlaps them."""
    targets = compute_level_targets(version, options)
    scores = compaction_scores(version, options, targets)
    order = sorted(range(len(scores) - 1), key=lambda lvl: -scores[lvl])
    if force_level is not None:
        order = [force_level]
    comp = options.compensated_compaction
    for lvl in order:
        if force_level is None and scores[lvl] < 1.0:
            break
        tables = version.levels[lvl]
        if not tables:
            continue
        if lvl == 0:
            if any(t.number in busy for t in tables):
                continue
            inputs = list(tables)
            out = targets.base_level
        else:
            f = _pick_file(tables, comp, busy)
            if f is None:
                continue
            inputs = [f]
            out = lvl + 1
        lo, hi = _key_range(inputs)
        # every level strictly between source and output must be empty of the range
        for mid in range(lvl + 1, out):
            if version.overlapping(mid, lo, hi):
                out = mid
                break
        nxt = version.overlapping(out, lo, hi)
        if any(t.number in busy for t in nxt):
            continue
        bottom = all(not version.overlapping(deeper, lo, hi) for deeper in range(out + 1, len(version.levels)))
        job = CompactionJob(lvl, out, inputs, nxt, scores[lvl], bottommost=bottom)
        job.trivial_move = not nxt and len(inputs) == 1
        return job
    return None


@dataclass
class MergeResult:
    kept: list
    dropped: list  # (key, seq, kind, file_number, value_size) of shadowed entries
    dropped_tombstones: int = 0


def merge_streams(streams, drop_tombstone=lambda key: False):
    """Merge entry streams into the newest version per key.

    Each stream yields entries ``(key, seq, kind, value, file_number,
    value_size)`` in key order.  Yields ``(entry, shadowed)`` where ``entry``
    is the surviving entry (None when a tombstone is dropped) and
    ``shadowed`` lists the older entries it replaced.
    """
    merged = heapq.merge(*streams, key=lambda e: (e[0], -e[1]))
    cur = None
    shadowed = []
    for e in merged:
        if cur is not None and e[0] == cur[0]:
            shadowed.append(e)
            continue
        if cur is not None:
            yield (None if cur[2] == DEL and drop_tombstone(cur[0]) else cur), shadowed
            shadowed = []
        cur = e
    if cur is not None:
        yield (None if cur[2] == DEL and drop_tombstone(cur[0]) else cur), shadowed


def merge_entries(streams, drop_tombstone=lambda key: False):
    """Materialized form of :func:`merge_streams` (used by tests and tools)."""
    res = MergeResult([], [])
    for entry, shadowed in merge_streams(streams, drop_tombstone):
        if entry is None:
            res.dropped_tombstones += 1
        else:
            res.kept.append(entry)
        for s in shadowed:
            res.dropped.append((s[0], s[1], s[2], s[4], s[5]))
    return res


def garbage_of(dropped):
    """Total separated value bytes among dropped entries."""
    return sum(d[4] for d in dropped if d[2] == INDEX)


__all__ = [
    "CompactionJob",
    "LevelTargets",
    "MergeResult",
    "compaction_scores",
    "compute_level_targets",
    "garbage_of",
    "level_score",
    "level_targets",
    "merge_entries",
    "merge_streams",
    "pick_compaction",
    "table_size",
]
