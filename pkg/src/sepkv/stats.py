"""Space-amplification accounting.

Index side: ``S_index = (K_U + K_L) / K_L`` with K_U the compensated bytes of
every index level above the last non-empty one (L0 included) and K_L the
compensated bytes of that last level.  Value side: exposed garbage ``G_E`` is
the garbage already attributed to live value tables, ``D`` their remaining
bytes, and the model amplification is ``G_E / D + S_index``.  Hidden garbage
(stale values whose superseding key has not merged down yet) is only
estimated, as ``D * K_U / K_L``; upper-level hidden garbage is not counted.
"""
from __future__ import annotations

import csv
import os
import threading
import time
from dataclasses import asdict, dataclass


def index_space_amp(k_upper, k_last):
    """``(K_U + K_L) / K_L``; 1.0 while the last level is empty."""
    if k_last <= 0:
        return 1.0
    return (k_upper + k_last) / k_last


def hidden_garbage_estimate(k_upper, k_last, d):
    if k_last <= 0:
        return 0.0
    return d * k_upper / k_last


def value_space_amp(g_exposed, d, s_index):
    if d <= 0:
        return 1.0
    return g_exposed / d + s_index


def measured_space_amp(disk_usage, dataset_bytes):
    if dataset_bytes <= 0:
        return 0.0
    return disk_usage / dataset_bytes


@dataclass(frozen=True)
class SpaceStats:
    timestamp: float
    k_upper: int
    k_last: int
    g_exposed: int
    d: int
    vsst_bytes: int
    nonempty_levels: int  # below L0; at least 1
    disk_usage: int
    dataset_bytes: int
    stall: bool = False

    @property
    def index_bootstrap(self):
        return self.k_last <= 0

    @property
    def value_bootstrap(self):
        return self.d <= 0

    @property
    def s_index(self):
        return index_space_amp(self.k_upper, self.k_last)

    @property
    def exposed_ratio(self):
        """``G_E / D`` (0 on an empty store)."""
        return self.g_exposed / self.d if self.d > 0 else 0.0

    @property
    def garbage_ratio(self):
        """Exposed garbage over all value-table bytes (the GC trigger input)."""
        return self.g_exposed / self.vsst_bytes if self.vsst_bytes > 0 else 0.0

    @property
    def hidden_estimate(self):
        return hidden_garbage_estimate(self.k_upper, self.k_last, self.d)

    @property
    def s_value(self):
        return value_space_amp(self.g_exposed, self.d, self.s_index)

    @property
    def s_measured(self):
        return measured_space_amp(self.disk_usage, self.dataset_bytes)

    def as_dict(self):
        d = asdict(self)
        d.update(s_index=self.s_index, exposed_ratio=self.exposed_ratio, s_value=self.s_value,
                 s_measured=self.s_measured, hidden_estimate=self.hidden_estimate,
                 index_bootstrap=self.index_bootstrap, value_bootstrap=self.value_bootstrap)
        return d


def compute_space_stats(version, garbage, disk_usage=0, dataset_bytes=0, stall=False, now=None):
    last = None
    for lvl in range(len(version.levels) - 1, 0, -1):
        if version.levels[lvl]:
            last = lvl
            break
    if last is None:
        # only L0 holds data: treat it as the bottom
        k_last = version.level_bytes(0) if version.levels[0] else 0
        k_upper = 0
        nonempty = 1
    else:
        k_last = version.level_bytes(last)
        k_upper = sum(version.level_bytes(lvl) for lvl in range(last))
        nonempty = max(1, sum(1 for lvl in range(1, len(version.levels)) if version.levels[lvl]))
    total = 0
    g = 0
    for n, v in version.vssts.items():
        total += v.total_bytes
        g += garbage.get(n, 0)
    return SpaceStats(
        timestamp=time.time() if now is None else now,
        k_upper=k_upper,
        k_last=k_last,
        g_exposed=g,
        d=total - g,
        vsst_bytes=total,
        nonempty_levels=nonempty,
        disk_usage=disk_usage,
        dataset_bytes=dataset_bytes,
        stall=stall,
    )


CSV_COLUMNS = ("timestamp", "S_index", "G_E/D", "S_value(model)", "S_value(measured)", "stall")


class StatsCsvWriter:
    """Appends one row per published snapshot."""

    def __init__(self, path):
        self.path = path
        new = not os.path.exists(path) or os.path.getsize(path) == 0
        self._f = open(path, "a", newline="")
        self._w = csv.writer(self._f)
        self._lock = threading.Lock()
        if new:
            self._w.writerow(CSV_COLUMNS)

    def write(self, s):
        with self._lock:
            self._w.writerow((
                "%.6f" % s.timestamp, "%.6f" % s.s_index, "%.6f" % s.exposed_ratio,
                "%.6f" % s.s_value, "%.6f" % s.s_measured, int(bool(s.stall)),
            ))

    def flush(self):
        with self._lock:
            self._f.flush()

    def close(self):
        with self._lock:
            self._f.close()


def read_stats_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
