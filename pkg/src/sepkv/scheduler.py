"""Background scheduling: space pressure, GC thread budget, bandwidth caps and
the space guard that stalls user writes near the disk limit."""
from __future__ import annotations

import json
import math
import threading
import time
from typing import NamedTuple


class SpacePressure(NamedTuple):
    p_index: float
    p_value: float


def ideal_index_amp(multiplier, levels):
    """``1 + sum_{i=1}^{L-1} T^-i``: index amplification of a perfectly shaped tree."""
    return 1.0 + sum(multiplier ** -i for i in range(1, max(1, levels)))


def compute_pressures(s_index, multiplier, levels, g_exposed, d, gc_ratio):
    p_index = max(0.0, s_index - ideal_index_amp(multiplier, levels))
    if d <= 0:
        p_value = 0.0
    else:
        p_value = max(0.0, g_exposed / d - gc_ratio / (1.0 - gc_ratio))
    return SpacePressure(p_index, p_value)


def max_gc_threads(n_threads, pressure):
    """GC share of ``n_threads``: proportional to value pressure, rounded half
    up and kept within ``[1, n - 1]`` so neither task kind starves.  With no
    pressure at all the pool is split in half."""
    if n_threads <= 1:
        return 1
    pi, pv = pressure
    if pi <= 0 and pv <= 0:
        return max(1, n_threads // 2)
    share = math.floor(n_threads * pv / (pi + pv) + 0.5)
    return min(max(share, 1), n_threads - 1)


class ThreadBudget:
    """Admission tokens for background jobs."""

    def __init__(self, n_threads):
        self.n_threads = max(1, n_threads)
        self.max_gc = max(1, self.n_threads // 2)
        self.inflight = {"flush": 0, "compaction": 0, "gc": 0}
        self._lock = threading.Lock()

    def publish(self, max_gc):
        with self._lock:
            self.max_gc = max(1, min(max_gc, self.n_threads))

    def try_acquire(self, kind, boost=False):
        with self._lock:
            total = sum(self.inflight.values())
            if kind != "flush" and total >= self.n_threads:
                return False
            if kind == "gc" and not boost and self.inflight["gc"] >= self.max_gc:
                return False
            self.inflight[kind] += 1
            return True

    def release(self, kind):
        with self._lock:
            self.inflight[kind] -= 1


class RateLimiter:
    """Byte-rate caps on background GC reads and writes.

    Each window the caps react to contention: when LSM write bandwidth is at
    least ``busy`` of the device budget and flush bandwidth has dropped below
    ``1 - dip`` of its rolling average, the write cap shrinks by ``step``.  The
    read cap follows the same rule with foreground read bandwidth.  A calm
    window grows a cap back by one step, never beyond the budget.  A budget of
    0 disables that direction.
    """

    HALF_LIFE = 10.0

    def __init__(self, write_budget=0, read_budget=0, step=0.2, busy=0.8, dip=0.2, floor=1 << 20):
        self.budget = {"write": float(write_budget), "read": float(read_budget)}
        self.cap = dict(self.budget)
        self.step = step
        self.busy = busy
        self.dip = dip
        self.floor = float(floor)
        self.alpha = 1.0 - 0.5 ** (1.0 / self.HALF_LIFE)
        self.avg = {"write": None, "read": None}
        self._tokens = {"write": 0.0, "read": 0.0}
        self._last = {"write": time.monotonic(), "read": time.monotonic()}
        self._lock = threading.Lock()
        self.throttled_seconds = 0.0

    def enabled(self, direction):
        return self.budget[direction] > 0

    def _adjust(self, direction, total_bw, victim_bw):
        budget = self.budget[direction]
        if budget <= 0:
            return
        avg = self.avg[direction]
        contended = (
            avg is not None and total_bw >= self.busy * budget and victim_bw < (1.0 - self.dip) * avg
        )
        if contended:
            self.cap[direction] = max(self.floor, self.cap[direction] * (1.0 - self.step))
        else:
            self.cap[direction] = min(budget, self.cap[direction] / (1.0 - self.step))
        self.avg[direction] = victim_bw if avg is None else avg + self.alpha * (victim_bw - avg)

    def on_window(self, lsm_write_bw, flush_bw, total_read_bw=0.0, fg_read_bw=0.0):
        """Feed one telemetry window (bytes/second)."""
        with self._lock:
            self._adjust("write", lsm_write_bw, flush_bw)
            self._adjust("read", total_read_bw, fg_read_bw)
            return dict(self.cap)

    def request(self, nbytes, direction="write"):
        """Block until ``nbytes`` may pass under the current cap."""
        if self.budget[direction] <= 0:
            return 0.0
        with self._lock:
            now = time.monotonic()
            cap = self.cap[direction]
            # no saved burst: a window never passes more than cap * window bytes
            tokens = min(0.0, self._tokens[direction] + (now - self._last[direction]) * cap)
            self._last[direction] = now
            tokens -= nbytes
            self._tokens[direction] = tokens
            wait = -tokens / cap if tokens < 0 else 0.0
        if wait > 0:
            time.sleep(wait)
            self.throttled_seconds += wait
        return wait


class SpaceGuard:
    """Stall writes once usage reaches ``limit``; resume below ``limit - hysteresis``."""

    def __init__(self, limit, hysteresis):
        self.limit = limit
        self.hysteresis = hysteresis
        self.stalled = False
        self.stall_events = 0

    def update(self, usage):
        if self.limit <= 0:
            self.stalled = False
            return False
        if self.stalled:
            if usage < self.limit - self.hysteresis:
                self.stalled = False
        elif usage >= self.limit:
            self.stalled = True
            self.stall_events += 1
        return self.stalled


class Scheduler:
    """Single decision point: publishes pressures and the GC budget on every
    commit and adjusts bandwidth caps once per telemetry window."""

    def __init__(self, options, env, log_path=""):
        self.options = options
        self.env = env
        self.budget = ThreadBudget(options.background_threads or 1)
        self.limiter = RateLimiter(options.device_write_budget, options.device_read_budget,
                                   options.throttle_step, options.busy_threshold, options.dip_threshold,
                                   options.rate_floor)
        self.guard = SpaceGuard(options.space_limit, options.vsst_size)
        self.pressure = SpacePressure(0.0, 0.0)
        self.window = options.telemetry_window
        self._last_t = time.monotonic()
        self._last_io = env.stats.snapshot()
        self._log = open(log_path, "a") if log_path else None
        self._lock = threading.Lock()
        self.history = []

    def set_limit(self, limit):
        self.guard.limit = limit

    def on_commit(self, stats):
        p = compute_pressures(stats.s_index, self.options.level_multiplier, stats.nonempty_levels,
                              stats.g_exposed, stats.d, self.options.gc_garbage_ratio)
        self.pressure = p
        if self.options.dynamic_gc_threads:
            self.budget.publish(max_gc_threads(self.budget.n_threads, p))
        return p

    def tick(self, stats=None, force=False):
        """Close the telemetry window if it has elapsed; returns the log record or None."""
        now = time.monotonic()
        with self._lock:
            dt = now - self._last_t
            if dt < self.window and not force:
                return None
            snap = self.env.stats.snapshot()
            prev = self._last_io
            self._last_io = snap
            self._last_t = now
        dt = max(dt, 1e-9)

        def delta(cat, attr):
            return snap.get(cat, {}).get(attr, 0) - prev.get(cat, {}).get(attr, 0)

        lsm_w = sum(delta(c, "bytes_written") for c in ("flush", "compaction", "gc", "wal")) / dt
        flush_w = delta("flush", "bytes_written") / dt
        total_r = sum(delta(c, "bytes_read") for c in snap) / dt
        fg_r = delta("user", "bytes_read") / dt
        caps = self.limiter.on_window(lsm_w, flush_w, total_r, fg_r)
        rec = {
            "ts": time.time(),
            "p_index": self.pressure.p_index,
            "p_value": self.pressure.p_value,
            "max_gc": self.budget.max_gc,
            "inflight": dict(self.budget.inflight),
            "gc_write_cap": caps["write"],
            "gc_read_cap": caps["read"],
            "stall": self.guard.stalled,
            "lsm_write_bw": lsm_w,
            "flush_bw": flush_w,
        }
        if stats is not None:
            rec["s_index"] = stats.s_index
            rec["s_value"] = stats.s_value
        self.history.append(rec)
        if self._log is not None:
            self._log.write(json.dumps(rec) + "\n")
            self._log.flush()
        return rec

    def close(self):
        if self._log is not None:
            self._log.close()
            self._log = None
