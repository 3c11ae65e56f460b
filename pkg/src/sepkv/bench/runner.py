"""Phase execution against an engine instance."""
from __future__ import annotations

import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .. import kernels
from ..engine import DB
from . import report as rp
from .workload import (OP_DELETE, OP_INSERT, OP_NAMES, OP_READ, OP_RMW, OP_SCAN, OP_UPDATE, describe,
                       generate_phase, make_key, make_value)

log = logging.getLogger("sepkv.bench")


class DatasetState:
    """Live key sizes and write versions; the unique dataset size follows
    every write exactly."""

    def __init__(self, key_size):
        self.key_size = key_size
        self.sizes = np.zeros(1024, np.int64)
        self.versions = np.zeros(1024, np.int64)
        self.count = 0  # keys ever inserted (indices below are valid)
        self.dataset_bytes = 0
        self.lock = threading.Lock()

    def _grow(self, idx):
        n = len(self.sizes)
        while idx >= n:
            n *= 2
        if n != len(self.sizes):
            self.sizes = np.concatenate([self.sizes, np.zeros(n - len(self.sizes), np.int64)])
            self.versions = np.concatenate([self.versions, np.zeros(n - len(self.versions), np.int64)])

    def on_put(self, idx, size):
        with self.lock:
            if idx >= len(self.sizes):
                self._grow(idx)
            old = int(self.sizes[idx])
            if old:
                self.dataset_bytes -= old + self.key_size
            self.sizes[idx] = size
            self.dataset_bytes += size + self.key_size
            self.versions[idx] += 1
            self.count = max(self.count, idx + 1)
            return int(self.versions[idx])

    def on_delete(self, idx):
        with self.lock:
            if idx < len(self.sizes) and self.sizes[idx]:
                self.dataset_bytes -= int(self.sizes[idx]) + self.key_size
                self.sizes[idx] = 0


class Sampler(threading.Thread):
    def __init__(self, db, state, interval):
        super().__init__(daemon=True, name="bench-sampler")
        self.db = db
        self.state = state
        self.interval = interval
        self.phase = ""
        self.samples = []
        self._stop_ev = threading.Event()
        self.t0 = time.monotonic()

    def sample(self):
        s = self.db.space_stats()
        ds = self.state.dataset_bytes
        self.samples.append({
            "t": round(time.monotonic() - self.t0, 3),
            "phase": self.phase,
            "disk_usage": s.disk_usage,
            "dataset_bytes": ds,
            "s_index": s.s_index,
            "s_value_model": s.s_value,
            "s_value_measured": s.disk_usage / ds if ds else 0.0,
            "exposed_ratio": s.exposed_ratio,
            "stall": int(s.stall),
        })

    def run(self):
        while not self._stop_ev.wait(self.interval):
            try:
                self.sample()
            except Exception:  # engine closed underneath us
                return

    def stop(self):
        self._stop_ev.set()
        self.join()


class PhaseRunner:
    def __init__(self, db, spec, state):
        self.db = db
        self.spec = spec
        self.state = state
        self.pool = ThreadPoolExecutor(spec.workers, thread_name_prefix="bench-worker") if spec.workers > 1 else None

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    def _run_chunk(self, kinds, keys, sizes, lengths, update_limit):
        db = self.db
        st = self.state
        ks = self.spec.key_size
        lat = np.empty(len(kinds), np.int64)
        counts = [0] * len(OP_NAMES)
        written = 0
        read = 0
        clock = time.perf_counter_ns
        for i in range(len(kinds)):
            kind = int(kinds[i])
            idx = int(keys[i])
            key = make_key(idx, ks)
            t = clock()
            if kind == OP_READ:
                v = db.get(key)
                read += len(v) if v is not None else 0
            elif kind == OP_SCAN:
                for k, v in db.scan(key, None, int(lengths[i])):
                    read += len(k) + len(v)
            elif kind == OP_DELETE:
                db.delete(key)
                st.on_delete(idx)
            else:
                if kind == OP_RMW:
                    v = db.get(key)
                    read += len(v) if v is not None else 0
                size = int(sizes[i])
                ver = st.on_put(idx, size)
                db.put(key, make_value(idx, ver, size))
                written += ks + size
            lat[i] = clock() - t
            counts[kind] += 1
            if i & 255 == 255:
                db.set_dataset_size(st.dataset_bytes, update_limit)
        db.set_dataset_size(st.dataset_bytes, update_limit)
        return lat, counts, written, read

    def run_batch(self, kinds, keys, sizes, lengths, update_limit):
        n = len(kinds)
        if self.pool is None or n < 2 * self.spec.workers:
            return [self._run_chunk(kinds, keys, sizes, lengths, update_limit)]
        bounds = np.linspace(0, n, self.spec.workers + 1).astype(int)
        futs = [self.pool.submit(self._run_chunk, kinds[a:b], keys[a:b], sizes[a:b], lengths[a:b], update_limit)
                for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        return [f.result() for f in futs]


def run_phase(db, spec, index, state, runner, sampler=None):
    """Execute phase ``index``; returns its report block."""
    ph = spec.phase_plan()[index]
    if sampler is not None:
        sampler.phase = ph.kind
    env = db.env
    io0 = env.stats.snapshot()
    gc0 = len(db.gc_events)
    cache0 = rp.cache_snapshot(db.cache)
    gc_ksst0 = env.stats.written("gc", "ksst")
    env.reset_peak()
    lats = []
    counts = np.zeros(len(OP_NAMES), np.int64)
    written = read = 0
    peak_excess = None
    block = {"phase": ph.kind, "partial": False}
    # the space limit follows the dataset once it is fully loaded
    update_limit = ph.kind != "load"
    t0 = time.perf_counter()
    try:
        for kinds, keys, sizes, lengths in generate_phase(spec, index, state.count):
            for lat, c, w, r in runner.run_batch(kinds, keys, sizes, lengths, update_limit):
                lats.append(lat)
                counts += c
                written += w
                read += r
            if update_limit and spec.options.space_limit_multiplier > 0:
                excess = env.peak_usage - spec.options.space_limit_multiplier * state.dataset_bytes
                peak_excess = excess if peak_excess is None else max(peak_excess, excess)
        db.wait_for_background(flush_only=True)
    except Exception as exc:
        log.exception("phase %s aborted", ph.kind)
        block["partial"] = True
        block["error"] = repr(exc)
    secs = time.perf_counter() - t0
    ops = int(counts.sum())
    all_lat = np.concatenate(lats) if lats else np.zeros(0, np.int64)
    stats = db.space_stats()
    ds = state.dataset_bytes
    block.update({
        "ops": ops,
        "op_counts": {OP_NAMES[i]: int(counts[i]) for i in range(len(OP_NAMES)) if counts[i]},
        "seconds": secs,
        "ops_per_sec": ops / secs if secs > 0 else 0.0,
        "mb_per_sec": (written + read) / secs / 1e6 if secs > 0 else 0.0,
        "user_bytes_written": written,
        "user_bytes_read": read,
        "latency": rp.latency_summary(all_lat),
        "gc": rp.gc_summary(db.gc_events[gc0:]),
        "io": rp.io_delta(io0, env.stats.snapshot()),
        "gc_index_bytes_written": env.stats.written("gc", "ksst") - gc_ksst0,
        "cache": rp.cache_delta(cache0, rp.cache_snapshot(db.cache)),
        "space": {
            **stats.as_dict(),
            "dataset_bytes": ds,
            "s_value_measured": stats.disk_usage / ds if ds else 0.0,
            "peak_usage": env.peak_usage,
            "peak_excess_over_limit": peak_excess,
        },
        "engine": dict(db.counters),
    })
    return block


def run(spec, db_dir, out_dir, progress=None):
    """Run every phase; returns ``(report, clean)``.  Writes report.json,
    stats.csv (per commit), samples.csv (periodic), gc.log and scheduler.log."""
    os.makedirs(out_dir, exist_ok=True)
    opts = spec.options.replace(
        stats_csv=os.path.join(out_dir, "stats.csv"),
        gc_log=os.path.join(out_dir, "gc.log"),
        scheduler_log=os.path.join(out_dir, "scheduler.log"),
        dataset_size=spec.dataset_size if spec.options.space_limit_multiplier > 0 else 0,
    )
    report = {
        "seed": spec.seed,
        "kernels": kernels.IMPLEMENTATION,
        "workload": describe(spec),
        "options": opts.to_dict(),
        "phases": [],
    }
    clean = True
    db = DB(db_dir, opts)
    state = DatasetState(spec.key_size)
    sampler = Sampler(db, state, spec.sample_interval)
    runner = PhaseRunner(db, spec, state)
    sampler.start()
    try:
        for i in range(len(spec.phases)):
            block = run_phase(db, spec, i, state, runner, sampler)
            report["phases"].append(block)
            if progress is not None:
                progress(block)
            if block["partial"]:
                clean = False
                break
    finally:
        runner.close()
        sampler.sample()
        sampler.stop()
        db.close()
    report["clean"] = clean
    report["gc_jobs"] = rp.gc_summary(db.gc_events)
    rp.write_samples(os.path.join(out_dir, "samples.csv"), sampler.samples)
    rp.write_report(out_dir, report)
    return report, clean
