"""Metric aggregation and report files."""
from __future__ import annotations

import csv
import json
import os

import numpy as np

PERCENTILES = (50, 99, 99.9)


def latency_summary(ns):
    """p50/p99/p999 and mean in microseconds from a complete latency array."""
    a = np.asarray(ns, dtype=np.float64)
    if a.size == 0:
        return {"count": 0}
    p = np.percentile(a, PERCENTILES)
    return {
        "count": int(a.size),
        "mean_us": float(a.mean() / 1e3),
        "p50_us": float(p[0] / 1e3),
        "p99_us": float(p[1] / 1e3),
        "p999_us": float(p[2] / 1e3),
    }


def io_delta(before, after):
    out = {}
    for cat in sorted(set(before) | set(after)):
        b = before.get(cat, {})
        a = after.get(cat, {})
        row = {k: a.get(k, 0) - b.get(k, 0) for k in set(a) | set(b)}
        if any(row.values()):
            out[cat] = row
    return out


def cache_snapshot(cache):
    return {tag: (s.hits, s.misses) for tag, s in list(cache.stats.items())}


def cache_delta(before, after):
    """Per-tag block-cache hits, misses and hit ratio between two snapshots."""
    out = {}
    for tag, (h, m) in sorted(after.items()):
        h0, m0 = before.get(tag, (0, 0))
        h, m = h - h0, m - m0
        if h + m:
            out[tag] = {"hits": h, "misses": m, "hit_ratio": h / (h + m)}
    return out


def gc_summary(events):
    if not events:
        return {"jobs": 0}
    def total(attr):
        return float(sum(getattr(e, attr) for e in events))
    n = len(events)
    return {
        "jobs": n,
        "read_seconds": total("read_seconds"),
        "lookup_seconds": total("lookup_seconds"),
        "write_seconds": total("write_seconds"),
        "mean_read_ms": total("read_seconds") / n * 1e3,
        "mean_lookup_ms": total("lookup_seconds") / n * 1e3,
        "mean_write_ms": total("write_seconds") / n * 1e3,
        "records_scanned": int(total("total_records")),
        "records_rewritten": int(total("valid_records")),
        "bytes_read": int(sum(e.index_bytes_read + e.record_bytes_read for e in events)),
        "bytes_written": int(total("bytes_written")),
        "read_requests": int(total("read_requests")),
        "hot_jobs": sum(1 for e in events if e.tag == "hot"),
        "mean_candidate_ratio": {
            tag: float(np.mean([e.garbage_ratio for e in events if e.tag == tag]))
            for tag in ("hot", "cold") if any(e.tag == tag for e in events)
        },
    }


SAMPLE_COLUMNS = ["t", "phase", "disk_usage", "dataset_bytes", "s_index", "s_value_model", "s_value_measured",
                  "exposed_ratio", "stall"]


def write_samples(path, samples):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SAMPLE_COLUMNS)
        for s in samples:
            w.writerow([s[c] for c in SAMPLE_COLUMNS])


def write_report(out_dir, report):
    path = os.path.join(out_dir, "report.json")
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(report, f, indent=2, sort_keys=False)
        f.write("\n")
    os.replace(tmp, path)
    return path
