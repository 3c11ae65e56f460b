"""Micro-benchmark of the compiled kernels against the pure-Python fallback."""
from __future__ import annotations

import random
import timeit

from ..kernels import available_implementations


def _cases(impl, n_keys=2048, seed=7):
    rng = random.Random(seed)
    keys = sorted({b"user%020d" % rng.randrange(10 ** 12) for _ in range(n_keys)})
    n = len(keys)
    seqs = list(range(1, n + 1))
    kinds = [2] * n
    values = [b""] * n
    nums_a = [rng.randrange(1, 1 << 20) for _ in range(n)]
    nums_b = [rng.randrange(512, 1 << 15) for _ in range(n)]
    block = impl.encode_block(keys, seqs, kinds, values, nums_a, nums_b)
    filt = impl.bloom_build(keys, 10)
    bitmap = bytearray(rng.random() < 0.5 for _ in range(1 << 16))
    probes = keys[: n // 2] + [b"miss%020d" % i for i in range(n // 2)]

    def bloom_probe():
        for k in probes:
            impl.bloom_may_contain(filt, k)

    def varints():
        for v in nums_a:
            impl.decode_varint(impl.encode_varint(v))

    return {
        "fnv1a64 (2k keys)": lambda: [impl.fnv1a64(k) for k in keys],
        "encode_block (2k entries)": lambda: impl.encode_block(keys, seqs, kinds, values, nums_a, nums_b),
        "decode_block (2k entries)": lambda: impl.decode_block(block),
        "bloom_build (2k keys)": lambda: impl.bloom_build(keys, 10),
        "bloom_may_contain (2k probes)": bloom_probe,
        "varint round trip (2k)": varints,
        "valid_runs (64k bitmap)": lambda: impl.valid_runs(bitmap),
    }


def run_kernel_bench(repeat=5, number=3):
    """Best-of-``repeat`` seconds per call for each kernel and implementation."""
    impls = available_implementations()
    results = {}
    for name, impl in impls.items():
        for case, fn in _cases(impl).items():
            t = min(timeit.repeat(fn, repeat=repeat, number=number)) / number
            results.setdefault(case, {})[name] = t
    rows = []
    for case, times in results.items():
        row = {"kernel": case, **{k: v for k, v in times.items()}}
        if "python" in times and "cython" in times and times["cython"] > 0:
            row["speedup"] = times["python"] / times["cython"]
        rows.append(row)
    return rows


def format_rows(rows):
    lines = ["%-32s %12s %12s %9s" % ("kernel", "python(ms)", "cython(ms)", "speedup")]
    for r in rows:
        py = r.get("python")
        cy = r.get("cython")
        lines.append("%-32s %12s %12s %9s" % (
            r["kernel"],
            "%.3f" % (py * 1e3) if py is not None else "-",
            "%.3f" % (cy * 1e3) if cy is not None else "-",
            "%.1fx" % r["speedup"] if "speedup" in r else "-",
        ))
    return "\n".join(lines)
