"""Deterministic workload generation.

Every random draw comes from a numpy ``Generator`` seeded from the run seed
and the phase index, so an op stream is bit-identical for a given
``(spec, seed)``.  Values are not stored: a value is a window into a fixed
random buffer chosen by ``(key, version)``, so a reader can recompute what
any write put there.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from ..options import Options, format_size, parse_config, parse_size, read_config

ZIPF_THETA = 0.99
PARETO_SHAPE = 0.2
MAX_VALUE = 1 << 20
MIXED_SMALL = (100, 512)
MIXED_LARGE = 16 << 10

PHASES = ("load", "update", "read", "scan") + tuple("ycsb-" + c for c in "abcdef")

# canonical YCSB core workloads: (read, update, insert, scan, read-modify-write)
YCSB_MIX = {
    "a": (0.50, 0.50, 0.0, 0.0, 0.0),
    "b": (0.95, 0.05, 0.0, 0.0, 0.0),
    "c": (1.00, 0.0, 0.0, 0.0, 0.0),
    "d": (0.95, 0.0, 0.05, 0.0, 0.0),
    "e": (0.0, 0.0, 0.05, 0.95, 0.0),
    "f": (0.50, 0.0, 0.0, 0.0, 0.50),
}

OP_READ, OP_UPDATE, OP_INSERT, OP_SCAN, OP_RMW, OP_DELETE = range(6)
OP_NAMES = ("read", "update", "insert", "scan", "rmw", "delete")


# ----------------------------------------------------------------------
# value sizes
def _pareto_raw(u, scale):
    return scale / PARETO_SHAPE * ((1.0 - u) ** -PARETO_SHAPE - 1.0)


def _clamp_sizes(x):
    return np.clip(np.ceil(x), 1, MAX_VALUE).astype(np.int64)


@functools.lru_cache(maxsize=None)
def pareto_scale(target_mean=1024.0, samples=1 << 20, seed=12345):
    """Scale of the generalized Pareto (shape 0.2) whose clamped, rounded-up
    mean is ``target_mean``, found by bisection on one fixed Monte-Carlo draw."""
    u = np.random.default_rng(seed).random(samples)
    lo, hi = 1.0, 4.0 * target_mean
    for _ in range(60):
        mid = (lo + hi) / 2
        if _clamp_sizes(_pareto_raw(u, mid)).mean() < target_mean:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def parse_value_dist(name):
    """``fixed-8k``/``fixed-8192``, ``mixed-8k`` or ``pareto-1k``."""
    name = name.strip().lower()
    if name in ("mixed-8k", "pareto-1k"):
        return name
    if name.startswith("fixed-"):
        size = parse_size(name[6:])
        if not 1 <= size <= MAX_VALUE:
            raise ValueError("fixed value size out of range: %r" % name)
        return "fixed-%d" % size
    raise ValueError("unknown value distribution %r" % name)


def value_sizes(dist, rng, n):
    dist = parse_value_dist(dist)
    if dist == "mixed-8k":
        small = rng.integers(MIXED_SMALL[0], MIXED_SMALL[1] + 1, n)
        return np.where(rng.random(n) < 0.5, small, MIXED_LARGE).astype(np.int64)
    if dist == "pareto-1k":
        return _clamp_sizes(_pareto_raw(rng.random(n), pareto_scale()))
    return np.full(n, int(dist[6:]), dtype=np.int64)


def mean_value_size(dist):
    dist = parse_value_dist(dist)
    if dist == "mixed-8k":
        return (sum(MIXED_SMALL) / 2 + MIXED_LARGE) / 2
    if dist == "pareto-1k":
        return 1024.0
    return float(dist[6:])


# ----------------------------------------------------------------------
# key choice
_FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)


def fnv_scramble(x):
    """FNV-1a over the 8 little-endian bytes of each element (uint64 array)."""
    x = np.asarray(x, dtype=np.uint64)
    h = np.full(x.shape, _FNV_OFFSET, dtype=np.uint64)
    with np.errstate(over="ignore"):
        for i in range(8):
            h ^= (x >> np.uint64(8 * i)) & np.uint64(0xFF)
            h *= _FNV_PRIME
    return h


class Zipfian:
    """YCSB's Zipfian generator over ``[0, n)``: rank 0 is the most popular."""

    def __init__(self, n, theta=ZIPF_THETA):
        if n < 1:
            raise ValueError("zipfian needs at least one item")
        self.n = n
        self.theta = theta
        self.zetan = float(np.sum(1.0 / np.arange(1, n + 1, dtype=np.float64) ** theta))
        self.zeta2 = 1.0 + 0.5 ** theta
        self.alpha = 1.0 / (1.0 - theta)
        self.eta = (1.0 - (2.0 / n) ** (1.0 - theta)) / (1.0 - self.zeta2 / self.zetan) if n > 1 else 0.0

    def ranks(self, rng, size):
        u = rng.random(size)
        uz = u * self.zetan
        r = (self.n * (self.eta * u - self.eta + 1.0) ** self.alpha).astype(np.int64)
        r = np.where(uz < 1.0, 0, np.where(uz < self.zeta2, 1, r))
        return np.minimum(r, self.n - 1)


class KeyChooser:
    def __init__(self, dist, n):
        self.dist = dist
        self.n = n
        self._zipf = Zipfian(n) if dist == "zipfian" and n > 0 else None

    def draw(self, rng, size):
        if self.n <= 0:
            raise ValueError("no keys loaded")
        if self._zipf is None:
            return rng.integers(0, self.n, size)
        # scrambled so hot keys spread over the key space
        return (fnv_scramble(self._zipf.ranks(rng, size)) % np.uint64(self.n)).astype(np.int64)

    def latest(self, rng, size, counts):
        """YCSB-D ``latest``: Zipfian over recency, so the newest insert is the
        most popular; ``counts`` holds the key count at each op."""
        z = Zipfian(max(1, int(counts.max())))
        return np.maximum(counts - 1 - z.ranks(rng, size), 0)


def make_key(i, key_size=24):
    digits = key_size - 4
    if digits < 1 or i >= 10 ** digits:
        raise ValueError("key index %d does not fit in %d bytes" % (i, key_size))
    return b"user%0*d" % (digits, i)


# ----------------------------------------------------------------------
# values
_POOL_SIZE = 1 << 22


@functools.lru_cache(maxsize=None)
def _value_pool():
    return np.random.default_rng(0x5EED).integers(0, 256, _POOL_SIZE + MAX_VALUE, dtype=np.uint8).tobytes()


def make_value(key_index, version, size):
    """Deterministic value for write number ``version`` of key ``key_index``."""
    h = (key_index * 0x9E3779B97F4A7C15 + version * 0xC2B2AE3D27D4EB4F) & 0xFFFFFFFFFFFFFFFF
    off = (h >> 11) % _POOL_SIZE
    return _value_pool()[off:off + size]


# ----------------------------------------------------------------------
# spec
@dataclass
class PhaseSpec:
    kind: str
    ops: int = 0  # op count (0: derived from bytes)
    bytes: int = 0  # value bytes to write (load/update)


@dataclass
class WorkloadSpec:
    phases: list
    dataset_size: int = 2 << 30
    update_bytes: int = 6 << 30
    read_ops: int = 100_000
    scan_ops: int = 10_000
    ycsb_ops: int = 100_000
    key_size: int = 24
    value_dist: str = "fixed-8k"
    key_dist: str = "zipfian"
    scan_min: int = 2
    scan_max: int = 1000
    delete_fraction: float = 0.0
    workers: int = 16
    seed: int = 0
    scale: int = 50
    sample_interval: float = 1.0
    options: Options = field(default_factory=Options)
    source: dict = field(default_factory=dict)

    @property
    def load_keys(self):
        """Keys written by the load phase: enough to reach ``dataset_size``."""
        per = self.key_size + mean_value_size(self.value_dist)
        return max(1, int(round(self.dataset_size / per)))

    def phase_plan(self):
        out = []
        for p in self.phases:
            if p == "load":
                out.append(PhaseSpec(p, ops=self.load_keys))
            elif p == "update":
                out.append(PhaseSpec(p, bytes=self.update_bytes))
            elif p == "read":
                out.append(PhaseSpec(p, ops=self.read_ops))
            elif p == "scan":
                out.append(PhaseSpec(p, ops=self.scan_ops))
            else:
                out.append(PhaseSpec(p, ops=self.ycsb_ops))
        return out


WORKLOAD_KEYS = {
    "phases": "list",
    "dataset_size": "size",
    "update_bytes": "size",
    "read_ops": "int",
    "scan_ops": "int",
    "ycsb_ops": "int",
    "key_size": "int",
    "value_dist": "str",
    "key_dist": "str",
    "scan_min": "int",
    "scan_max": "int",
    "delete_fraction": "float",
    "workers": "int",
    "seed": "int",
    "scale": "int",
    "sample_interval": "float",
}


def spec_from_dict(raw, seed=None):
    """Split a key=value mapping into workload fields and engine options.

    Engine options start from the desk-scale defaults (``scale`` = 50 divides
    every byte volume) and are then overridden by any engine key present.
    """
    kw = {}
    engine = {}
    for key, val in raw.items():
        t = WORKLOAD_KEYS.get(key)
        if t is None:
            engine[key] = val
            continue
        if t == "list":
            kw[key] = [s.strip() for s in str(val).split(",") if s.strip()]
        elif t == "size":
            kw[key] = parse_size(val)
        elif t == "int":
            kw[key] = int(val)
        elif t == "float":
            kw[key] = float(val)
        else:
            kw[key] = str(val).strip()
    if "phases" not in kw:
        raise ValueError("workload spec needs a 'phases' key")
    for p in kw["phases"]:
        if p not in PHASES:
            raise ValueError("unknown phase %r" % p)
    if seed is not None:
        kw["seed"] = seed
    scale = kw.get("scale", 50)
    if scale < 1:
        raise ValueError("scale must be >= 1")
    from ..options import desk_scale
    base = desk_scale(scale) if scale > 1 else Options()
    opts, unused = Options.from_dict({**base.to_dict(), **engine}, strict=True)
    spec = WorkloadSpec(options=opts, source=dict(raw), **kw)
    spec.value_dist = parse_value_dist(spec.value_dist)
    if spec.key_dist not in ("zipfian", "uniform"):
        raise ValueError("key_dist must be zipfian or uniform")
    if not 1 <= spec.scan_min <= spec.scan_max:
        raise ValueError("bad scan length range")
    if spec.workers < 1:
        raise ValueError("workers must be >= 1")
    return spec


def load_spec(path, seed=None):
    return spec_from_dict(read_config(path), seed)


def parse_spec(text, seed=None):
    return spec_from_dict(parse_config(text), seed)


# ----------------------------------------------------------------------
# presets
def _preset_text(value_dist, phases, extra=""):
    return (
        "# desk scale: every byte volume of the full-size setup divided by 50\n"
        "phases = %s\n"
        "value_dist = %s\n"
        "key_dist = zipfian\n"
        "dataset_size = 2GB\n"
        "update_bytes = 6GB\n"
        "workers = 16\n"
        "space_limit_multiplier = 1.5\n%s" % (phases, value_dist, extra)
    )


def presets():
    out = {
        "mixed-8k": _preset_text("mixed-8k", "load,update"),
        "pareto-1k": _preset_text("pareto-1k", "load,update"),
    }
    for kb in (1, 2, 4, 8, 16, 32):
        out["fixed-%dk" % kb] = _preset_text("fixed-%dk" % kb, "load,update")
    for c in "abcdef":
        out["ycsb-" + c] = _preset_text("mixed-8k", "load,ycsb-" + c, "ycsb_ops = 100000\n")
    return out


# ----------------------------------------------------------------------
# op streams
def phase_rng(seed, phase_index):
    return np.random.default_rng([seed, phase_index])


def generate_phase(spec, phase_index, loaded, batch=8192):
    """Op batches ``(kinds, keys, sizes, lengths)`` for one phase.

    ``loaded`` is the number of keys present when the phase starts; inserts
    append new key indices after it.
    """
    ph = spec.phase_plan()[phase_index]
    rng = phase_rng(spec.seed, phase_index)
    chooser = KeyChooser(spec.key_dist, loaded)
    if ph.kind == "load":
        order = rng.permutation(ph.ops).astype(np.int64) + loaded
        for s in range(0, ph.ops, batch):
            keys = order[s:s + batch]
            n = len(keys)
            yield np.full(n, OP_INSERT, np.int8), keys, value_sizes(spec.value_dist, rng, n), np.zeros(n, np.int64)
        return
    if ph.kind == "update":
        written = 0
        while written < ph.bytes:
            sizes = value_sizes(spec.value_dist, rng, batch)
            csum = np.cumsum(sizes)
            n = int(np.searchsorted(csum, ph.bytes - written, side="left")) + 1
            n = min(n, batch)
            sizes = sizes[:n]
            keys = chooser.draw(rng, n)
            kinds = np.full(n, OP_UPDATE, np.int8)
            if spec.delete_fraction > 0:
                kinds[rng.random(n) < spec.delete_fraction] = OP_DELETE
            written += int(sizes[kinds == OP_UPDATE].sum())
            if not (kinds == OP_UPDATE).any():
                written += 1  # all-delete batch still makes progress
            yield kinds, keys, sizes, np.zeros(n, np.int64)
        return
    if ph.kind in ("read", "scan"):
        for s in range(0, ph.ops, batch):
            n = min(batch, ph.ops - s)
            keys = chooser.draw(rng, n)
            if ph.kind == "read":
                yield np.full(n, OP_READ, np.int8), keys, np.zeros(n, np.int64), np.zeros(n, np.int64)
            else:
                lengths = rng.integers(spec.scan_min, spec.scan_max + 1, n)
                yield np.full(n, OP_SCAN, np.int8), keys, np.zeros(n, np.int64), lengths
        return
    mix = np.cumsum(YCSB_MIX[ph.kind[-1]])
    count = loaded
    for s in range(0, ph.ops, batch):
        n = min(batch, ph.ops - s)
        kinds = np.searchsorted(mix, rng.random(n) * mix[-1], side="right").astype(np.int8)
        kinds = np.minimum(kinds, OP_RMW)
        keys = np.empty(n, np.int64)
        inserts = kinds == OP_INSERT
        ni = int(inserts.sum())
        keys[inserts] = count + np.arange(ni)
        others = ~inserts
        no = int(others.sum())
        if no:
            if ph.kind == "ycsb-d":
                counts = count + np.cumsum(inserts) - inserts
                keys[others] = chooser.latest(rng, no, counts[others])
            else:
                keys[others] = chooser.draw(rng, no)
        count += ni
        sizes = value_sizes(spec.value_dist, rng, n)
        lengths = rng.integers(spec.scan_min, spec.scan_max + 1, n)
        yield kinds, keys, sizes, lengths


def describe(spec):
    """Human summary of a spec (used by ``bench presets --show``)."""
    return {
        "phases": list(spec.phases),
        "value_dist": spec.value_dist,
        "key_dist": spec.key_dist,
        "dataset_size": format_size(spec.dataset_size),
        "update_bytes": format_size(spec.update_bytes),
        "load_keys": spec.load_keys,
        "workers": spec.workers,
    }
