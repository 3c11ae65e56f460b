"""Engine options and the ``key = value`` config file format.

Sizes accept binary suffixes (``64MB``, ``1.28MB``, ``32KB``); booleans accept
``true/false``, ``on/off``, ``yes/no`` and ``1/0``.  Lines starting with ``#``
are comments.  The same format carries benchmark workload keys; callers that
mix the two pass ``strict=False`` and pick up the leftovers.
"""
from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, fields

KB = 1024
MB = 1024 * KB
GB = 1024 * MB

_UNITS = {"": 1, "b": 1, "k": KB, "kb": KB, "kib": KB, "m": MB, "mb": MB, "mib": MB,
          "g": GB, "gb": GB, "gib": GB, "t": 1024 * GB, "tb": 1024 * GB}
_SIZE_RE = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*([a-zA-Z]*)\s*$")


def parse_size(text):
    if isinstance(text, (int, float)):
        return int(text)
    m = _SIZE_RE.match(str(text))
    if not m or m.group(2).lower() not in _UNITS:
        raise ValueError("bad size %r" % text)
    return int(round(float(m.group(1)) * _UNITS[m.group(2).lower()]))


def parse_bool(text):
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "on", "yes"):
        return True
    if t in ("0", "false", "off", "no"):
        return False
    raise ValueError("bad boolean %r" % text)


def format_size(n):
    for unit, scale in (("GB", GB), ("MB", MB), ("KB", KB)):
        if n >= scale and (n * 100) % scale == 0:
            v = n / scale
            return ("%.2f" % v).rstrip("0").rstrip(".") + unit
    return str(n)


@dataclass
class Options:
    # sizes
    memtable_size: int = 64 * MB
    ksst_size: int = 64 * MB
    vsst_size: int = 256 * MB
    block_cache: int = 1 * GB
    block_size: int = 32 * KB
    level_base_size: int = 256 * MB
    # separation / GC
    separation_threshold: int = 512
    gc_garbage_ratio: float = 0.2
    gc_readahead: bool = True
    hotspot_aware: bool = True
    dropcache_fraction: float = 0.01
    dropcache_min_keys: int = 1000
    # compaction
    compensated_compaction: bool = True
    level_multiplier: int = 10
    num_levels: int = 7
    l0_trigger: int = 4
    l0_stop_trigger: int = 20
    max_immutable_memtables: int = 2
    dtable_layout: str = "separated"
    bloom_bits_per_key: int = 10
    # scheduling
    background_threads: int = 16
    dynamic_gc_threads: bool = True
    space_limit_multiplier: float = 1.5
    dataset_size: int = 0
    device_write_budget: int = 0
    device_read_budget: int = 0
    throttle_step: float = 0.2
    busy_threshold: float = 0.8
    dip_threshold: float = 0.2
    rate_floor: int = 1 * MB
    telemetry_window: float = 1.0
    # durability / plumbing
    wal_fsync: bool = False
    manifest_max_size: int = 4 * MB
    stats_csv: str = ""
    gc_log: str = ""
    scheduler_log: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.dtable_layout not in ("separated", "interleaved"):
            raise ValueError("dtable_layout must be 'separated' or 'interleaved'")
        if not 0 <= self.gc_garbage_ratio < 1:
            raise ValueError("gc_garbage_ratio must be in [0, 1)")
        if self.level_multiplier < 2:
            raise ValueError("level_multiplier must be >= 2")
        if self.num_levels < 2:
            raise ValueError("num_levels must be >= 2")
        if self.memtable_size <= 0 or self.ksst_size <= 0 or self.vsst_size <= 0:
            raise ValueError("table and memtable sizes must be positive")
        if self.background_threads < 0:
            raise ValueError("background_threads must be >= 0")

    @property
    def space_limit(self):
        """Bytes at which user writes stall; 0 when the guard is disabled."""
        if self.space_limit_multiplier <= 0 or self.dataset_size <= 0:
            return 0
        return int(self.space_limit_multiplier * self.dataset_size)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, raw, strict=True):
        """Build options from string values; returns ``(options, unused_keys)``."""
        kw = {}
        unused = {}
        types = {f.name: f.type for f in fields(cls)}
        for key, value in raw.items():
            k = key.strip().lower().replace("-", "_")
            t = types.get(k)
            if t is None:
                if strict:
                    raise ValueError("unknown option %r" % key)
                unused[key] = value
                continue
            try:
                if t == "int":
                    kw[k] = parse_size(value)
                elif t == "float":
                    kw[k] = float(value)
                elif t == "bool":
                    kw[k] = parse_bool(value)
                else:
                    kw[k] = str(value).strip()
            except ValueError as exc:
                raise ValueError("option %s: %s" % (key, exc)) from None
        return cls(**kw), unused

    def to_dict(self):
        return dataclasses.asdict(self)

    def dump(self):
        lines = []
        for k, v in self.to_dict().items():
            if isinstance(v, bool):
                v = "true" if v else "false"
            lines.append("%s = %s" % (k, v))
        return "\n".join(lines) + "\n"


def read_config(path):
    """Parse a ``key = value`` file into an ordered dict of raw strings."""
    with open(path) as f:
        return parse_config(f.read(), path)


def parse_config(text, source="<config>"):
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError("%s:%d: expected key = value" % (source, lineno))
        k, v = line.split("=", 1)
        raw[k.strip()] = v.strip()
    return raw


def load_options(path, strict=True):
    """Options from a ``key = value`` file; unknown keys are an error when ``strict``."""
    return Options.from_dict(read_config(path), strict=strict)[0]


FULL_SCALE = Options()


def desk_scale(scale=50, **overrides):
    """Every byte volume divided by ``scale`` (ratios preserved)."""
    base = Options()
    opts = base.replace(
        memtable_size=base.memtable_size // scale,
        ksst_size=base.ksst_size // scale,
        vsst_size=base.vsst_size // scale,
        block_cache=base.block_cache // scale,
        level_base_size=base.level_base_size // scale,
    )
    return opts.replace(**overrides) if overrides else opts
