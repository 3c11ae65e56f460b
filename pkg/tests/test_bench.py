import csv
import json
import os

import numpy as np
import pytest

from sepkv.bench import workload as wl
from sepkv.bench.runner import run
from sepkv.options import parse_size


def _fnv64_le(x):
    h = 0xCBF29CE484222325
    for b in int(x).to_bytes(8, "little"):
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def test_fnv_scramble_matches_bytewise_reference():
    xs = [0, 1, 255, 256, 123456789, 2 ** 63 + 5]
    got = wl.fnv_scramble(np.array(xs, dtype=np.uint64))
    assert [int(g) for g in got] == [_fnv64_le(x) for x in xs]


def test_zipf_head_probabilities():
    n = 1000
    z = wl.Zipfian(n)
    zetan = sum(1.0 / i ** 0.99 for i in range(1, n + 1))
    r = z.ranks(np.random.default_rng(3), 400_000)
    assert r.min() >= 0 and r.max() < n
    assert np.mean(r == 0) == pytest.approx(1 / zetan, abs=0.005)
    assert np.mean(r == 1) == pytest.approx(2 ** -0.99 / zetan, abs=0.005)


def test_key_chooser_spreads_hot_keys():
    ch = wl.KeyChooser("zipfian", 100_000)
    keys = ch.draw(np.random.default_rng(0), 50_000)
    # the hottest key is not simply index 0
    vals, counts = np.unique(keys, return_counts=True)
    assert vals[np.argmax(counts)] != 0
    assert keys.max() < 100_000


def test_value_distribution_means():
    rng = np.random.default_rng(11)
    mixed = wl.value_sizes("mixed-8k", rng, 400_000)
    assert set(np.unique(mixed[mixed > 512])) == {16384}
    assert mixed[mixed <= 512].min() >= 100
    assert mixed.mean() == pytest.approx((306 + 16384) / 2, rel=0.01)
    pareto = wl.value_sizes("pareto-1k", rng, 400_000)
    assert pareto.min() >= 1 and pareto.max() <= 1 << 20
    assert pareto.mean() == pytest.approx(1024, rel=0.03)
    assert (wl.value_sizes("fixed-4k", rng, 10) == 4096).all()


def test_make_key_and_value_are_deterministic():
    assert wl.make_key(7) == b"user" + b"0" * 19 + b"7"
    assert len(wl.make_key(123)) == 24
    assert wl.make_value(5, 2, 100) == wl.make_value(5, 2, 100)
    assert wl.make_value(5, 2, 100) != wl.make_value(5, 3, 100)
    with pytest.raises(ValueError):
        wl.make_key(10 ** 20)


def test_spec_parsing_and_validation():
    spec = wl.parse_spec("phases = load,update\nvalue_dist = fixed-1k\ndataset_size = 1MB\nmemtable_size = 64KB\n")
    assert spec.phases == ["load", "update"]
    assert spec.options.memtable_size == 64 << 10
    assert spec.load_keys == round(parse_size("1MB") / (24 + 1024))
    with pytest.raises(ValueError):
        wl.parse_spec("value_dist = fixed-1k\n")
    with pytest.raises(ValueError):
        wl.parse_spec("phases = load\nno_such_option = 3\n")
    with pytest.raises(ValueError):
        wl.parse_spec("phases = warmup\n")


def test_every_preset_parses():
    ps = wl.presets()
    for name in ("mixed-8k", "pareto-1k", "fixed-8k", "ycsb-a", "ycsb-f"):
        assert name in ps
    for text in ps.values():
        spec = wl.parse_spec(text)
        assert spec.options.space_limit_multiplier == 1.5


def _drain(spec, idx, loaded):
    parts = list(wl.generate_phase(spec, idx, loaded, batch=1000))
    return [np.concatenate([p[i] for p in parts]) for i in range(4)]


def test_load_writes_every_key_once():
    spec = wl.parse_spec("phases = load\nvalue_dist = fixed-1k\ndataset_size = 2MB\n")
    kinds, keys, sizes, _ = _drain(spec, 0, 0)
    assert sorted(keys.tolist()) == list(range(spec.load_keys))
    assert (kinds == wl.OP_INSERT).all()


def test_update_phase_hits_byte_target():
    spec = wl.parse_spec("phases = load,update\nvalue_dist = mixed-8k\ndataset_size = 2MB\nupdate_bytes = 3MB\n")
    kinds, keys, sizes, _ = _drain(spec, 1, spec.load_keys)
    total = int(sizes.sum())
    assert 3 << 20 <= total < (3 << 20) + 16384
    assert keys.max() < spec.load_keys


@pytest.mark.parametrize("c", list("abcdef"))
def test_ycsb_mix_proportions(c):
    spec = wl.parse_spec("phases = load,ycsb-%s\nvalue_dist = fixed-1k\ndataset_size = 1MB\nycsb_ops = 40000\n" % c)
    kinds, keys, _, _ = _drain(spec, 1, 1000)
    want = wl.YCSB_MIX[c]
    for op in range(5):
        assert np.mean(kinds == op) == pytest.approx(want[op], abs=0.01)
    ins = keys[kinds == wl.OP_INSERT]
    assert (np.diff(ins) == 1).all() if len(ins) > 1 else True


def test_streams_are_reproducible():
    text = "phases = load,update\nvalue_dist = pareto-1k\ndataset_size = 1MB\nupdate_bytes = 1MB\n"
    a = _drain(wl.parse_spec(text, seed=4), 1, 900)
    b = _drain(wl.parse_spec(text, seed=4), 1, 900)
    c = _drain(wl.parse_spec(text, seed=5), 1, 900)
    assert all((x == y).all() for x, y in zip(a, b))
    assert not (a[1][:50] == c[1][:50]).all()


SMALL_RUN = """\
phases = load,update,read,scan,ycsb-a
value_dist = mixed-8k
dataset_size = 1MB
update_bytes = 2MB
read_ops = 500
scan_ops = 50
ycsb_ops = 500
workers = 2
memtable_size = 64KB
ksst_size = 32KB
vsst_size = 256KB
level_base_size = 128KB
block_cache = 1MB
background_threads = 0
"""


def test_end_to_end_run_writes_all_artifacts(tmp_path):
    spec = wl.parse_spec(SMALL_RUN, seed=1)
    report, clean = run(spec, str(tmp_path / "db"), str(tmp_path / "out"))
    assert clean
    out = tmp_path / "out"
    for name in ("report.json", "stats.csv", "samples.csv", "gc.log", "scheduler.log"):
        assert (out / name).exists(), name
    rep = json.loads((out / "report.json").read_text())
    assert [p["phase"] for p in rep["phases"]] == ["load", "update", "read", "scan", "ycsb-a"]
    for p in rep["phases"]:
        assert {"p50_us", "p99_us", "p999_us"} <= set(p["latency"])
        assert p["ops"] > 0
    assert rep["phases"][2]["op_counts"]["read"] == 500
    with open(out / "stats.csv") as f:
        head = next(csv.reader(f))
    assert head == ["timestamp", "S_index", "G_E/D", "S_value(model)", "S_value(measured)", "stall"]
    for line in (out / "gc.log").read_text().splitlines():
        rec = json.loads(line)
        assert rec["event"] == "gc_job"
    sched = (out / "scheduler.log").read_text().splitlines()
    assert sched and all("max_gc" in json.loads(s) for s in sched)
