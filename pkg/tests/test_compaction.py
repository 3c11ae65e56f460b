import random

import pytest

from sepkv import Options
from sepkv.compaction import (INF, compaction_scores, compute_level_targets, garbage_of, level_score, level_targets, merge_entries,
                              pick_compaction, table_size)
from sepkv.engine.version import TableMeta, Version
from sepkv.format.dtable import DEL, INDEX, PUT

MB = 1 << 20


def tm(number, lo, hi, phys, values=0, entries=10):
    return TableMeta(number=number, file_size=phys, sum_value_size=values, entries=entries, smallest=lo,
                     largest=hi, smallest_seq=1, largest_seq=1, refs=())


def version(levels, n=7):
    lv = [tuple(levels.get(i, ())) for i in range(n)]
    return Version(1, tuple(lv), {}, {})


def test_compensated_score_example():
    tables = [tm(i, b"k%02d" % i, b"k%02d~" % i, 1 * MB, 99 * MB) for i in range(10)]
    assert level_score(tables, 500 * MB, compensated=True) == pytest.approx(2.0)
    # compensation disabled: physical bytes only, far below the trigger
    assert level_score(tables, 500 * MB, compensated=False) == pytest.approx(0.02)
    assert level_score([], 500 * MB) == 0.0


def test_level_targets_dynamic_from_bottom():
    sizes = [0, 0, 0, 0, 0, 0, 1000 * MB]
    t = level_targets(sizes, 10, 256 * MB, 7)
    assert t.target(6) == pytest.approx(1000 * MB)
    # 1000MB exceeds the 256MB base maximum, so L5 opens at 1000/10
    assert t.base_level == 5
    assert t.target(5) == pytest.approx(100 * MB)
    assert t.target(1) == INF


def test_level_targets_large_tree():
    sizes = [0, 0, 0, 0, 30 * MB, 300 * MB, 100_000 * MB]
    t = level_targets(sizes, 10, 256 * MB, 7)
    assert t.target(6) == pytest.approx(100_000 * MB)
    assert t.target(5) == pytest.approx(10_000 * MB)
    assert t.target(4) == pytest.approx(1_000 * MB)
    # 1000MB at L4 is above the 256MB base maximum, so one more level opens
    # above it at 100MB
    assert t.base_level == 3
    assert t.target(3) == pytest.approx(100 * MB)
    for lvl in range(3, 6):
        assert t.target(lvl) == pytest.approx(t.target(lvl + 1) / 10)


def test_overfull_upper_level_does_not_move_the_bottom():
    # L4 holds twice the bottom: targets still hang off L6, so L4 scores 200
    sizes = [0, 0, 0, 0, 2000 * MB, 0, 1000 * MB]
    t = level_targets(sizes, 10, 256 * MB, 7)
    assert t.target(6) == pytest.approx(1000 * MB)
    assert t.target(4) == pytest.approx(10 * MB)
    assert sizes[4] / t.target(4) == pytest.approx(200)


def test_level_targets_empty_tree():
    t = level_targets([0] * 7, 10, 256 * MB, 7)
    assert t.base_level == 6


def test_targets_are_logical_even_without_compensation():
    # one bottom table: 1MB physical, 999MB of values
    v = version({6: [tm(1, b"a", b"z", 1 * MB, 999 * MB)], 5: [tm(2, b"a", b"m", 1 * MB, 99 * MB)]})
    on = compute_level_targets(v, Options(level_base_size=256 * MB))
    off = compute_level_targets(v, Options(level_base_size=256 * MB, compensated_compaction=False))
    assert on.targets == off.targets
    assert off.target(5) == pytest.approx(100 * MB)
    # L5 is full in logical terms but nowhere near its target physically
    assert compaction_scores(v, Options(level_base_size=256 * MB))[5] == pytest.approx(1.0)
    assert compaction_scores(v, Options(level_base_size=256 * MB, compensated_compaction=False))[5] == \
        pytest.approx(0.01)


def test_pick_prefers_highest_score():
    opts = Options(level_base_size=10 * MB, l0_trigger=4)
    # L5 well over its target, L0 at half its trigger
    v = version({
        0: [tm(20, b"a", b"z", MB), tm(21, b"a", b"z", MB)],
        5: [tm(1, b"a", b"m", 1 * MB, 30 * MB)],
        6: [tm(2, b"a", b"z", 1 * MB, 99 * MB)],
    })
    scores = compaction_scores(v, opts)
    assert scores[0] == 0.5
    job = pick_compaction(v, opts)
    assert job.level == 5 and job.output_level == 6
    assert [t.number for t in job.next_inputs] == [2]
    assert job.bottommost


def test_pick_largest_compensated_file():
    opts = Options(level_base_size=10 * MB)
    big = tm(3, b"a", b"c", 1 * MB, 149 * MB)
    small = tm(4, b"d", b"f", 10 * MB, 80 * MB)
    v = version({5: [big, small], 6: [tm(9, b"a", b"z", MB, 300 * MB)]})
    assert table_size(big, True) > table_size(small, True)
    assert pick_compaction(v, opts).inputs == [big]
    # compensation off: physical bytes decide
    off = opts.replace(compensated_compaction=False, level_base_size=1)
    v2 = version({5: [big, small], 6: [tm(9, b"a", b"z", 100 * MB)]})
    assert pick_compaction(v2, off).inputs == [small]


def test_busy_tables_excluded_and_disjoint_jobs_coexist():
    opts = Options(level_base_size=1 * MB, l0_trigger=1)
    v = version({
        4: [tm(1, b"a", b"c", MB, 20 * MB), tm(2, b"x", b"z", MB, 20 * MB)],
        5: [tm(3, b"a", b"c", MB, 30 * MB), tm(4, b"x", b"z", MB, 30 * MB)],
        6: [tm(5, b"a", b"z", MB, 500 * MB)],
    })
    first = pick_compaction(v, opts)
    assert first is not None
    second = pick_compaction(v, opts, busy=first.input_numbers)
    assert second is not None
    assert not (first.input_numbers & second.input_numbers)
    lo1, hi1 = min(t.smallest for _, t in first.all_inputs), max(t.largest for _, t in first.all_inputs)
    lo2, hi2 = min(t.smallest for _, t in second.all_inputs), max(t.largest for _, t in second.all_inputs)
    if first.output_level == second.output_level:
        assert hi1 < lo2 or hi2 < lo1


def test_trivial_move_when_no_overlap():
    opts = Options(level_base_size=1 * MB)
    v = version({5: [tm(1, b"a", b"c", MB, 20 * MB)], 6: [tm(2, b"x", b"z", MB, 10 * MB)]})
    job = pick_compaction(v, opts)
    assert job.trivial_move and job.next_inputs == []


def test_l0_takes_all_files_into_base():
    opts = Options(level_base_size=10 * MB, l0_trigger=2)
    v = version({0: [tm(7, b"a", b"b", MB), tm(6, b"c", b"d", MB)], 6: [tm(1, b"a", b"z", MB, 50 * MB)]})
    job = pick_compaction(v, opts)
    assert job.level == 0 and {t.number for t in job.inputs} == {6, 7}
    # 50MB at the bottom puts the base level one above it (5MB < 10MB)
    assert job.output_level == 5


def e(key, seq, kind, fnum=0, vsize=0, value=None):
    return (key, seq, kind, value, fnum, vsize)


def test_merge_drop_rule_example():
    older = [e(b"k", 5, INDEX, 2, 4096)]
    newer = [e(b"k", 9, INDEX, 7, 4096)]
    r = merge_entries([newer, older])
    assert r.kept == [newer[0]]
    assert r.dropped == [(b"k", 5, INDEX, 2, 4096)]
    assert garbage_of(r.dropped) == 4096


def test_merge_disjoint_is_concatenation():
    a = [e(b"a", 1, PUT, value=b"1"), e(b"c", 2, INDEX, 3, 600)]
    b = [e(b"b", 3, PUT, value=b"2"), e(b"d", 4, DEL)]
    r = merge_entries([a, b])
    assert [x[0] for x in r.kept] == [b"a", b"b", b"c", b"d"]
    assert garbage_of(r.dropped) == 0


def test_merge_tombstone_dropped_only_when_allowed():
    runs = [[e(b"k", 9, DEL)], [e(b"k", 3, INDEX, 4, 1000)]]
    kept = merge_entries(runs)
    assert kept.kept == [runs[0][0]] and kept.dropped_tombstones == 0
    dropped = merge_entries(runs, lambda k: True)
    assert dropped.kept == [] and dropped.dropped_tombstones == 1
    assert garbage_of(dropped.dropped) == 1000


def test_merge_randomized_against_brute_force():
    rng = random.Random(42)
    seq = 0
    runs = []
    truth = {}
    for _ in range(6):
        run = {}
        for _ in range(2000):
            k = b"k%05d" % rng.randrange(4000)
            seq += 1
            kind = rng.choice([PUT, INDEX, INDEX, DEL])
            ent = e(k, seq, kind, rng.randrange(1, 50) if kind == INDEX else 0,
                    rng.randrange(512, 9000) if kind == INDEX else 0, b"v" if kind == PUT else None)
            run[k] = ent
        runs.append(sorted(run.values()))
        for ent in run.values():
            truth.setdefault(ent[0], []).append(ent)
    r = merge_entries(runs)
    expect_kept = []
    expect_garbage = 0
    for k in sorted(truth):
        versions = sorted(truth[k], key=lambda x: -x[1])
        expect_kept.append(versions[0])
        expect_garbage += sum(x[5] for x in versions[1:] if x[2] == INDEX)
    assert r.kept == expect_kept
    assert garbage_of(r.dropped) == expect_garbage
