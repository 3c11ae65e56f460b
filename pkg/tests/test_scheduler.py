import math
import random

import pytest

from sepkv.scheduler import (RateLimiter, SpaceGuard, ThreadBudget, compute_pressures, ideal_index_amp,
                             max_gc_threads)

GB = 1 << 30
MB = 1 << 20


def test_pressure_examples():
    assert compute_pressures(1.11, 10, 3, 0, 1, 0.2).p_index == pytest.approx(0.0)
    assert compute_pressures(1.0, 10, 1, 25, 100, 0.2).p_value == pytest.approx(0.0)
    assert compute_pressures(1.5, 10, 2, 0, 1, 0.2).p_index == pytest.approx(0.4)
    assert ideal_index_amp(10, 3) == pytest.approx(1.11)


def test_max_gc_examples():
    assert max_gc_threads(12, (0.3, 0.3)) == 6
    assert max_gc_threads(16, (1.0, 3.0)) == 12
    assert max_gc_threads(16, (0.5, 0.0)) == 1
    assert max_gc_threads(16, (0.0, 0.5)) == 15
    assert max_gc_threads(16, (0.0, 0.0)) == 8


def test_thread_budget_admission():
    b = ThreadBudget(4)
    b.publish(1)
    assert b.try_acquire("gc")
    assert not b.try_acquire("gc")
    assert b.try_acquire("gc", boost=True)
    assert b.try_acquire("compaction")
    assert b.try_acquire("compaction")
    assert not b.try_acquire("compaction")
    assert b.try_acquire("flush")  # flushes are never refused
    b.release("flush")
    b.release("gc")
    assert b.try_acquire("compaction")


def test_rate_limiter_contention_and_recovery():
    rl = RateLimiter(write_budget=1000 * MB)
    rl.on_window(500 * MB, 100 * MB)  # establishes the flush average
    assert rl.cap["write"] == 1000 * MB
    rl.on_window(850 * MB, 60 * MB)  # busy and flush dipped
    assert rl.cap["write"] == pytest.approx(800 * MB)
    rl.on_window(850 * MB, 50 * MB)
    assert rl.cap["write"] == pytest.approx(640 * MB)
    # three calm windows
    for _ in range(3):
        rl.on_window(100 * MB, 100 * MB)
    assert rl.cap["write"] >= 1000 * MB * 0.8
    assert rl.cap["write"] <= 1000 * MB


def test_rate_limiter_no_change_when_not_busy():
    rl = RateLimiter(write_budget=1000 * MB)
    rl.on_window(500 * MB, 100 * MB)
    rl.on_window(500 * MB, 10 * MB)
    assert rl.cap["write"] == 1000 * MB


def test_rate_limiter_disabled_budget():
    rl = RateLimiter()
    assert rl.request(10 * MB) == 0.0
    rl.on_window(10 * GB, 0)
    assert rl.cap["write"] == 0


def test_rate_limiter_throttles_bytes():
    rl = RateLimiter(write_budget=100 * MB)
    waited = sum(rl.request(5 * MB) for _ in range(4))
    assert waited == pytest.approx(0.2, abs=0.05)


def test_space_guard_hysteresis():
    g = SpaceGuard(150 * GB, 256 * MB)
    assert not g.update(149 * GB)
    assert g.update(151 * GB)
    assert g.update(150 * GB - 100 * MB)  # inside the hysteresis band
    assert not g.update(150 * GB - 300 * MB)
    off = SpaceGuard(0, 256 * MB)
    assert not off.update(10 ** 15)


def _ref_pressures(s_index, T, L, ge, d, rg):
    ideal = 1 + sum(T ** -i for i in range(1, L))
    pi = max(0.0, s_index - ideal)
    pv = max(0.0, ge / d - rg / (1 - rg)) if d > 0 else 0.0
    return pi, pv


def _ref_max_gc(n, pi, pv):
    if pi + pv == 0:
        return n // 2
    return min(n - 1, max(1, math.floor(n * pv / (pi + pv) + 0.5)))


def test_randomized_against_direct_formulas():
    rng = random.Random(2024)
    for _ in range(50):
        s_index = 1 + rng.random()
        T = rng.choice([4, 8, 10, 12])
        L = rng.randrange(1, 7)
        d = rng.randrange(1, 10 ** 12)
        ge = rng.randrange(0, d)
        rg = rng.uniform(0.05, 0.5)
        n = rng.randrange(2, 33)
        p = compute_pressures(s_index, T, L, ge, d, rg)
        ref = _ref_pressures(s_index, T, L, ge, d, rg)
        assert p.p_index == pytest.approx(ref[0], abs=1e-12)
        assert p.p_value == pytest.approx(ref[1], abs=1e-12)
        assert max_gc_threads(n, p) == _ref_max_gc(n, *ref)
