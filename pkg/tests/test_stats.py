import pytest

from sepkv.stats import (CSV_COLUMNS, SpaceStats, StatsCsvWriter, hidden_garbage_estimate, index_space_amp,
                         measured_space_amp, read_stats_csv, value_space_amp)

GB = 1 << 30
MB = 1 << 20


def test_index_space_amp_examples():
    assert index_space_amp(0.11 * 1000, 1000) == pytest.approx(1.11)
    assert index_space_amp(0, 1000) == 1.0
    assert index_space_amp(500 * MB, 2000 * MB) == pytest.approx(1.25)
    assert index_space_amp(10, 0) == 1.0


def test_hidden_garbage_examples():
    assert hidden_garbage_estimate(100, 1000, 100 * GB) == pytest.approx(10 * GB)
    assert hidden_garbage_estimate(0, 1000, 100 * GB) == 0


def test_value_space_amp_examples():
    assert value_space_amp(25, 100, 1.11) == pytest.approx(1.36)
    assert value_space_amp(0, 100, 1.0) == 1.0
    assert value_space_amp(5, 0, 1.3) == 1.0
    # at the GC trigger point with an ideal index
    assert value_space_amp(0.25, 1.0, 1.11) == pytest.approx(1.25 + 0.11)


def test_measured_space_amp():
    assert measured_space_amp(150 * GB, 100 * GB) == pytest.approx(1.5)


def test_bootstrap_flags_and_identity():
    s = SpaceStats(0.0, k_upper=10, k_last=0, g_exposed=0, d=0, vsst_bytes=0, nonempty_levels=1,
                   disk_usage=100, dataset_bytes=0)
    assert s.index_bootstrap and s.value_bootstrap
    assert s.s_index == 1.0 and s.s_value == 1.0
    s = SpaceStats(0.0, k_upper=110, k_last=1000, g_exposed=300, d=1200, vsst_bytes=1500, nonempty_levels=3,
                   disk_usage=3000, dataset_bytes=2000)
    assert s.s_value - s.s_index == pytest.approx(s.g_exposed / s.d)
    assert s.s_measured == pytest.approx(1.5)


def test_csv_roundtrip(tmp_path):
    path = str(tmp_path / "stats.csv")
    w = StatsCsvWriter(path)
    s = SpaceStats(12.5, k_upper=110, k_last=1000, g_exposed=300, d=1200, vsst_bytes=1500, nonempty_levels=3,
                   disk_usage=3000, dataset_bytes=2000, stall=True)
    w.write(s)
    w.close()
    head = open(path).readline().strip().split(",")
    assert tuple(head) == CSV_COLUMNS
    assert head == ["timestamp", "S_index", "G_E/D", "S_value(model)", "S_value(measured)", "stall"]
    rows = read_stats_csv(path)
    assert len(rows) == 1
    assert float(rows[0]["S_index"]) == pytest.approx(1.11)
    assert float(rows[0]["S_value(measured)"]) == pytest.approx(1.5)
    assert rows[0]["stall"] == "1"
