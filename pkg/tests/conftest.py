import os
import sys

import pytest

from sepkv import Options
from sepkv.kernels import available_implementations


def small_options(**kw):
    """Tiny sizes so a few thousand writes exercise flush, compaction and GC."""
    base = dict(
        memtable_size=32 << 10,
        ksst_size=16 << 10,
        vsst_size=128 << 10,
        level_base_size=64 << 10,
        block_cache=2 << 20,
        background_threads=0,
        dropcache_min_keys=64,
    )
    base.update(kw)
    return Options(**base)


@pytest.fixture
def opts():
    return small_options()


@pytest.fixture
def dbdir(tmp_path):
    return str(tmp_path / "db")


@pytest.fixture(params=sorted(available_implementations()))
def impl(request):
    return available_implementations()[request.param]


def pytest_report_header(config):
    from sepkv import kernels
    return "sepkv kernels: %s (available: %s)" % (kernels.IMPLEMENTATION, ", ".join(sorted(available_implementations())))


sys.path.insert(0, os.path.dirname(__file__))


ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records one acceptance line for the summary."""
    def record(n, ok, detail):
        ACCEPTANCE[n] = (bool(ok), detail)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line("criterion %2d: %s  %s" % (n, "PASS" if ok else "FAIL", detail))
