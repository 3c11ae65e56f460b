"""Crash-injection trial shared by the crash tests and the acceptance run."""
import os
import random
import shutil

from sepkv import DB, Options
from sepkv.errors import SimulatedCrash
from sepkv.format.io import Env, FaultInjector

CRASH_OPTIONS = Options(memtable_size=16 << 10, ksst_size=8 << 10, vsst_size=64 << 10, level_base_size=32 << 10,
                        block_cache=1 << 20, background_threads=0, dropcache_min_keys=50,
                        gc_garbage_ratio=0.15)


def live_files(db):
    v = db.versions.current
    names = {os.path.basename(db._file(t.number, "ksst")) for lvl in v.levels for t in lvl}
    names |= {os.path.basename(db._file(n, "vsst")) for n in v.vssts}
    return names


def crash_trial(path, trial, ops=3000, keys=400):
    """Run a random workload that crashes at a random mutating I/O, reopen,
    and compare against the acknowledged writes.

    Returns ``(lost, orphans)``: keys whose recovered value differs from the
    last acknowledged one, and table files on disk not named by the recovered
    version.
    """
    shutil.rmtree(path, ignore_errors=True)
    rng = random.Random(trial)
    env = Env(fault=FaultInjector(rng.randrange(1, 4000), seed=trial))
    db = DB(path, CRASH_OPTIONS, env=env)
    acked = {}
    inflight = None
    try:
        for i in range(ops):
            k = b"k%04d" % rng.randrange(keys)
            v = None if rng.random() < 0.1 else bytes([i % 251]) * rng.choice([50, 700, 2000])
            inflight = (k, v)
            if v is None:
                db.delete(k)
            else:
                db.put(k, v)
            acked[k] = v
            inflight = None
        db.close()
    except SimulatedCrash:
        db.kill()
    db = DB(path, CRASH_OPTIONS)
    try:
        lost = []
        for k, v in acked.items():
            if inflight is not None and k == inflight[0]:
                # the interrupted write may or may not have landed
                if db.get(k) not in (v, inflight[1]):
                    lost.append(k)
            elif db.get(k) != v:
                lost.append(k)
        if inflight is not None and inflight[0] not in acked and db.get(inflight[0]) not in (None, inflight[1]):
            lost.append(inflight[0])
        on_disk = {f for f in os.listdir(path) if f.endswith((".ksst", ".vsst"))}
        orphans = sorted(on_disk - live_files(db))
        # everything still readable end to end
        db.scan()
    finally:
        db.close()
    return lost, orphans
