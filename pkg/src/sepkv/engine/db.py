"""The storage engine: write path, read path, background jobs and recovery.

Writes go to the WAL, then the active memtable.  A full memtable is rotated
and flushed into one L0 DTable plus at most one hot and one cold RTable.
Compaction merges DTables down the levels and reports dropped separated
entries as garbage of the value table that holds them; GC rewrites value
tables whose garbage ratio is high.  Background work runs either inline on
the writing thread (``background_threads = 0``, deterministic) or on a
thread pool.
"""
from __future__ import annotations

import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor

from .. import compaction as cp
from .. import gc as gcm
from ..errors import CorruptionError, EngineClosedError, SepKVError, SimulatedCrash
from ..format.cache import BlockCache
from ..format.dtable import DEL, INDEX, PUT, DTable, DTableBuilder
from ..format.io import Env, io_category
from ..format.rtable import RTable, RTableBuilder
from ..options import Options
from ..scheduler import Scheduler
from ..stats import StatsCsvWriter, compute_space_stats
from .memtable import Memtable
from .version import TableMeta, VersionEdit, VersionSet, VsstMeta
from .wal import WalWriter, read_wal

log = logging.getLogger("sepkv")

KSST = "ksst"
VSST = "vsst"
WAL = "wal"


class DB:
    def __init__(self, path, options=None, env=None, create_if_missing=True):
        self.path = os.path.abspath(path)
        self.options = options if options is not None else Options()
        opts = self.options
        self.env = env if env is not None else Env(use_fsync=opts.wal_fsync)
        self.mutex = threading.RLock()
        self._cv = threading.Condition(self.mutex)
        self.cache = BlockCache(opts.block_cache)
        self.versions = VersionSet(self.env, self.path, opts.num_levels, opts.manifest_max_size, self.mutex)
        self.dropcache = gcm.DropCache(opts.dropcache_min_keys)
        self.scheduler = Scheduler(opts, self.env, opts.scheduler_log)
        if opts.device_write_budget > 0 or opts.device_read_budget > 0:
            self.env.rate_limiter = self.scheduler.limiter
        self.dataset_bytes = opts.dataset_size
        self._handles = {}
        self._handles_lock = threading.Lock()
        self._busy_tables = set()
        self._busy_vssts = set()
        self._gc_watch = {}
        self._flush_running = False
        self._inline_running = False
        self._reserved = 0
        self._bg_error = None
        self._closed = False
        self.mem = None
        self.imm = []
        self.wal = None
        self._seq = 0
        self.gc_events = []
        self.job_failures = []
        self.counters = {
            "flushes": 0, "compactions": 0, "trivial_moves": 0, "forced_compactions": 0, "gc_jobs": 0,
            "gc_aborted": 0, "space_stalls": 0, "space_stall_seconds": 0.0, "space_fallbacks": 0,
            "write_stalls": 0, "puts": 0, "deletes": 0, "gets": 0, "scans": 0,
        }
        self.last_stats = None
        self._gc_log = open(opts.gc_log, "a") if opts.gc_log else None
        self._csv = StatsCsvWriter(opts.stats_csv) if opts.stats_csv else None
        self.executor = ThreadPoolExecutor(opts.background_threads, thread_name_prefix="sepkv-bg") \
            if opts.background_threads > 0 else None

        os.makedirs(self.path, exist_ok=True)
        current = os.path.join(self.path, "CURRENT")
        if os.path.exists(current):
            self._recover()
        elif create_if_missing:
            self.versions.create()
            self.env.track_directory(self.path)
            self._new_memtable()
        else:
            raise SepKVError("no database at %s" % self.path)
        # the options in force, for offline tools
        self.env.write_file_atomic(os.path.join(self.path, "OPTIONS"), opts.dump().encode(), category="manifest")
        self._publish_stats()

    # ------------------------------------------------------------------
    # files and handles
    def _file(self, number, ext):
        return self.versions.path(number, ext)

    def _dtable(self, number):
        h = self._handles.get(number)
        if h is None:
            with self._handles_lock:
                h = self._handles.get(number)
                if h is None:
                    h = self._handles[number] = DTable(self.env, self._file(number, KSST), number, self.cache)
        return h

    def _rtable(self, number):
        h = self._handles.get(number)
        if h is None:
            with self._handles_lock:
                h = self._handles.get(number)
                if h is None:
                    h = self._handles[number] = RTable(self.env, self._file(number, VSST), number, self.cache)
        return h

    def _delete_file(self, kind, number):
        with self._handles_lock:
            h = self._handles.pop(number, None)
        if h is not None:
            h.close()
        self.cache.erase_file(number)
        self.env.remove(self._file(number, kind))

    def _purge_obsolete(self):
        for kind, number in self.versions.deletable_files():
            self._delete_file(kind, number)

    # ------------------------------------------------------------------
    # recovery
    def _new_memtable(self):
        n = self.versions.new_file_number()
        self.wal = WalWriter(self.env, self._file(n, WAL), n, sync=self.options.wal_fsync)
        self.mem = Memtable(n)

    def _recover(self):
        with self.mutex, io_category("recovery"):
            vs = self.versions
            vs.recover()
            v = vs.current
            live = {t.number for _, t in v.all_tables()} | set(v.vssts)
            wals = []
            top = vs.next_file_number
            for name in sorted(os.listdir(self.path)):
                full = os.path.join(self.path, name)
                if name.endswith(".tmp"):
                    os.remove(full)
                    continue
                if name.startswith("MANIFEST-"):
                    num = int(name.split("-", 1)[1])
                    top = max(top, num + 1)
                    if num != vs.manifest_number:
                        os.remove(full)
                    continue
                stem, _, ext = name.partition(".")
                if ext not in (KSST, VSST, WAL) or not stem.isdigit():
                    continue
                num = int(stem)
                top = max(top, num + 1)
                if ext == WAL:
                    if num < vs.log_number:
                        os.remove(full)
                    else:
                        wals.append(num)
                elif num not in live:
                    # written by a job whose commit never reached the manifest
                    os.remove(full)
            vs.next_file_number = max(vs.next_file_number, top)
            for ext, nums in ((KSST, [t.number for _, t in v.all_tables()]), (VSST, list(v.vssts))):
                for num in nums:
                    if not os.path.exists(self._file(num, ext)):
                        raise CorruptionError("manifest names missing file", self._file(num, ext), "manifest")
            self.env.track_directory(self.path)
            self._seq = vs.last_seq
            self._new_memtable()
            wals.sort()
            for i, w in enumerate(wals):
                mem = Memtable(w)
                for seq, kind, key, value in read_wal(self.env, self._file(w, WAL)):
                    mem.add(seq, kind, key, value)
                    self._seq = max(self._seq, seq)
                # the next WAL (or the fresh one) stays needed until its own flush
                nxt = wals[i + 1] if i + 1 < len(wals) else self.mem.wal_number
                if len(mem):
                    edit = self._build_flush(mem, nxt)
                    self._commit(edit)
                    self.counters["flushes"] += 1
                else:
                    self._commit(VersionEdit(log_number=nxt))
                self.env.remove(self._file(w, WAL))
            if self._seq > vs.last_seq:
                self._commit(VersionEdit(last_seq=self._seq))
            self._update_dropcache_capacity()

    # ------------------------------------------------------------------
    # write path
    def _check_open(self):
        if self._closed:
            raise EngineClosedError("engine is closed")
        if self._bg_error is not None:
            raise SepKVError("background failure: %r" % (self._bg_error,))

    def put(self, key, value):
        self._write(PUT, key, value)

    def delete(self, key):
        self._write(DEL, key, None)

    def _write(self, kind, key, value):
        if not isinstance(key, (bytes, bytearray)) or not key:
            raise ValueError("keys must be non-empty bytes")
        if kind == PUT and not isinstance(value, (bytes, bytearray)):
            raise ValueError("values must be bytes")
        with self.mutex:
            self._check_open()
            self._make_room()
            seq = self._seq + 1
            self.wal.append(seq, kind, bytes(key), value)
            self._seq = seq
            self.mem.add(seq, kind, bytes(key), bytes(value) if value is not None else None)
            self.counters["puts" if kind == PUT else "deletes"] += 1
            if self.mem.approximate_size >= self.options.memtable_size:
                self._rotate()
                self._maybe_schedule()
            self.scheduler.tick(self.last_stats)

    def _rotate(self):
        if not len(self.mem):
            return
        self.wal.close()
        self.imm.append(self.mem)
        self._new_memtable()

    def _make_room(self):
        opts = self.options
        guard = self.scheduler.guard
        stall_start = None
        try:
            while True:
                self._check_open()
                if guard.limit > 0 and guard.update(self.env.usage):
                    if stall_start is None:
                        stall_start = time.perf_counter()
                        self.counters["space_stalls"] += 1
                    if self._relieve_space():
                        continue
                    # nothing left that could free space: admit rather than deadlock
                    self.counters["space_fallbacks"] += 1
                    guard.stalled = False
                    break
                if self.executor is not None:
                    l0 = len(self.versions.current.levels[0])
                    if len(self.imm) >= opts.max_immutable_memtables or l0 >= opts.l0_stop_trigger:
                        self.counters["write_stalls"] += 1
                        self._maybe_schedule()
                        self._cv.wait(0.05)
                        continue
                break
        finally:
            if stall_start is not None:
                self.counters["space_stall_seconds"] += time.perf_counter() - stall_start

    def _relieve_space(self):
        """Run (or wait for) work that frees disk space; False if none exists."""
        if self.executor is None:
            # collectable files first, then compaction to expose hidden
            # garbage; rewriting nearly clean files is the last resort
            job = (self._pick_gc(boost=True) or self._pick_compaction() or self._pick_forced_compaction()
                   or self._pick_gc(boost=True, min_ratio=0.0))
            if job is None:
                return False
            self._execute(job)
            return True
        self._maybe_schedule(boost=True)
        busy = sum(self.scheduler.budget.inflight.values())
        if busy == 0 and not self.imm:
            job = self._pick_forced_compaction() or self._pick_gc(boost=True, min_ratio=0.0)
            if job is None:
                return False
            self._submit(job)
        self._cv.wait(0.05)
        return True

    # ------------------------------------------------------------------
    # read path
    def get(self, key):
        if not key:
            raise ValueError("keys must be non-empty bytes")
        with self.mutex:
            self._check_open()
            mem, imms = self.mem, list(self.imm)
            v = self.versions.pin()
        self.counters["gets"] += 1
        try:
            with io_category("user"):
                r = mem.get(key)
                if r is None:
                    for m in reversed(imms):
                        r = m.get(key)
                        if r is not None:
                            break
                if r is not None:
                    return r[2] if r[1] == PUT else None
                for _, t in v.tables_for_key(key):
                    e = self._dtable(t.number).get(key, tag="get")
                    if e is None:
                        continue
                    if e.kind == PUT:
                        return e.value
                    if e.kind == DEL:
                        return None
                    return self._read_separated(v, key, e.file_number)
                return None
        finally:
            self._unpin(v)

    def _unpin(self, v):
        self.versions.unpin(v)
        if v.refs == 0 and v is not self.versions.current:
            with self.mutex:
                self._purge_obsolete()

    def _resolve(self, v, number, key):
        """Live value table holding ``key`` for an index entry naming ``number``."""
        if number in v.vssts:
            return number
        targets = v.inherit.get(number)
        if targets is None:
            raise CorruptionError("index entry names value table %d, which is neither live nor "
                                  "redirected" % number, None, "inheritance")
        for t in targets:
            rt = self._rtable(t)
            if rt.may_contain(key) and rt.find(key) is not None:
                return t
        raise CorruptionError("key not found in any redirect target of %d" % number, None, "inheritance")

    def _read_separated(self, v, key, number):
        target = self._resolve(v, number, key)
        rt = self._rtable(target)
        loc = rt.find(key)
        if loc is None:
            raise CorruptionError("value table %d lacks key %r" % (target, key), rt.path, "index")
        return rt.read_value(*loc)

    def scan(self, start=None, end=None, limit=None):
        """Up to ``limit`` live ``(key, value)`` pairs with start <= key < end."""
        out = []
        if limit is not None and limit <= 0:
            return out
        for kv in self.iterator(start, end):
            out.append(kv)
            if limit is not None and len(out) >= limit:
                break
        return out

    def iterator(self, start=None, end=None):
        if start is not None and end is not None and start > end:
            raise ValueError("scan start must not exceed end")
        with self.mutex:
            self._check_open()
            mem, imms = self.mem, list(self.imm)
            v = self.versions.pin()
        self.counters["scans"] += 1
        try:
            streams = [_mem_stream(mem, start)]
            streams += [_mem_stream(m, start) for m in reversed(imms)]
            for t in v.levels[0]:
                streams.append(self._dtable(t.number).entries_from(start, tag="scan"))
            for lvl in range(1, len(v.levels)):
                if v.levels[lvl]:
                    streams.append(self._level_stream(v, lvl, start))
            with io_category("user"):
                for e, _ in cp.merge_streams(streams):
                    key = e[0]
                    if end is not None and key >= end:
                        break
                    if e[2] == DEL:
                        continue
                    if e[2] == PUT:
                        yield key, e[3]
                    else:
                        yield key, self._read_separated(v, key, e[4])
        finally:
            self._unpin(v)

    def _level_stream(self, v, lvl, start):
        tables = v.levels[lvl]
        i = 0
        if start is not None:
            while i < len(tables) and tables[i].largest < start:
                i += 1
        first = True
        for t in tables[i:]:
            yield from self._dtable(t.number).entries_from(start if first else None, tag="scan")
            first = False

    # ------------------------------------------------------------------
    # background scheduling
    def _fits(self, nbytes):
        """Space admission: may a job that can grow disk usage by ``nbytes``
        before it frees anything start now?

        With a space limit, running jobs' worst-case growth is reserved so the
        total stays within the limit plus one value table.  A job is always
        admitted when nothing else runs, so background work never deadlocks.
        """
        limit = self.scheduler.guard.limit
        if limit <= 0 or self._reserved == 0:
            return True
        return self.env.usage + self._reserved + nbytes <= limit + self.options.vsst_size

    def _reserve(self, nbytes):
        self._reserved += nbytes
        return nbytes

    def _pick_flush(self):
        # flushes are never held back: their output replaces a WAL
        if self.imm and not self._flush_running and self.scheduler.budget.try_acquire("flush"):
            self._flush_running = True
            mem = self.imm[0]
            return ("flush", mem, self._reserve(mem.approximate_size))
        return None

    def _pick_compaction(self):
        budget = self.scheduler.budget
        if not budget.try_acquire("compaction"):
            return None
        job = cp.pick_compaction(self.versions.current, self.options, self._busy_tables)
        if job is None or not self._fits(_compaction_growth(job)):
            budget.release("compaction")
            return None
        self._busy_tables |= job.input_numbers
        return ("compaction", job, self._reserve(_compaction_growth(job)))

    def _pick_forced_compaction(self):
        v = self.versions.current
        for lvl in range(len(v.levels) - 1):
            if not v.levels[lvl]:
                continue
            if not self.scheduler.budget.try_acquire("compaction"):
                return None
            job = cp.pick_compaction(v, self.options, self._busy_tables, force_level=lvl)
            if job is None or not self._fits(_compaction_growth(job)):
                self.scheduler.budget.release("compaction")
                continue
            self._busy_tables |= job.input_numbers
            self.counters["forced_compactions"] += 1
            return ("compaction", job, self._reserve(_compaction_growth(job)))
        return None

    def _pick_gc(self, boost=False, min_ratio=None):
        """GC job for the file with the most garbage.  Normally gated by the
        global trigger; ``boost`` skips that gate and the thread budget but
        still only takes files at least ``min_ratio`` garbage (default: the
        trigger ratio)."""
        v = self.versions.current
        garbage = self.versions.garbage
        if not boost:
            total = sum(m.total_bytes for m in v.vssts.values())
            if not gcm.should_trigger_gc(sum(garbage.values()), total, self.options.gc_garbage_ratio):
                return None
            min_ratio = 0.0
        elif min_ratio is None:
            min_ratio = self.options.gc_garbage_ratio
        cand = gcm.pick_gc_candidate(v.vssts, garbage, exclude=self._busy_vssts, min_ratio=min_ratio)
        if cand is None:
            return None
        meta = v.vssts[cand]
        ratio = garbage.get(cand, 0) / meta.total_bytes
        growth = int(meta.file_size * (1.0 - ratio)) + 1
        if not self._fits(growth) or not self.scheduler.budget.try_acquire("gc", boost=boost):
            return None
        self._busy_vssts.add(cand)
        self._gc_watch[cand] = []
        stats = gcm.GcJobStats(cand, meta.tag, ratio, boosted=boost)
        return ("gc", cand, stats, self._reserve(growth))

    def _pick_job(self, boost=False):
        if self._closed or self._bg_error is not None:
            return None
        return self._pick_flush() or self._pick_compaction() or self._pick_gc(boost or self.scheduler.guard.stalled)

    def _maybe_schedule(self, boost=False):
        """Start background work.  Called with the mutex held."""
        if self.executor is None:
            if self._inline_running:
                return
            self._inline_running = True
            try:
                while True:
                    job = self._pick_job(boost)
                    if job is None:
                        break
                    self._execute(job)
            finally:
                self._inline_running = False
        else:
            while True:
                job = self._pick_job(boost)
                if job is None:
                    break
                self._submit(job)

    def _submit(self, job):
        self.executor.submit(self._bg_entry, job)

    def _bg_entry(self, job):
        try:
            self._execute(job)
        except BaseException:  # recorded in _bg_error by _execute
            pass
        with self.mutex:
            self._maybe_schedule()
            self._cv.notify_all()

    def _execute(self, job):
        kind = job[0]
        try:
            if kind == "flush":
                self._run_flush(job[1])
            elif kind == "compaction":
                self._run_compaction(job[1])
            else:
                self._run_gc(job[1], job[2])
        except SimulatedCrash as exc:
            self._bg_error = exc
            raise
        except Exception as exc:
            log.exception("%s job failed", kind)
            self.job_failures.append((kind, repr(exc)))
            if kind == "flush":
                self._bg_error = exc
                raise
        finally:
            with self.mutex:
                if kind == "flush":
                    self._flush_running = False
                elif kind == "compaction":
                    self._busy_tables -= job[1].input_numbers
                else:
                    self._busy_vssts.discard(job[1])
                    self._gc_watch.pop(job[1], None)
                self.scheduler.budget.release(kind)
                self._reserved -= job[-1]
                self._cv.notify_all()

    def _commit(self, edit):
        with self.mutex:
            v = self.versions.log_and_apply(edit)
            self._purge_obsolete()
            self._publish_stats()
            return v

    def _publish_stats(self):
        s = compute_space_stats(self.versions.current, self.versions.garbage, self.env.usage,
                                self.dataset_bytes, self.scheduler.guard.stalled)
        self.last_stats = s
        self.scheduler.on_commit(s)
        if self._csv is not None:
            self._csv.write(s)
        return s

    def _update_dropcache_capacity(self):
        v = self.versions.current
        per_level = [sum(t.entries for t in tables) for tables in v.levels]
        unique = max(per_level) if per_level else 0
        self.dropcache.resize(gcm.dropcache_capacity(unique, self.options.dropcache_fraction,
                                                     self.options.dropcache_min_keys))

    # ------------------------------------------------------------------
    # flush
    def _build_flush(self, mem, log_number):
        opts = self.options
        vs = self.versions
        builders = {}
        dnum = vs.new_file_number()
        with io_category("flush"):
            db_ = DTableBuilder(self.env, self._file(dnum, KSST), dnum, layout=opts.dtable_layout,
                                block_size=opts.block_size, bits_per_key=opts.bloom_bits_per_key)
            try:
                for key, seq, kind, value in mem.items_from():
                    if kind == PUT and len(value) >= opts.separation_threshold:
                        tag = "hot" if opts.hotspot_aware and self.dropcache.contains(key) else "cold"
                        b = builders.get(tag)
                        if b is None:
                            n = vs.new_file_number()
                            b = builders[tag] = RTableBuilder(self.env, self._file(n, VSST), n, tag=tag,
                                                              bits_per_key=opts.bloom_bits_per_key)
                        b.add(key, value)
                        db_.add(key, seq, INDEX, None, b.file_number, len(value))
                    elif kind == PUT:
                        db_.add(key, seq, PUT, value)
                    else:
                        db_.add(key, seq, DEL)
                vmetas = [b.finish() for b in builders.values()]
                dmeta = db_.finish()
            except BaseException:
                for b in builders.values():
                    b.abandon()
                db_.abandon()
                raise
        return VersionEdit(
            add_tables=[(0, TableMeta.from_table_meta(dnum, dmeta))],
            add_vssts=[VsstMeta(m["file_number"], m["total_value_bytes"], m["file_size"], m["record_count"], m["tag"])
                       for m in vmetas],
            log_number=log_number,
            last_seq=mem.last_seq,
        )

    def _run_flush(self, mem):
        with self.mutex:
            idx = self.imm.index(mem)
            nxt = self.imm[idx + 1].wal_number if idx + 1 < len(self.imm) else self.mem.wal_number
        edit = self._build_flush(mem, nxt)
        with self.mutex:
            self._commit(edit)
            self.imm.remove(mem)
            self.counters["flushes"] += 1
            self.env.remove(self._file(mem.wal_number, WAL))
            self._update_dropcache_capacity()

    # ------------------------------------------------------------------
    # compaction
    def _run_compaction(self, job):
        opts = self.options
        if job.trivial_move:
            t = job.inputs[0]
            edit = VersionEdit(del_tables=[(job.level, t.number)], add_tables=[(job.output_level, t)])
            self._commit(edit)
            self.counters["trivial_moves"] += 1
            return
        streams = [self._dtable(t.number).entries_from(None, tag="compaction") for _, t in job.all_inputs]
        outputs = []
        dropped = []
        builder = None
        bottom = job.bottommost
        comp = opts.compensated_compaction
        limit = opts.ksst_size
        try:
            with io_category("compaction"):
                for entry, shadowed in cp.merge_streams(streams, lambda k: bottom):
                    for s in shadowed:
                        if s[2] == INDEX:
                            dropped.append((s[0], s[4], s[5]))
                            self.dropcache.insert(s[0])
                    if entry is None:
                        continue
                    if builder is None:
                        n = self.versions.new_file_number()
                        builder = DTableBuilder(self.env, self._file(n, KSST), n, layout=opts.dtable_layout,
                                                block_size=opts.block_size, bits_per_key=opts.bloom_bits_per_key)
                    builder.add(entry[0], entry[1], entry[2], entry[3], entry[4], entry[5])
                    size = builder.compensated_estimate if comp else builder.size_estimate
                    if size >= limit:
                        outputs.append((builder.file_number, builder.finish()))
                        builder = None
                if builder is not None:
                    outputs.append((builder.file_number, builder.finish()))
                    builder = None
        except BaseException:
            if builder is not None:
                builder.abandon()
            for n, _ in outputs:
                self.env.remove(self._file(n, KSST))
            raise
        with self.mutex:
            v = self.versions.current
            garbage = {}
            for key, fnum, size in dropped:
                target = self._garbage_target(v, key, fnum)
                if target is not None:
                    garbage[target] = garbage.get(target, 0) + size
                    watch = self._gc_watch.get(target)
                    if watch is not None:
                        watch.append((key, size))
            edit = VersionEdit(
                del_tables=[(lvl, t.number) for lvl, t in job.all_inputs],
                add_tables=[(job.output_level, TableMeta.from_table_meta(n, m)) for n, m in outputs],
                garbage=garbage,
            )
            self._commit(edit)
            self.counters["compactions"] += 1

    def _garbage_target(self, v, key, number):
        """Live value table that holds the value of a dropped entry, if any."""
        if number in v.vssts:
            return number
        for t in v.inherit.get(number, ()):
            rt = self._rtable(t)
            if rt.may_contain(key) and rt.find(key) is not None:
                return t
        return None

    # ------------------------------------------------------------------
    # GC
    def _index_file_for(self, v, key):
        for _, t in v.tables_for_key(key):
            ie = self._dtable(t.number).get_index_entry(key, tag="gc_lookup")
            if ie is not None:
                return ie.file_number
        return None

    def _run_gc(self, cand, st):
        opts = self.options
        v = self.versions.pin()
        outputs = []
        builders = {}
        try:
            with io_category("gc"):
                clock = gcm._Clock()
                rt = self._rtable(cand)
                before = self.env.stats.snapshot()["gc"]
                entries = rt.read_keys(fill=False)
                st.total_records = len(entries)
                st.index_bytes_read = self.env.stats.snapshot()["gc"]["bytes_read"] - before["bytes_read"]
                st.read_seconds += clock.lap()
                bitmap = gcm.gc_lookup_batch([e[0] for e in entries], lambda k: self._index_file_for(v, k),
                                             cand, v.inherit)
                st.lookup_seconds += clock.lap()
                plans = gcm.plan_readahead(bitmap, entries, rt.average_record_size, opts.gc_readahead)
                st.planned_bytes = sum(p.length for p in plans)
                st.estimated_bytes = sum(p.estimate for p in plans)
                st.read_requests = len(plans)
                records = list(gcm.collect_valid_records(rt, plans))
                st.valid_records = len(records)
                st.record_bytes_read = st.planned_bytes
                st.read_seconds += clock.lap()
                for key, rec, vlen in records:
                    tag = "hot" if opts.hotspot_aware and self.dropcache.contains(key) else "cold"
                    b = builders.get(tag)
                    if b is None:
                        n = self.versions.new_file_number()
                        b = builders[tag] = RTableBuilder(self.env, self._file(n, VSST), n, tag=tag,
                                                          bits_per_key=opts.bloom_bits_per_key)
                    b.add_raw(key, rec, vlen)
                    if b.size_estimate >= opts.vsst_size:
                        outputs.append(b.finish())
                        del builders[tag]
                for tag in sorted(builders):
                    outputs.append(builders[tag].finish())
                builders.clear()
                st.bytes_written = sum(m["file_size"] for m in outputs)
                st.write_seconds += clock.lap()
        except BaseException:
            for b in builders.values():
                b.abandon()
            for m in outputs:
                self.env.remove(self._file(m["file_number"], VSST))
            raise
        finally:
            self._unpin(v)
        with self.mutex:
            cur = self.versions.current
            if cand not in cur.vssts:
                for m in outputs:
                    self.env.remove(self._file(m["file_number"], VSST))
                self.counters["gc_aborted"] += 1
                return
            new = [VsstMeta(m["file_number"], m["total_value_bytes"], m["file_size"], m["record_count"], m["tag"])
                   for m in outputs]
            garbage = {}
            for key, size in self._gc_watch.get(cand, ()):
                for m in new:
                    rt = self._rtable(m.number)
                    if rt.may_contain(key) and rt.find(key) is not None:
                        garbage[m.number] = garbage.get(m.number, 0) + size
                        break
            edit = VersionEdit(add_vssts=new, del_vssts=[cand], inherit={cand: tuple(m.number for m in new)},
                               garbage=garbage)
            self._commit(edit)
            st.outputs = [m.number for m in new]
            self.counters["gc_jobs"] += 1
            self.gc_events.append(st)
            if self._gc_log is not None:
                self._gc_log.write(st.log_line() + "\n")
                self._gc_log.flush()

    # ------------------------------------------------------------------
    # control
    def flush(self, wait=True):
        """Rotate the active memtable and flush everything buffered."""
        with self.mutex:
            self._check_open()
            self._rotate()
            self._maybe_schedule()
        if wait:
            self.wait_for_background(flush_only=True)

    def wait_for_background(self, flush_only=False, timeout=None):
        deadline = None if timeout is None else time.monotonic() + timeout
        with self.mutex:
            self._maybe_schedule()
            while True:
                if self._bg_error is not None:
                    raise SepKVError("background failure: %r" % (self._bg_error,))
                inflight = self.scheduler.budget.inflight
                if flush_only:
                    idle = not self.imm
                else:
                    idle = not self.imm and sum(inflight.values()) == 0
                if idle:
                    if flush_only or self.executor is None:
                        return True
                    self._maybe_schedule()
                    if sum(self.scheduler.budget.inflight.values()) == 0:
                        return True
                if deadline is not None and time.monotonic() > deadline:
                    return False
                self._cv.wait(0.05)

    def compact_range(self):
        """Push everything to the last level (a full manual compaction)."""
        self.flush()
        while True:
            self.wait_for_background()
            with self.mutex:
                job = self._pick_forced_compaction()
                if job is None:
                    return
                if self.executor is None:
                    self._execute(job)
                else:
                    self._submit(job)

    def set_dataset_size(self, nbytes, update_limit=True):
        with self.mutex:
            self.dataset_bytes = nbytes
            if update_limit:
                self.options.dataset_size = nbytes
                self.scheduler.set_limit(self.options.space_limit)

    def space_stats(self):
        with self.mutex:
            return compute_space_stats(self.versions.current, self.versions.garbage, self.env.usage,
                                       self.dataset_bytes, self.scheduler.guard.stalled)

    def live_file_bytes(self):
        with self.mutex:
            v = self.versions.current
            return sum(t.file_size for _, t in v.all_tables()) + sum(m.file_size for m in v.vssts.values())

    def describe_levels(self):
        """Per-level sizes and scores (the ``tablectl levels`` payload)."""
        with self.mutex:
            return describe_levels(self.versions.current, self.options, self.versions.garbage)

    def close(self):
        with self.mutex:
            if self._closed:
                return
        if self.executor is not None and self._bg_error is None:
            try:
                self.wait_for_background()
            except SepKVError:
                pass
        with self.mutex:
            self._closed = True
        if self.executor is not None:
            self.executor.shutdown(wait=True)
        with self.mutex:
            if self._bg_error is None:
                self.wal.close()
                self.versions.close()
            else:
                self.kill()
                return
            with self._handles_lock:
                for h in self._handles.values():
                    h.close()
                self._handles.clear()
            # close the last telemetry window so short runs still log one record
            self.scheduler.tick(compute_space_stats(self.versions.current, self.versions.garbage,
                                                    self.env.usage, self.dataset_bytes), force=True)
            self.scheduler.close()
            if self._csv is not None:
                self._csv.close()
            if self._gc_log is not None:
                self._gc_log.close()

    def kill(self):
        """Drop everything without further I/O, as a crashed process would."""
        self._closed = True
        if self.wal is not None:
            self.wal._wf.discard()
        if self.versions._manifest is not None:
            self.versions._manifest.discard()
            self.versions._manifest = None
        with self._handles_lock:
            for h in self._handles.values():
                h.close()
            self._handles.clear()
        if self.executor is not None:
            self.executor.shutdown(wait=True)
        self.scheduler.close()
        if self._csv is not None:
            self._csv.close()
        if self._gc_log is not None:
            self._gc_log.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _compaction_growth(job):
    """Worst-case extra bytes a compaction writes before deleting its inputs."""
    if job.trivial_move:
        return 0
    return sum(t.file_size for _, t in job.all_inputs)


def _mem_stream(mem, start):
    for key, seq, kind, value in mem.items_from(start):
        yield key, seq, kind, value, 0, 0


def describe_levels(version, options, garbage=None):
    targets = cp.compute_level_targets(version, options)
    scores = cp.compaction_scores(version, options, targets)
    levels = []
    for lvl, tables in enumerate(version.levels):
        phys = sum(t.file_size for t in tables)
        comp = sum(t.compensated_size for t in tables)
        tgt = targets.target(lvl)
        levels.append({
            "level": lvl,
            "files": len(tables),
            "physical_bytes": phys,
            "compensated_bytes": comp,
            "target_bytes": None if tgt == cp.INF or lvl == 0 else int(tgt),
            "score": scores[lvl],
        })
    out = {"base_level": targets.base_level, "compensated_compaction": options.compensated_compaction,
           "levels": levels}
    if garbage is not None:
        total = sum(m.total_bytes for m in version.vssts.values())
        g = sum(garbage.get(n, 0) for n in version.vssts)
        out["value_tables"] = {"count": len(version.vssts), "total_bytes": total, "garbage_bytes": g,
                               "inheritance_edges": len(version.inherit)}
    return out


def open_db(path, options=None, **kw):
    return DB(path, options, **kw)


__all__ = ["DB", "open_db", "describe_levels"]
