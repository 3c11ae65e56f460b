"""Versioned manifest: level structure, live value tables, garbage counters and
the file-number inheritance map.

The manifest is a log of JSON edits framed as ``crc32 | length | payload``.
The first record of every manifest file is a full snapshot.  ``CURRENT``
names the active manifest and is replaced atomically when the log rotates.
A commit is durable once its record is fully in the log; a torn tail record
is discarded on recovery.
"""
from __future__ import annotations

import bisect
import json
import os
import struct
import threading
import zlib
from dataclasses import dataclass, field

from ..errors import CorruptionError

_HDR = struct.Struct("<II")


@dataclass(frozen=True)
class TableMeta:
    """A DTable placed in a level."""

    number: int
    file_size: int
    sum_value_size: int
    entries: int
    smallest: bytes
    largest: bytes
    smallest_seq: int
    largest_seq: int
    refs: tuple = ()

    @property
    def compensated_size(self):
        return self.file_size + self.sum_value_size

    def to_json(self):
        return [self.number, self.file_size, self.sum_value_size, self.entries, self.smallest.hex(),
                self.largest.hex(), self.smallest_seq, self.largest_seq, list(self.refs)]

    @classmethod
    def from_json(cls, j):
        return cls(j[0], j[1], j[2], j[3], bytes.fromhex(j[4]), bytes.fromhex(j[5]), j[6], j[7], tuple(j[8]))

    @classmethod
    def from_table_meta(cls, number, meta):
        return cls(number, meta["file_size"], meta["sum_value_size"], meta["entries"],
                   bytes.fromhex(meta["smallest"]), bytes.fromhex(meta["largest"]),
                   meta["smallest_seq"], meta["largest_seq"], tuple(meta["refs"]))


@dataclass(frozen=True)
class VsstMeta:
    number: int
    total_bytes: int
    file_size: int
    record_count: int
    tag: str = "cold"

    def to_json(self):
        return [self.number, self.total_bytes, self.file_size, self.record_count, self.tag]

    @classmethod
    def from_json(cls, j):
        return cls(j[0], j[1], j[2], j[3], j[4])


@dataclass
class VersionEdit:
    add_tables: list = field(default_factory=list)  # (level, TableMeta)
    del_tables: list = field(default_factory=list)  # (level, number)
    add_vssts: list = field(default_factory=list)  # VsstMeta
    del_vssts: list = field(default_factory=list)  # number
    garbage: dict = field(default_factory=dict)  # number -> delta bytes
    inherit: dict = field(default_factory=dict)  # old number -> tuple of new numbers
    log_number: int | None = None
    last_seq: int | None = None
    next_file: int | None = None
    snapshot: bool = False

    def encode(self):
        d = {}
        if self.snapshot:
            d["snapshot"] = True
        if self.add_tables:
            d["at"] = [[lvl, t.to_json()] for lvl, t in self.add_tables]
        if self.del_tables:
            d["dt"] = [list(x) for x in self.del_tables]
        if self.add_vssts:
            d["av"] = [v.to_json() for v in self.add_vssts]
        if self.del_vssts:
            d["dv"] = list(self.del_vssts)
        if self.garbage:
            d["g"] = [[k, v] for k, v in self.garbage.items()]
        if self.inherit:
            d["ih"] = [[k, list(v)] for k, v in self.inherit.items()]
        for name in ("log_number", "last_seq", "next_file"):
            v = getattr(self, name)
            if v is not None:
                d[name] = v
        return json.dumps(d, separators=(",", ":")).encode()

    @classmethod
    def decode(cls, payload):
        d = json.loads(payload)
        return cls(
            add_tables=[(lvl, TableMeta.from_json(t)) for lvl, t in d.get("at", ())],
            del_tables=[tuple(x) for x in d.get("dt", ())],
            add_vssts=[VsstMeta.from_json(v) for v in d.get("av", ())],
            del_vssts=list(d.get("dv", ())),
            garbage={k: v for k, v in d.get("g", ())},
            inherit={k: tuple(v) for k, v in d.get("ih", ())},
            log_number=d.get("log_number"),
            last_seq=d.get("last_seq"),
            next_file=d.get("next_file"),
            snapshot=d.get("snapshot", False),
        )


class Version:
    """Immutable view of the tree.  Pinned by readers via ``refs``."""

    __slots__ = ("vid", "levels", "vssts", "inherit", "refs", "_l1_index")

    def __init__(self, vid, levels, vssts, inherit):
        self.vid = vid
        self.levels = levels  # tuple of tuples; L0 newest first, L1+ by smallest key
        self.vssts = vssts  # number -> VsstMeta (live value tables)
        self.inherit = inherit  # retired number -> tuple of live numbers
        self.refs = 0
        self._l1_index = [None] * len(levels)

    def level_smallest(self, level):
        idx = self._l1_index[level]
        if idx is None:
            idx = self._l1_index[level] = [t.smallest for t in self.levels[level]]
        return idx

    def tables_for_key(self, key):
        """``(level, TableMeta)`` that may hold ``key``, newest first."""
        for t in self.levels[0]:
            if t.smallest <= key <= t.largest:
                yield 0, t
        for lvl in range(1, len(self.levels)):
            tables = self.levels[lvl]
            if not tables:
                continue
            i = bisect.bisect_right(self.level_smallest(lvl), key) - 1
            if i >= 0 and key <= tables[i].largest:
                yield lvl, tables[i]

    def overlapping(self, level, lo, hi):
        tables = self.levels[level]
        if level == 0:
            return [t for t in tables if not (t.largest < lo or t.smallest > hi)]
        i = max(bisect.bisect_right(self.level_smallest(level), lo) - 1, 0)
        out = []
        for t in tables[i:]:
            if t.smallest > hi:
                break
            if t.largest >= lo:
                out.append(t)
        return out

    def all_tables(self):
        for lvl, tables in enumerate(self.levels):
            for t in tables:
                yield lvl, t

    def level_bytes(self, level, compensated=True):
        if compensated:
            return sum(t.compensated_size for t in self.levels[level])
        return sum(t.file_size for t in self.levels[level])

    def last_nonempty_level(self):
        for lvl in range(len(self.levels) - 1, -1, -1):
            if self.levels[lvl]:
                return lvl
        return None


def _sort_level(level, tables):
    if level == 0:
        return tuple(sorted(tables, key=lambda t: (-t.largest_seq, -t.number)))
    return tuple(sorted(tables, key=lambda t: t.smallest))


class VersionSet:
    def __init__(self, env, dbdir, num_levels, manifest_max_size=4 << 20, lock=None):
        self.env = env
        self.dbdir = dbdir
        self.num_levels = num_levels
        self.manifest_max_size = manifest_max_size
        self.lock = lock if lock is not None else threading.RLock()
        self.next_file_number = 2
        self.last_seq = 0
        self.log_number = 0
        self.garbage = {}
        self.vsst_refcount = {}
        self._vid = 0
        self.current = Version(0, tuple(() for _ in range(num_levels)), {}, {})
        self._pinned = set()
        self._obsolete = []  # (vid at which file left the tree, kind, number)
        self._manifest = None
        self.manifest_number = 0
        self.manifest_size = 0
        self.commits = 0

    # numbering --------------------------------------------------------
    def new_file_number(self):
        with self.lock:
            n = self.next_file_number
            self.next_file_number += 1
            return n

    def path(self, number, ext):
        return os.path.join(self.dbdir, "%06d.%s" % (number, ext))

    # pinning ----------------------------------------------------------
    def pin(self):
        with self.lock:
            v = self.current
            v.refs += 1
            self._pinned.add(v)
            return v

    def unpin(self, v):
        with self.lock:
            v.refs -= 1
            if v.refs == 0:
                self._pinned.discard(v)

    def deletable_files(self):
        """Pop obsolete files no pinned version can still see."""
        with self.lock:
            live = [v.vid for v in self._pinned if v.refs > 0]
            live.append(self.current.vid)
            floor = min(live)
            ready = [(k, n) for vid, k, n in self._obsolete if vid <= floor]
            self._obsolete = [x for x in self._obsolete if x[0] > floor]
            return ready

    # applying edits ---------------------------------------------------
    def _apply(self, edit):
        cur = self.current
        levels = list(cur.levels)
        touched = set()
        removed = []
        for lvl, number in edit.del_tables:
            touched.add(lvl)
        for lvl, _ in edit.add_tables:
            touched.add(lvl)
        for lvl in touched:
            levels[lvl] = list(levels[lvl])
        for lvl, number in edit.del_tables:
            for i, t in enumerate(levels[lvl]):
                if t.number == number:
                    removed.append(levels[lvl].pop(i))
                    break
            else:
                raise CorruptionError("edit deletes table %d not in L%d" % (number, lvl), None, "manifest")
        rc = self.vsst_refcount
        refs_dropped = False
        for t in removed:
            for r in t.refs:
                c = rc[r] - 1
                if c:
                    rc[r] = c
                else:
                    del rc[r]
                    refs_dropped = True
        added_numbers = set()
        for lvl, t in edit.add_tables:
            levels[lvl].append(t)
            added_numbers.add(t.number)
            for r in t.refs:
                rc[r] = rc.get(r, 0) + 1
        for lvl in touched:
            levels[lvl] = _sort_level(lvl, levels[lvl])

        vssts = cur.vssts
        if edit.add_vssts or edit.del_vssts:
            vssts = dict(vssts)
            for v in edit.add_vssts:
                vssts[v.number] = v
                self.garbage.setdefault(v.number, 0)
            for n in edit.del_vssts:
                vssts.pop(n, None)
                self.garbage.pop(n, None)
        for n, delta in edit.garbage.items():
            if n in vssts:
                g = self.garbage.get(n, 0) + delta
                self.garbage[n] = min(max(g, 0), vssts[n].total_bytes)

        inherit = cur.inherit
        if edit.inherit or (refs_dropped and inherit):
            inherit = dict(inherit)
            for old, new in edit.inherit.items():
                new = tuple(new)
                for k, v in inherit.items():
                    if old in v:
                        merged = [x for x in v if x != old]
                        merged.extend(x for x in new if x not in merged)
                        inherit[k] = tuple(merged)
                inherit[old] = new
            for k in [k for k in inherit if k not in rc]:
                del inherit[k]

        if edit.log_number is not None:
            self.log_number = max(self.log_number, edit.log_number)
        if edit.last_seq is not None:
            self.last_seq = max(self.last_seq, edit.last_seq)
        if edit.next_file is not None:
            self.next_file_number = max(self.next_file_number, edit.next_file)

        self._vid += 1
        new = Version(self._vid, tuple(levels), vssts, inherit)
        for t in removed:
            if t.number not in added_numbers:
                self._obsolete.append((new.vid, "ksst", t.number))
        for n in edit.del_vssts:
            self._obsolete.append((new.vid, "vsst", n))
        self.current = new
        return new

    def snapshot_edit(self):
        cur = self.current
        e = VersionEdit(snapshot=True)
        for lvl, t in cur.all_tables():
            e.add_tables.append((lvl, t))
        e.add_vssts = list(cur.vssts.values())
        e.garbage = {n: g for n, g in self.garbage.items() if g}
        e.inherit = dict(cur.inherit)
        e.log_number = self.log_number
        e.last_seq = self.last_seq
        e.next_file = self.next_file_number
        return e

    # manifest I/O -----------------------------------------------------
    def _frame(self, payload):
        lenb = struct.pack("<I", len(payload))
        return struct.pack("<I", zlib.crc32(payload, zlib.crc32(lenb))) + lenb + payload

    def _write_manifest(self):
        """Start a fresh manifest holding a snapshot, then point CURRENT at it."""
        number = self.new_file_number()
        name = "MANIFEST-%06d" % number
        path = os.path.join(self.dbdir, name)
        wf = self.env.open_writable(path, category="manifest", buffer_size=1 << 30)
        e = self.snapshot_edit()
        rec = self._frame(e.encode())
        wf.append(rec)
        wf.sync()
        old = self._manifest
        old_number = self.manifest_number
        self.env.write_file_atomic(os.path.join(self.dbdir, "CURRENT"), (name + "\n").encode())
        self._manifest = wf
        self.manifest_number = number
        self.manifest_size = len(rec)
        if old is not None:
            old.close()
            self.env.remove(os.path.join(self.dbdir, "MANIFEST-%06d" % old_number))

    def create(self):
        with self.lock:
            self._write_manifest()

    def log_and_apply(self, edit):
        """Durably log ``edit`` and install the resulting version."""
        with self.lock:
            edit.next_file = self.next_file_number
            rec = self._frame(edit.encode())
            self._manifest.append(rec)
            self._manifest.sync()
            self.manifest_size += len(rec)
            self.commits += 1
            v = self._apply(edit)
            if self.manifest_size > self.manifest_max_size:
                self._write_manifest()
            return v

    def recover(self, readonly=False):
        cur_path = os.path.join(self.dbdir, "CURRENT")
        try:
            name = self.env.read_file(cur_path, category="recovery").decode().strip()
        except (OSError, UnicodeDecodeError) as exc:
            raise CorruptionError("cannot read CURRENT: %s" % exc, cur_path, "CURRENT") from None
        if not name.startswith("MANIFEST-"):
            raise CorruptionError("CURRENT names %r" % name, cur_path, "CURRENT")
        path = os.path.join(self.dbdir, name)
        try:
            data = self.env.read_file(path, category="recovery")
        except OSError as exc:
            raise CorruptionError("cannot read manifest: %s" % exc, path, "manifest") from None
        pos = 0
        first = True
        while pos + _HDR.size <= len(data):
            crc, length = _HDR.unpack_from(data, pos)
            start = pos + _HDR.size
            payload = data[start:start + length]
            if len(payload) < length or zlib.crc32(payload, zlib.crc32(data[pos + 4:start])) != crc:
                break
            try:
                edit = VersionEdit.decode(payload)
            except ValueError as exc:
                raise CorruptionError("undecodable manifest edit: %s" % exc, path, "manifest") from None
            if first and not edit.snapshot:
                raise CorruptionError("manifest does not start with a snapshot", path, "manifest")
            first = False
            self._apply(edit)
            pos = start + length
        if first:
            raise CorruptionError("empty manifest", path, "manifest")
        self._obsolete.clear()
        self.manifest_number = int(name.split("-", 1)[1])
        if not readonly:
            # continue in a fresh manifest so a torn tail never precedes new records
            self._write_manifest()

    def close(self):
        with self.lock:
            if self._manifest is not None:
                self._manifest.close()
                self._manifest = None
