"""``tablectl``: offline inspection of tables and databases.

    tablectl inspect <file>       block layout and meta of a .ksst or .vsst file
    tablectl levels [<dbdir>]     per-level sizes and compaction scores
    tablectl verify <file>        checksum every block of a table
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from .errors import SepKVError
from .format.block import DTABLE_MAGIC, FOOTER_SIZE, RTABLE_MAGIC
from .format.dtable import DTable
from .format.io import Env
from .format.rtable import RTable
from .options import Options, load_options


def open_table(path, env=None):
    env = env or Env()
    with open(path, "rb") as f:
        f.seek(0, os.SEEK_END)
        if f.tell() < FOOTER_SIZE:
            raise SepKVError("%s: too small to be a table" % path)
        f.seek(-8, os.SEEK_END)
        magic = f.read(8)
    stem = os.path.basename(path).split(".")[0]
    number = int(stem) if stem.isdigit() else 0
    if magic == DTABLE_MAGIC:
        return DTable(env, path, number)
    if magic == RTABLE_MAGIC:
        return RTable(env, path, number)
    raise SepKVError("%s: unknown table magic %r" % (path, magic))


def inspect_table(path):
    t = open_table(path)
    try:
        return {
            "path": os.path.abspath(path),
            "type": "dtable" if isinstance(t, DTable) else "rtable",
            "file_size": t.file_size,
            "format_version": t.footer.version,
            "meta": t.meta,
            "layout": t.block_layout(),
        }
    finally:
        t.close()


def db_options(dbdir, config=None):
    if config:
        return load_options(config)
    path = os.path.join(dbdir, "OPTIONS")
    if os.path.exists(path):
        return load_options(path, strict=False)
    return Options()


def levels_report(dbdir, config=None):
    from .engine.db import describe_levels
    from .engine.version import VersionSet

    opts = db_options(dbdir, config)
    vs = VersionSet(Env(), os.path.abspath(dbdir), opts.num_levels)
    vs.recover(readonly=True)
    v = vs.current
    out = describe_levels(v, opts, vs.garbage)
    for lvl, tables in enumerate(v.levels):
        out["levels"][lvl]["tables"] = [
            {"file_number": t.number, "smallest": t.smallest.hex(), "largest": t.largest.hex(),
             "physical_bytes": t.file_size, "compensated_bytes": t.compensated_size}
            for t in tables
        ]
    out["value_tables"]["tables"] = [
        {"file_number": n, "tag": m.tag, "total_bytes": m.total_bytes, "garbage_bytes": vs.garbage.get(n, 0)}
        for n, m in sorted(v.vssts.items())
    ]
    out["inheritance"] = {str(k): list(t) for k, t in sorted(v.inherit.items())}
    out["next_file_number"] = vs.next_file_number
    out["last_sequence"] = vs.last_seq
    return out


def main(argv=None):
    p = argparse.ArgumentParser(prog="tablectl", description="Inspect sepkv tables and databases")
    sub = p.add_subparsers(dest="cmd", required=True)
    i = sub.add_parser("inspect", help="dump a table's block layout and meta as JSON")
    i.add_argument("file")
    lv = sub.add_parser("levels", help="dump per-level sizes and scores as JSON")
    lv.add_argument("db", nargs="?", default=".")
    lv.add_argument("--config", help="key=value options file (default: the database's OPTIONS)")
    lv.add_argument("--summary", action="store_true", help="omit per-table detail")
    vf = sub.add_parser("verify", help="check every block checksum of a table")
    vf.add_argument("file")
    args = p.parse_args(argv)
    try:
        if args.cmd == "inspect":
            out = inspect_table(args.file)
        elif args.cmd == "levels":
            out = levels_report(args.db, args.config)
            if args.summary:
                for lvl in out["levels"]:
                    lvl.pop("tables", None)
                out["value_tables"].pop("tables", None)
        else:
            t = open_table(args.file)
            try:
                t.verify()
            finally:
                t.close()
            out = {"path": os.path.abspath(args.file), "ok": True}
    except (OSError, SepKVError, ValueError) as exc:
        print("tablectl: %s" % exc, file=sys.stderr)
        return 1
    json.dump(out, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
