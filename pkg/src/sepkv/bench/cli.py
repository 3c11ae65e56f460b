"""``bench`` command line."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import workload


def _cmd_run(args):
    try:
        if args.spec in workload.presets() and not os.path.exists(args.spec):
            spec = workload.parse_spec(workload.presets()[args.spec], seed=args.seed)
        else:
            spec = workload.load_spec(args.spec, seed=args.seed)
    except (OSError, ValueError) as exc:
        print("bench: bad spec %s: %s" % (args.spec, exc), file=sys.stderr)
        return 2
    if args.workers is not None:
        spec.workers = args.workers
    try:
        os.makedirs(args.out, exist_ok=True)
        probe = os.path.join(args.out, ".write-test")
        with open(probe, "w"):
            pass
        os.remove(probe)
    except OSError as exc:
        print("bench: output directory %s is not writable: %s" % (args.out, exc), file=sys.stderr)
        return 2
    from .runner import run

    def progress(block):
        if not args.quiet:
            print("%-8s ops=%d %.1fs %.0f ops/s %.1f MB/s%s" % (
                block["phase"], block["ops"], block["seconds"], block["ops_per_sec"], block["mb_per_sec"],
                " PARTIAL" if block["partial"] else ""), flush=True)

    report, clean = run(spec, args.db, args.out, progress)
    if not args.quiet:
        print("report: %s" % os.path.join(args.out, "report.json"))
    return 0 if clean else 1


def _cmd_presets(args):
    ps = workload.presets()
    if args.show:
        if args.show not in ps:
            print("bench: unknown preset %r" % args.show, file=sys.stderr)
            return 2
        sys.stdout.write(ps[args.show])
        return 0
    for name in ps:
        spec = workload.parse_spec(ps[name])
        print("%-10s %s" % (name, json.dumps(workload.describe(spec))))
    return 0


def _cmd_kernels(args):
    from .kernels import format_rows, run_kernel_bench
    rows = run_kernel_bench(repeat=args.repeat)
    if args.json:
        print(json.dumps(rows, indent=2))
    else:
        print(format_rows(rows))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="bench", description="Workload harness for the sepkv engine")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run a workload spec")
    r.add_argument("--spec", required=True, help="key=value spec file (or a preset name)")
    r.add_argument("--db", required=True, help="database directory")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True, help="report directory")
    r.add_argument("--workers", type=int, default=None, help="override the spec's worker count")
    r.add_argument("-q", "--quiet", action="store_true")
    r.set_defaults(fn=_cmd_run)
    ps = sub.add_parser("presets", help="list built-in workload presets")
    ps.add_argument("--show", metavar="NAME", help="print one preset as a spec file")
    ps.set_defaults(fn=_cmd_presets)
    k = sub.add_parser("kernels", help="compare compiled and pure-Python kernels")
    k.add_argument("--repeat", type=int, default=5)
    k.add_argument("--json", action="store_true")
    k.set_defaults(fn=_cmd_kernels)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
