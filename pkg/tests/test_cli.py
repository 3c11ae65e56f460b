import glob
import json
import os

from conftest import small_options
from sepkv import DB
from sepkv import tablectl
from sepkv.bench import cli as bench_cli
from sepkv.format.block import FOOTER_SIZE


def _populated(dbdir):
    with DB(dbdir, small_options()) as db:
        for i in range(3000):
            db.put(b"key%05d" % (i % 1000), bytes([i % 256]) * (100 if i % 3 else 1500))
        db.flush()
    return dbdir


def _json(capsys):
    return json.loads(capsys.readouterr().out)


def test_inspect_both_table_types(dbdir, capsys):
    _populated(dbdir)
    for ext, kind in (("ksst", "dtable"), ("vsst", "rtable")):
        path = sorted(glob.glob(os.path.join(dbdir, "*." + ext)))[0]
        assert tablectl.main(["inspect", path]) == 0
        out = _json(capsys)
        assert out["type"] == kind
        assert out["file_size"] == os.path.getsize(path)
        layout = out["layout"]
        assert layout["footer"] == {"offset": out["file_size"] - FOOTER_SIZE, "size": FOOTER_SIZE}
        handles = [layout[k] for k in ("index", "filter", "meta")]
        handles += layout.get("blocks", []) + layout.get("index_partitions", [])
        # every block lies before the footer
        assert all(h["offset"] + h["size"] <= out["file_size"] - FOOTER_SIZE for h in handles)


def test_levels_matches_live_db(dbdir, capsys):
    _populated(dbdir)
    with DB(dbdir, small_options()) as db:
        want = db.describe_levels()
        live = db.live_file_bytes()
    assert tablectl.main(["levels", dbdir]) == 0
    out = _json(capsys)
    assert [l["physical_bytes"] for l in out["levels"]] == [l["physical_bytes"] for l in want["levels"]]
    assert [l["score"] for l in out["levels"]] == [l["score"] for l in want["levels"]]
    index_bytes = sum(t["physical_bytes"] for l in out["levels"] for t in l["tables"])
    assert index_bytes == sum(l["physical_bytes"] for l in out["levels"])
    value_files = sum(os.path.getsize(os.path.join(dbdir, "%06d.vsst" % t["file_number"]))
                      for t in out["value_tables"]["tables"])
    assert index_bytes + value_files == live
    assert tablectl.main(["levels", dbdir, "--summary"]) == 0
    assert "tables" not in _json(capsys)["levels"][0]


def test_verify_and_corruption(dbdir, capsys):
    _populated(dbdir)
    path = sorted(glob.glob(os.path.join(dbdir, "*.vsst")))[0]
    assert tablectl.main(["verify", path]) == 0
    assert _json(capsys)["ok"]
    with open(path, "r+b") as f:
        f.seek(10)
        b = f.read(1)
        f.seek(10)
        f.write(bytes([b[0] ^ 0xFF]))
    assert tablectl.main(["verify", path]) == 1
    assert "tablectl:" in capsys.readouterr().err


def test_inspect_rejects_non_table(tmp_path, capsys):
    p = tmp_path / "junk.ksst"
    p.write_bytes(b"x" * 200)
    assert tablectl.main(["inspect", str(p)]) == 1
    assert tablectl.main(["inspect", str(tmp_path / "missing")]) == 1


def test_bench_presets(capsys):
    assert bench_cli.main(["presets"]) == 0
    names = [line.split()[0] for line in capsys.readouterr().out.splitlines()]
    assert "mixed-8k" in names and "ycsb-e" in names
    assert bench_cli.main(["presets", "--show", "pareto-1k"]) == 0
    assert "value_dist = pareto-1k" in capsys.readouterr().out
    assert bench_cli.main(["presets", "--show", "nope"]) == 2


def test_bench_run_errors(tmp_path, capsys):
    bad = tmp_path / "bad.spec"
    bad.write_text("phases = load\nbogus_key = 1\n")
    assert bench_cli.main(["run", "--spec", str(bad), "--db", str(tmp_path / "db"), "--out",
                           str(tmp_path / "out")]) == 2
    good = tmp_path / "good.spec"
    good.write_text("phases = load\ndataset_size = 64KB\nvalue_dist = fixed-1k\nbackground_threads = 0\n")
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert bench_cli.main(["run", "--spec", str(good), "--db", str(tmp_path / "db"), "--out",
                           str(blocker / "sub")]) == 2


def test_bench_run_small(tmp_path, capsys):
    good = tmp_path / "good.spec"
    good.write_text("phases = load,update\ndataset_size = 256KB\nupdate_bytes = 256KB\nvalue_dist = fixed-2k\n"
                    "memtable_size = 32KB\nbackground_threads = 0\nworkers = 1\n")
    rc = bench_cli.main(["run", "--spec", str(good), "--db", str(tmp_path / "db"), "--seed", "3", "--out",
                         str(tmp_path / "out")])
    assert rc == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("load") and lines[1].startswith("update")
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert rep["seed"] == 3 and rep["clean"]
