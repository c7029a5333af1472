import csv
import json
import subprocess
import sys

import pytest

from spide.cli import main
from spide.filterlab import ExperimentConfig, run_suite
from spide.grid import read_snapshot


def write_cfg(tmp_path, **kw):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(kw))
    return str(p)


def header(path):
    with open(path) as fh:
        return next(csv.reader(fh))


def test_unknown_preset_is_a_config_error(tmp_path, capsys):
    assert main(["suite", "--config", write_cfg(tmp_path, preset="nope"), "--only", "lp-partition"]) == 2
    assert "preset" in capsys.readouterr().err


def test_unknown_field_and_missing_file(tmp_path, capsys):
    assert main(["norms", "--config", write_cfg(tmp_path, colour="red")]) == 2
    assert main(["norms", "--config", str(tmp_path / "absent.json")]) == 2
    assert "colour" in capsys.readouterr().err


def test_bad_flags_are_config_errors(tmp_path):
    assert main(["suite", "--only", "lp-partition", "--out", str(tmp_path), "--threads", "0"]) == 2
    assert main(["suite", "--only", "lp-partition", "--out", str(tmp_path), "--paths", "0"]) == 2


def test_suite_subset_passes_and_writes_report(tmp_path, capsys):
    assert main(["suite", "--only", "lp-partition", "--out", str(tmp_path)]) == 0
    assert "[PASS] lp-partition" in capsys.readouterr().out
    rep = json.loads((tmp_path / "suite.json").read_text())
    assert [c["name"] for c in rep["criteria"]] == ["lp-partition"]
    assert rep["pass"] is True


def test_impossible_tolerance_fails(tmp_path):
    cfg = write_cfg(tmp_path, tolerances={"lp-partition": 0})
    assert main(["suite", "--config", cfg, "--only", "lp-partition", "--out", str(tmp_path / "o")]) == 1


def test_empty_report_serialises():
    rep = run_suite(ExperimentConfig(), only=[])
    data = json.loads(rep.to_json())
    assert data["criteria"] == [] and data["pass"] is True


def test_solve_writes_fields_and_tables(tmp_path):
    cfg = write_cfg(tmp_path, N=64, steps=32, l_fraction=0.3, marks={"points": [[1.0]], "masses": [2.0]},
                    inputs={"Phi": [{"shape": "gaussian"}], "f": {"shape": "tone", "k": 2}},
                    norms=[{"family": "H", "beta": 1.0, "p": 2.0}, {"family": "B", "beta": 0.5, "p": 4.0}])
    out = tmp_path / "out"
    assert main(["solve", "--config", cfg, "--paths", "3", "--out", str(out), "--eps-cut", "0.1"]) == 0
    assert header(out / "tables" / "events.csv")[:3] == ["time", "source", "mark0"]
    with open(out / "tables" / "norms.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["family", "beta", "p", "r", "domain", "value", "stderr", "seed-range"]
    assert [r[0] for r in rows[1:]] == ["H", "B"] and rows[1][-1] == "0-2"
    assert read_snapshot(out / "fields" / "u_final.sfld").grid.N == 64


def test_solve_is_reproducible(tmp_path):
    cfg = write_cfg(tmp_path, N=64, steps=16, l_fraction=0.3)
    for name in ("a", "b"):
        assert main(["solve", "--config", cfg, "--paths", "2", "--seed", "9", "--out", str(tmp_path / name)]) == 0
    for f in ("tables/norms.csv", "tables/events.csv", "fields/u_final.sfld"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_norms_command(tmp_path, capsys):
    cfg = write_cfg(tmp_path, N=64, inputs={"u0": {"shape": "gaussian"}},
                    norms=[{"family": "H", "beta": 0.5, "p": 2.0}, {"family": "Htilde", "beta": 0.5, "p": 2.0}])
    assert main(["norms", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert header(tmp_path / "tables" / "norms.csv")[:3] == ["input", "family", "beta"]
    assert capsys.readouterr().out.count("u0,") == 2


def test_zakai_command(tmp_path):
    cfg = write_cfg(tmp_path, N=128, steps=64, zakai_eps=1e-2)
    assert main(["zakai", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert header(tmp_path / "tables" / "zakai.csv") == ["quantity", "value"]
    assert (tmp_path / "tables" / "events.csv").exists()


def test_kernel_command(tmp_path):
    assert main(["kernel", "--out", str(tmp_path)]) == 0
    h = header(tmp_path / "tables" / "kernel.csv")
    assert h[:3] == ["alpha", "t", "N"]


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "spide", "suite", "--only", "lp-partition", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    with pytest.raises(SystemExit):
        main(["frobnicate"])
