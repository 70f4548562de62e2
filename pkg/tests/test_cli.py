import csv
import json
import math
import subprocess
import sys

import pytest
import yaml

from hsdrift.cli import main

SMALL = {"name": "tiny", "scenario": "custom", "grid": 32,
         "flow": {"t1": 0.004, "dt": 5e-4, "record_every": 4},
         "diagnostics": ["support_monotone"]}


def _write(tmp_path, raw, name="exp.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(raw))
    return p


def test_validate_ok(tmp_path, capsys):
    assert main(["validate", "--config", str(_write(tmp_path, SMALL))]) == 0
    assert "tiny" in capsys.readouterr().out


@pytest.mark.parametrize("bad", [
    {"scenario": "nowhere"},
    {"flow": {"bogus": 1}},
    {"diagnostics": ["no_such_check"]},
    {"diagnostics": ["cusp_phase1"]},
    {"grid": 4},
    {"dim": 3},
])
def test_validate_rejects(tmp_path, capsys, bad):
    raw = {**SMALL, **bad}
    assert main(["validate", "--config", str(_write(tmp_path, raw))]) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_missing_config_file(tmp_path):
    assert main(["validate", "--config", str(tmp_path / "absent.yaml")]) == 2


def test_coarse_gallery_grid_rejected(tmp_path):
    raw = {"name": "e3", "scenario": "gallery_e3", "grid": 64, "diagnostics": ["e3_properties"]}
    assert main(["validate", "--config", str(_write(tmp_path, raw))]) == 2


def test_cone_table_csv(tmp_path):
    out = tmp_path / "tab"
    assert main(["cone-table", "--out", str(out), "--thetas", str(math.pi / 4), str(math.pi / 3)]) == 0
    lines = (out / "cone_table.csv").read_text().splitlines()
    assert lines[0].startswith("# schema_version")
    rows = list(csv.DictReader(lines[1:]))
    assert [float(r["beta"]) for r in rows] == pytest.approx([2.0, 1.5])
    assert float(rows[0]["beta"]) == pytest.approx(2.0)


def test_cone_table_3d_hemisphere(capsys):
    assert main(["cone-table", "--dim", "3", "--thetas", str(math.pi / 2)]) == 0
    row = list(csv.DictReader(capsys.readouterr().out.splitlines()[1:]))[0]
    assert float(row["lambda1"]) == pytest.approx(2.0, abs=1e-6)
    assert float(row["beta"]) == pytest.approx(1.0, abs=1e-6)


def test_simulate_deterministic(tmp_path):
    cfg = _write(tmp_path, SMALL)
    texts = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        man = json.loads((out / "manifest.json").read_text())
        assert man["complete"] and man["outcomes"]["support_monotone"]["pass"]
        texts.append((out / "reports" / "support_monotone.json").read_bytes())
    assert texts[0] == texts[1]


def test_emit_plotdata_noop_and_fronts(tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", "--config", str(_write(tmp_path, SMALL)), "--out", str(out)]) == 0
    assert main(["emit-plotdata", "--manifest", str(out / "manifest.json")]) == 0
    assert main(["emit-plotdata", "--manifest", str(out / "manifest.json"), "--what", "fronts",
                 "--out", str(tmp_path / "csv")]) == 0
    assert list((tmp_path / "csv").glob("*.csv"))
    # radii needs the radial_oracle report, which this run did not produce
    assert main(["emit-plotdata", "--manifest", str(out / "manifest.json"), "--what", "radii"]) == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "hsdrift", "validate", "--config", "/nonexistent.yaml"],
                         capture_output=True, text=True)
    assert res.returncode == 2
