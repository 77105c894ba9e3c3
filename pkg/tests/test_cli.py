import json
import subprocess
import sys
from pathlib import Path

import pytest

from hfo_pipe import cli

from cohort import COHORT, SNN_COLUMN


def _write(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj))
    return path


SPEC = {
    "recordings": [
        {"duration_s": 6, "noise_floor_uv": [5, 9], "channels": ["AR1-2", "AL1-2"], "patient_id": "P1",
         "interval_id": "1", "seed": 1,
         "events": [{"time_s": 2.0, "band": "ripple", "burst_frequency_hz": 165, "amplitude_uv": 30,
                     "channel": "AR1-2"}]},
        {"duration_s": 6, "noise_floor_uv": [5, 9], "channels": ["AR1-2", "AL1-2"], "patient_id": "P1",
         "interval_id": "2", "seed": 2,
         "events": [{"time_s": 4.0, "band": "fast_ripple", "burst_frequency_hz": 350, "amplitude_uv": 30,
                     "channel": "AR1-2"}]},
    ]
}


def test_synth_minimal(tmp_path, capsys):
    spec = _write(tmp_path / "s.json", {"duration_s": 2, "noise_floor_uv": 5})
    assert cli.main(["synth", str(spec), "--out", str(tmp_path / "d")]) == 0
    files = sorted(p.name for p in (tmp_path / "d").iterdir())
    assert files == ["synthetic_0.annotations.csv", "synthetic_0.csv"]
    assert "wrote" in capsys.readouterr().out


def test_synth_byte_identical(tmp_path):
    spec = _write(tmp_path / "s.json", SPEC)
    for d in ("a", "b"):
        assert cli.main(["synth", str(spec), "--out", str(tmp_path / d)]) == 0
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_synth_event_past_duration(tmp_path, capsys):
    spec = _write(tmp_path / "s.json", {"duration_s": 2, "noise_floor_uv": 5, "events": [
        {"time_s": 1.98, "band": "ripple", "burst_frequency_hz": 150, "amplitude_uv": 20}]})
    code = cli.main(["synth", str(spec), "--out", str(tmp_path / "d")])
    assert code == cli.EXIT_CONFIG
    assert "event 0" in capsys.readouterr().err


def test_synth_missing_file(tmp_path):
    assert cli.main(["synth", str(tmp_path / "nope.json")]) == cli.EXIT_CONFIG


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    spec = _write(d / "spec.json", SPEC)
    assert cli.main(["synth", str(spec), "--out", str(d)]) == 0
    config = _write(d / "run.json", {
        "inputs": ["P1_1.csv", "P1_2.csv"],
        "outcomes": {"P1": {"resection": ["AR1-2", "AR2-3"], "ilae": 1}},
    })
    return d, config


def _tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_detect_outputs_and_determinism(dataset, tmp_path, monkeypatch):
    d, config = dataset
    monkeypatch.setenv("HFO_PIPE_THREADS", "1")
    assert cli.main(["detect", "--config", str(config), "--out", str(tmp_path / "o1")]) == 0
    monkeypatch.setenv("HFO_PIPE_THREADS", "4")
    assert cli.main(["detect", "--config", str(config), "--out", str(tmp_path / "o2")]) == 0
    a, b = _tree(tmp_path / "o1"), _tree(tmp_path / "o2")
    assert sorted(a) == ["events/P1_1.csv", "events/P1_2.csv", "manifest.json", "patients/P1.json"]
    assert a == b

    rep = json.loads(a["patients/P1.json"])
    assert rep["channels"] == ["AR1-2", "AL1-2"]
    assert 0.0 <= rep["test_retest"]["score"] <= 1.0
    assert rep["classification"] in ("TN", "TP", "FN", "FP")
    assert rep["mean_rates_per_min"]["AR1-2"] > 0

    man = json.loads(a["manifest.json"])
    assert man["seed"] == 0
    assert man["config"]["network"]["n_neurons"] == 256
    assert man["config"]["detection"]["merge_window_ms"] == pytest.approx(15.0)

    header = a["events/P1_1.csv"].decode().splitlines()[0]
    assert header == "channel,start_s,end_s,n_neurons"


def test_detect_flags_override_file(dataset, tmp_path):
    d, config = dataset
    cfg = json.loads(config.read_text())
    cfg["detection"] = {"merge_window_ms": 30, "outlier_hz": 3.5}
    cfg2 = _write(d / "run2.json", cfg)
    out = tmp_path / "o"
    assert cli.main(["detect", "--config", str(cfg2), "--out", str(out), "--merge-window-ms", "20",
                     "--seed", "7"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["detection"]["merge_window_ms"] == pytest.approx(20.0)
    assert man["config"]["detection"]["outlier_hz"] == 3.5  # file beats default
    assert man["seed"] == 7 and man["config"]["network"]["seed"] == 7


def test_detect_bad_band_is_config_error(dataset, tmp_path, capsys):
    d, config = dataset
    code = cli.main(["detect", "--config", str(config), "--out", str(tmp_path / "o"), "--fast-ripple", "250:1500"])
    assert code == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_detect_missing_input_and_empty(tmp_path):
    cfg = _write(tmp_path / "c.json", {"inputs": ["missing.csv"]})
    assert cli.main(["detect", "--config", str(cfg), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    cfg = _write(tmp_path / "c2.json", {"inputs": []})
    assert cli.main(["detect", "--config", str(cfg), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_detect_bad_data(tmp_path):
    (tmp_path / "bad.csv").write_text("time_s,A\n0.0,1\n0.001,nan\n")
    cfg = _write(tmp_path / "c.json", {"inputs": ["bad.csv"]})
    assert cli.main(["detect", "--config", str(cfg), "--out", str(tmp_path / "o")]) == cli.EXIT_DATA


def _cohort_reports(tmp_path: Path, rows) -> Path:
    rdir = tmp_path / "reports"
    rdir.mkdir()
    for pid, contained, ilae in rows:
        area = ["A"] if contained else ["A", "C"]
        _write(rdir / f"P{pid}.json", {"patient_id": f"P{pid}", "hfo_area": area, "resection": ["A", "B"],
                                        "ilae": ilae, "channels": ["A", "B", "C"],
                                        "mean_rates_per_min": {"A": 3.0, "B": 1.0, "C": 0.5}})
    return rdir


def test_report_cohort_column(tmp_path):
    rdir = _cohort_reports(tmp_path, COHORT)
    out = tmp_path / "r"
    assert cli.main(["report", str(rdir), "--out", str(out)]) == 0
    shown = json.loads((out / "metrics.json").read_text())["display"]
    assert shown == {k: str(v) for k, v in SNN_COLUMN.items()}
    md = (out / "metrics.md").read_text()
    assert "| Sensitivity | 33 |" in md and "| PPV | 100 |" in md
    assert (out / "rates.svg").read_text().startswith("<?xml")


def test_report_single_patient_renders_undefined(tmp_path):
    rdir = _cohort_reports(tmp_path, COHORT[:1])
    out = tmp_path / "r"
    assert cli.main(["report", str(rdir), "--out", str(out)]) == 0
    md = (out / "metrics.md").read_text()
    assert "| Sensitivity | -- |" in md and "| Specificity | 100 |" in md


def test_report_resection_file_overrides(tmp_path):
    rdir = _cohort_reports(tmp_path, COHORT[:1])
    res = _write(tmp_path / "res.json", {"P1": {"resection": ["B"], "ilae": 3}})
    out = tmp_path / "r"
    assert cli.main(["report", str(rdir), "--resection", str(res), "--out", str(out)]) == 0
    pats = json.loads((out / "metrics.json").read_text())["patients"]
    assert pats == [{"patient_id": "P1", "classification": "TP"}]


def test_report_empty_input(tmp_path):
    assert cli.main(["report", "--out", str(tmp_path / "r")]) != 0
    (tmp_path / "empty").mkdir()
    assert cli.main(["report", str(tmp_path / "empty")]) != 0


def test_report_svg_reproducible(tmp_path):
    rdir = _cohort_reports(tmp_path, COHORT)
    code = ("import sys; from hfo_pipe.cli import main; "
            "sys.exit(main(['report', sys.argv[1], '--out', sys.argv[2]]))")
    for name in ("r1", "r2"):
        subprocess.run([sys.executable, "-c", code, str(rdir), str(tmp_path / name)], check=True,
                       capture_output=True)
    assert (tmp_path / "r1" / "rates.svg").read_bytes() == (tmp_path / "r2" / "rates.svg").read_bytes()


def test_sweep_command(tmp_path):
    spec = _write(tmp_path / "s.json", {
        "duration_s": 8, "noise_floor_uv": 5, "seed": 3, "patient_id": "L", "interval_id": "1",
        "events": [{"time_s": 2.0 + 1.5 * i, "band": "ripple", "burst_frequency_hz": 160, "amplitude_uv": 15}
                   for i in range(4)]})
    assert cli.main(["synth", str(spec), "--out", str(tmp_path)]) == 0
    cfg = _write(tmp_path / "sw.json", {
        "labeled": {"recording": "L_1.csv", "annotations": "L_1.annotations.csv"},
        "grid": {"adm": [{"threshold_uv": 1.0}, {}], "network": [{"n_neurons": 32}]},
    })
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    res = json.loads((tmp_path / "o" / "sweep.json").read_text())["results"]
    assert [r["rank"] for r in res] == [1, 2]
    assert res[0]["grid_index"] == 1


def test_sweep_needs_labels(tmp_path):
    cfg = _write(tmp_path / "sw.json", {})
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_design_command(capsys):
    assert cli.main(["design", "--json"]) == 0
    rows = json.loads(capsys.readouterr().out)
    blocks = {r["block"]: r for r in rows}
    assert blocks["tow_thomas"]["f0_hz"] == pytest.approx(80.0176, rel=1e-5)
    assert cli.main(["design"]) == 0
    assert "tow_thomas" in capsys.readouterr().out
    assert cli.main(["design", "--r1", "-5"]) == cli.EXIT_CONFIG


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "hfo_pipe.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip()
