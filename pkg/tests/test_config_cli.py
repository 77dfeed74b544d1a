import csv
import json
import math
import subprocess
import sys

import pytest

from blowuplab.cli import main, regime
from blowuplab.config import ConfigError, load_config
from blowuplab.params import certifiable_mass

from conftest import CONFIGS


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture
def outdir(tmp_path, monkeypatch):
    monkeypatch.setenv("BLOWUPLAB_OUTDIR", str(tmp_path))
    return tmp_path


# --- configuration -----------------------------------------------------------------

def test_load_shipped_configs():
    cfg = load_config(CONFIGS / "n1_certifiable.ini")
    assert cfg.problem.m == "2 * m_c_certifiable"
    assert cfg.problem.resolve_mass() == pytest.approx(4 / math.sqrt(3), rel=1e-8)
    assert cfg.solver.grid_size == 400 and cfg.certify.Ns == 2000
    assert load_config(CONFIGS / "n1_standard.ini").problem.resolve_mass() == pytest.approx(
        2 / math.sqrt(3), rel=1e-8)
    for name in ("n2.ini", "steady.ini", "phase_n2.ini"):
        load_config(CONFIGS / name)


def test_overrides_and_defaults():
    cfg = load_config(None, [("problem.m", "3.5"), ("solver.grading", "uniform")])
    assert cfg.problem.m == 3.5 and cfg.solver.grading == "uniform"
    assert cfg.solver.horizon is None and cfg.compare.sampling == "nodes"
    assert set(cfg.to_dict()) == {"problem", "select", "solver", "certify", "compare",
                                  "sweep", "output"}


@pytest.mark.parametrize("ov", [[("problem.colour", "red")], [("plot.x", "1")],
                                [("problem.n", "two")], [("solver.grading", "geometric:0.9")],
                                [("problem.m", "-1")], [("sweep.p_min", "0.5")],
                                [("solver", "1")], [("certify.t_fraction", "1.5")]])
def test_bad_configs(ov):
    with pytest.raises(ConfigError):
        load_config(None, ov)


def test_mass_in_units_of_mc_needs_n1():
    cfg = load_config(None, [("problem.n", "2"), ("problem.m", "2 * m_c")])
    with pytest.raises(ConfigError):
        cfg.problem.resolve_mass()


def test_unreadable_and_malformed(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")
    bad = tmp_path / "bad.ini"
    bad.write_text("no section header\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(bad)


# --- mc and params ------------------------------------------------------------------------

def test_mc_command(outdir, capsys):
    assert main(["mc", "--chi", "2", "--p", "1", "--q", "1", "--R", "1"]) == 0
    assert "m_c = 0.5773503" in capsys.readouterr().out
    d = read_json(outdir / "mc.json")
    assert d["m_c"] == pytest.approx(d["closed_form"], rel=1e-8)
    assert main(["mc", "--chi", "2", "--variant", "certifiable"]) == 0
    assert read_json(outdir / "mc.json")["m_c"] == pytest.approx(
        certifiable_mass(2.0, 1, 1, 1).m_c)


def test_mc_errors(outdir, capsys):
    assert main(["mc", "--chi", "0.5"]) == 3
    assert main(["mc", "--chi", "2", "--p", "2", "--q", "1"]) == 64
    assert main(["mc", "--bogus", "1"]) == 64
    assert main(["mc", "--set", "problem.colour=red"]) == 64
    assert main(["mc", "--set", "nodot"]) == 64
    assert main([]) == 64


def test_params_command(outdir, capsys):
    assert main(["params", str(CONFIGS / "n2.ini")]) == 0
    d = read_json(outdir / "params.json")
    assert d["feasibility"]["feasible"] and d["params"]["lambda"] == pytest.approx(1 / 3)
    assert main(["params", str(CONFIGS / "n1_standard.ini")]) == 3
    assert read_json(outdir / "params.json")["params"] is None


# --- certify, simulate, compare --------------------------------------------------------------

def test_certify_exit_codes(outdir, capsys):
    small = ["--Ns", "200", "--Nt", "100"]
    assert main(["certify", str(CONFIGS / "n2.ini")] + small) == 0
    assert read_json(outdir / "certificate.json")["certificate"]["passed"] is True
    assert main(["certify", str(CONFIGS / "n1_certifiable.ini"), "--kappa-factor", "10"]
                + small) == 1
    d = read_json(outdir / "certificate.json")
    assert d["kappa_factor"] == 10 and d["certificate"]["violation_count"] > 0
    assert main(["certify", str(CONFIGS / "n1_standard.ini")] + small) == 3


def test_simulate_outputs(outdir, capsys):
    assert main(["simulate", str(CONFIGS / "steady.ini")]) == 0
    assert "completed" in capsys.readouterr().out
    meta = read_json(outdir / "trajectory.json")
    assert meta["trajectory"]["status"]["kind"] == "Completed"
    assert meta["horizon_source"] == "config"
    with open(outdir / "series.csv", encoding="utf-8") as fh:
        assert next(csv.reader(fh)) == ["t", "sup_u", "mass", "dt"]
    assert (outdir / "snapshots.csv").exists()
    assert main(["simulate", str(CONFIGS / "n1_standard.ini")]) == 3


def test_simulate_step_collapse_exit(outdir, capsys):
    args = ["simulate", str(CONFIGS / "steady.ini"), "--initial-data", "bump",
            "--set", "solver.dt_max=1e-30", "--horizon", "1e-3"]
    # dt_max below dt_min forces a collapse on the first step
    assert main(args) == 2
    assert read_json(outdir / "trajectory.json")["trajectory"]["status"]["kind"] == "StepCollapse"


def test_compare_command(outdir, capsys):
    assert main(["compare", str(CONFIGS / "n2.ini")]) == 0
    d = read_json(outdir / "comparison.json")
    assert d["ordering_ok"] and d["lower_bound_ok"] and d["dominance"]["ok"]
    assert d["t_star_below_T"] and d["status"]["kind"] == "BlowUpThreshold"
    assert (outdir / "lower_bound.csv").exists()
    assert main(["compare", str(CONFIGS / "n1_standard.ini")]) == 3
    d = read_json(outdir / "comparison.json")
    assert d["ordering_ok"] is None and d["feasibility"]["feasible"] is False


def test_explicit_outdir_flag(tmp_path, capsys):
    target = tmp_path / "nested" / "out"
    assert main(["mc", "--chi", "3", "--outdir", str(target)]) == 0
    assert (target / "mc.json").exists()


# --- phase sweep --------------------------------------------------------------------------

def test_regime_labels():
    assert regime(2, 1.0, 1.0) == "blowup"
    assert regime(2, 2.5, 1.0) == "global"
    assert regime(2, 1.5, 1.0) == "band"
    assert regime(1, 1.5, 1.0) == "global"  # the band is empty for n = 1


def test_small_phase_sweep(outdir, capsys):
    args = ["phase", str(CONFIGS / "phase_n2.ini"), "--workers", "1",
            "--set", "sweep.steps=2"]
    assert main(args) == 0
    d = read_json(outdir / "phase.json")
    cls = {(c["p"], c["q"]): c["classification"] for c in d["cells"]}
    assert cls == {(1.0, 1.0): "blowup_observed", (1.0, 2.5): "blowup_observed",
                   (2.5, 1.0): "no_blowup_in_horizon", (2.5, 2.5): "blowup_observed"}
    with open(outdir / "phase.csv", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:4] == ["p", "q", "regime", "classification"] and len(rows) == 5
    assert len(list((outdir / "cells").iterdir())) == 4


# --- determinism and packaging ----------------------------------------------------------------

def test_byte_identical_reruns(tmp_path, monkeypatch, capsys):
    outputs = []
    for k in range(2):
        monkeypatch.setenv("BLOWUPLAB_OUTDIR", str(tmp_path / f"run{k}"))
        assert main(["compare", str(CONFIGS / "n2.ini")]) == 0
        outputs.append({p.name: p.read_bytes() for p in (tmp_path / f"run{k}").iterdir()})
    assert outputs[0] == outputs[1]


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "blowuplab", "mc", "--chi", "2",
                          "--outdir", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0 and "0.5773503" in res.stdout
