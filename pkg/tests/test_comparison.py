import csv
import io
import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blowuplab.comparison import compare, dominance_check, dominance_r_grid, lower_bound
from blowuplab.solver import build_grid, run, SolverConfig
from blowuplab.subsolution import collapse, initial_data, subsolution_values


@pytest.mark.parametrize("case", ["n1_run", "n2_run"])
def test_compare_certified_runs(case, request):
    problem, params, traj = request.getfixturevalue(case)
    rep = compare(traj, params, problem)
    assert rep.precondition_ok and abs(rep.initial_gap) <= 1e-14 * problem.mass_scale
    assert rep.ordering_ok and rep.min_gap >= -rep.tolerance
    assert rep.lower_bound_ok and rep.lower_bound_series
    assert rep.checked_times >= 2 and not rep.inconclusive_times
    assert rep.tolerance == pytest.approx(1e-6 * problem.mass_scale)


def test_compare_pchip_sampling(n2_run):
    problem, params, traj = n2_run
    rep = compare(traj, params, problem, sampling="pchip", tolerance=1e-2 * problem.mass_scale)
    assert rep.sampling == "pchip" and rep.ordering_ok
    with pytest.raises(ValueError):
        compare(traj, params, problem, sampling="linear")


def test_compare_detects_violation(n1_run):
    # lowering the data below the subsolution breaks the precondition
    problem, params, traj = n1_run
    low = replace(traj, snapshots=[w * 0.9 for w in traj.snapshots])
    low.snapshots[0][-1] = problem.mass_scale
    rep = compare(low, params, problem)
    assert not rep.precondition_ok and not rep.ordering_ok and rep.initial_gap < 0


def test_compare_marks_non_monotone_inconclusive(n1_run):
    problem, params, traj = n1_run
    snaps = [w.copy() for w in traj.snapshots]
    snaps[1][5] = snaps[1][4]
    mono = list(traj.monotone)
    mono[1] = False
    rep = compare(replace(traj, snapshots=snaps, monotone=mono), params, problem)
    assert rep.inconclusive_times == [traj.times[1]]
    assert rep.checked_times == compare(traj, params, problem).checked_times - 1


def test_compare_skips_late_times(n1_run):
    problem, params, traj = n1_run
    rep = compare(traj, params, problem, t_fraction=1e-12)
    assert rep.checked_times == 1 and rep.lower_bound_series[0][0] == 0.0


def test_lower_bound_increasing_near_T(certified_sets):
    for pr, cp in certified_sets:
        ts = np.linspace(0.5 * cp.T, 0.999 * cp.T, 200)
        vals = np.array([lower_bound(cp, pr, t) for t in ts])
        assert np.all(np.diff(vals) > 0), pr
        assert vals[-1] > vals[0] * 10


@settings(max_examples=20, deadline=None)
@given(frac=st.floats(0.0, 0.99))
def test_lower_bound_is_mean_density_over_n(certified_sets, frac):
    # mass of the subsolution inside s <= B(t) is lambda A(t), so the mean
    # density there is n lambda A / B and the bound sits a factor n below it
    for pr, cp in certified_sets:
        t = frac * cp.T
        B = collapse(cp.B0, cp.kappa, pr.n, t)[0]
        mean = pr.n * subsolution_values(cp, pr, np.array([B]), t)[0] / B
        assert mean == pytest.approx(pr.n * lower_bound(cp, pr, t), rel=1e-10)


# --- initial-mass dominance ---------------------------------------------------------

@pytest.mark.parametrize("case", ["n1_case", "n2_case"])
def test_dominance_examples(case, request):
    pr, cp = request.getfixturevalue(case)
    r = dominance_r_grid(cp, pr)
    u0 = initial_data(cp, pr, r)
    assert dominance_check(u0, r, cp, pr)[0]
    assert dominance_check(1.1 * u0, r, cp, pr)[0]
    ok, worst_r, margin = dominance_check(np.full_like(r, pr.mu), r, cp, pr)
    assert not ok and margin < 0 and 0 < worst_r < pr.R


def test_dominance_rejects_bad_grid(n1_case):
    pr, cp = n1_case
    with pytest.raises(ValueError):
        dominance_check(np.ones(5), np.linspace(0.1, 1, 5), cp, pr)
    with pytest.raises(ValueError):
        dominance_check(np.ones(4), np.linspace(0, 1, 5), cp, pr)


def test_dominance_grid_layout(n1_case):
    pr, cp = n1_case
    r = dominance_r_grid(cp, pr, size=501)
    assert r.size == 501 and r[0] == 0.0 and r[-1] == pr.R
    assert np.all(np.diff(r) > 0) and np.count_nonzero(r <= cp.B0) > 50


# --- serialisation --------------------------------------------------------------------

def test_report_serialisation(n2_run):
    problem, params, traj = n2_run
    rep = compare(traj, params, problem)
    d = json.loads(rep.to_json())
    assert d["ordering_ok"] is True and d["sampling"] == "nodes"
    assert len(d["lower_bound_series"]) == len(rep.lower_bound_series)
    rows = list(csv.reader(io.StringIO(rep.lower_bound_csv())))
    assert rows[0] == ["t", "bound", "observed"]
    assert [tuple(map(float, r)) for r in rows[1:]] == rep.lower_bound_series


def test_subsolution_data_run_compares_at_nodes(n2_case):
    # short run on a coarse grid: the first snapshot is exactly the subsolution
    pr, cp = n2_case
    g = build_grid(200, "geometric:1.05", s_max=pr.s_max)
    w0 = subsolution_values(cp, pr, g.s_nodes, 0.0)
    w0[0], w0[-1] = 0.0, pr.mass_scale
    traj = run(pr, g, w0, SolverConfig(horizon=1e-3 * cp.T))
    rep = compare(traj, cp, pr)
    assert abs(rep.initial_gap) <= 1e-14 * pr.mass_scale and rep.ordering_ok
