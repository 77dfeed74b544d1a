"""Runtime diagnostics for the comparison argument.

Checks that a numerical trajectory stays above the analytic subsolution and
that its peak density respects the lower bound ``lambda A(t) / B(t)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson, cumulative_trapezoid
from scipy.interpolate import PchipInterpolator

from .operator import certificate_s_grid
from .params import CertifiedParams, ProblemParams
from .solver import Trajectory, _csv, _fmt, u_from_w
from .subsolution import collapse, horizon, mass_floor, subsolution_values, time_coefficients


@dataclass
class ComparisonReport:
    tolerance: float
    precondition_ok: bool
    initial_gap: float
    min_gap: float
    argmin: tuple
    ordering_ok: bool
    lower_bound_factor: float
    lower_bound_ok: bool
    lower_bound_series: list = field(default_factory=list)  # (t, bound, observed)
    unresolved_times: list = field(default_factory=list)
    inconclusive_times: list = field(default_factory=list)
    checked_times: int = 0
    sampling: str = "nodes"

    def to_dict(self) -> dict:
        return {
            "ordering_ok": self.ordering_ok,
            "lower_bound_ok": self.lower_bound_ok,
            "precondition_ok": self.precondition_ok,
            "tolerance": self.tolerance,
            "initial_gap": self.initial_gap,
            "min_gap": self.min_gap,
            "argmin": list(self.argmin),
            "lower_bound_factor": self.lower_bound_factor,
            "checked_times": self.checked_times,
            "sampling": self.sampling,
            "inconclusive_times": self.inconclusive_times,
            "unresolved_times": self.unresolved_times,
            "lower_bound_series": [list(r) for r in self.lower_bound_series],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    def lower_bound_csv(self) -> str:
        rows = [("t", "bound", "observed")]
        rows += [tuple(_fmt(x) for x in r) for r in self.lower_bound_series]
        return _csv(rows)


def lower_bound(params: CertifiedParams, problem: ProblemParams, t: float) -> float:
    """Blow-up lower bound ``lambda A(t) / B(t)`` on the peak density."""
    B, Bp = collapse(params.B0, params.kappa, problem.n, t)
    return params.lam * time_coefficients(params, problem, B, Bp).A / B


def compare(trajectory: Trajectory, params: CertifiedParams, problem: ProblemParams,
            tolerance: float | None = None, lower_bound_factor: float = 0.95,
            sampling: str = "nodes", min_inner_nodes: int = 8,
            t_fraction: float = 0.999) -> ComparisonReport:
    """Compare every saved snapshot with the subsolution.

    ``sampling="nodes"`` compares at the solver nodes, where no
    interpolation is needed; ``"pchip"`` adds cell midpoints, using
    monotone cubic interpolation of the numerical solution (its error near
    the kinks of the subsolution can exceed tight tolerances on coarse
    grids).  Times at or beyond ``t_fraction * T`` are skipped,
    as are lower-bound checks once fewer than ``min_inner_nodes`` nodes lie
    inside ``[0, B(t)]``.
    """
    if sampling not in ("nodes", "pchip"):
        raise ValueError("sampling must be 'nodes' or 'pchip'")
    M = problem.mass_scale
    tol = 1e-6 * M if tolerance is None else float(tolerance)
    s = trajectory.grid.s_nodes
    n = problem.n
    T = horizon(params.B0, params.kappa, n)
    t_stop = t_fraction * T
    if sampling == "pchip":
        mids = 0.5 * (s[1:] + s[:-1])
        pts = np.sort(np.concatenate([s, mids]))
    else:
        pts = s

    w_init = trajectory.snapshots[0]
    init_gap = float(np.min(w_init - subsolution_values(params, problem, s, 0.0)))
    pre_ok = init_gap >= -tol

    min_gap, argmin = math.inf, (math.nan, math.nan)
    lb_series, unresolved, inconclusive = [], [], []
    checked = 0
    for t, w, mono in zip(trajectory.times, trajectory.snapshots, trajectory.monotone):
        if t >= t_stop:
            continue
        if not mono:
            inconclusive.append(float(t))
            continue
        checked += 1
        vals = PchipInterpolator(s, w)(pts) if sampling == "pchip" else w
        gap = vals - subsolution_values(params, problem, pts, t)
        i = int(np.argmin(gap))
        if gap[i] < min_gap:
            min_gap, argmin = float(gap[i]), (float(pts[i]), float(t))
        B = collapse(params.B0, params.kappa, n, t)[0]
        bound = lower_bound(params, problem, t)
        observed = float(np.max(u_from_w(trajectory.grid, w, n)))
        if np.count_nonzero(s[1:] <= B) >= min_inner_nodes:
            lb_series.append((float(t), bound, observed))
        else:
            unresolved.append(float(t))
    ordering_ok = bool(pre_ok and checked > 0 and min_gap >= -tol)
    lb_ok = bool(lb_series) and all(o >= lower_bound_factor * b for _, b, o in lb_series)
    return ComparisonReport(tolerance=tol, precondition_ok=pre_ok, initial_gap=init_gap,
                            min_gap=min_gap, argmin=argmin, ordering_ok=ordering_ok,
                            lower_bound_factor=lower_bound_factor, lower_bound_ok=lb_ok,
                            lower_bound_series=lb_series, unresolved_times=unresolved,
                            inconclusive_times=inconclusive, checked_times=checked,
                            sampling=sampling)


def dominance_check(u0_values, r, params: CertifiedParams, problem: ProblemParams,
                    rtol: float = 1e-6):
    """Check ``omega_n * int_0^r rho^(n-1) u0 drho >= M_m(r)`` on an r-grid.

    The cumulative mass uses the trapezoid rule; its error is estimated by
    the difference to cumulative Simpson and added to the allowance
    ``rtol * m``, so the equality case passes within quadrature error.
    Returns ``(ok, worst_r, worst_margin)`` where the margin is cumulative
    mass minus floor plus allowance (negative means violated).
    """
    r = np.asarray(r, dtype=float)
    u0 = np.asarray(u0_values, dtype=float)
    if r.shape != u0.shape or r.ndim != 1 or r.size < 3 or r[0] != 0.0:
        raise ValueError("u0 and r must be matching 1-d arrays starting at r = 0")
    n = problem.n
    f = problem.omega_n * r ** (n - 1) * u0
    cum = cumulative_trapezoid(f, r, initial=0.0)
    err = np.abs(cum - cumulative_simpson(f, x=r, initial=0.0))
    margin = cum - mass_floor(params, problem, r) + err + rtol * problem.m
    i = int(np.argmin(margin))
    return bool(margin[i] >= 0.0), float(r[i]), float(margin[i])


def dominance_r_grid(params: CertifiedParams, problem: ProblemParams, size: int = 4001,
                     ratio: float = 1.01) -> np.ndarray:
    """r-grid resolving the initial inner scale ``B0``, for :func:`dominance_check`."""
    s = np.concatenate([[0.0], certificate_s_grid(problem, params.B0, size - 1, ratio=ratio)])
    s[-1] = problem.s_max
    return s ** (1.0 / problem.n)
