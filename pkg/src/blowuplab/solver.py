"""Method-of-lines solver for the radial mass accumulation equation.

Unknowns are the interior nodal values of ``w``; the Dirichlet values at
``s = 0`` and ``s = R^n`` are never evolved.  Spatial derivatives use
three-point differences on the (possibly graded) grid: fully centred with
``spatial="centered"``, or with the transport-like prefactors taken from
the upwind side with ``spatial="upwind"`` (the default, needed once the
diffusion saturates near blow-up).

Steppers: ``semi_implicit`` (linearly implicit diffusion, explicit
chemotaxis under a CFL limit), ``explicit`` (scipy RK23 with error
control) and ``rosenbrock`` (banded linearly implicit, error control).
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import RK23
from scipy.linalg import solve_banded
from scipy.optimize import isotonic_regression

from .params import ProblemParams
from .rosenbrock import Rosenbrock23

STEPPERS = ("semi_implicit", "explicit", "rosenbrock")


@dataclass(frozen=True)
class Grid:
    s_nodes: np.ndarray
    grading: str

    def __post_init__(self):
        s = np.asarray(self.s_nodes, dtype=float)
        if s.ndim != 1 or s.size < 18:
            raise ValueError("grid needs at least 18 nodes (16 interior)")
        if s[0] != 0.0 or not np.all(np.diff(s) > 0):
            raise ValueError("grid nodes must start at 0 and increase strictly")
        s.setflags(write=False)
        object.__setattr__(self, "s_nodes", s)

    @property
    def size(self) -> int:
        return self.s_nodes.size

    def to_dict(self) -> dict:
        return {"N": self.size, "grading": self.grading, "s_max": float(self.s_nodes[-1])}


def build_grid(N: int, grading="uniform", s_max: float = 1.0) -> Grid:
    """Nodes on ``[0, s_max]``.

    ``grading`` is ``"uniform"``, ``("geometric", ratio)`` or the string
    ``"geometric:<ratio>"``.  Geometric spacing grows by ``ratio`` per cell
    from ``s = 0``.
    """
    if int(N) != N or N < 18:
        raise ValueError(f"N must be an integer >= 18, got {N!r}")
    N = int(N)
    if isinstance(grading, str) and grading.startswith("geometric"):
        _, _, val = grading.partition(":")
        grading = ("geometric", float(val) if val else 1.05)
    if grading == "uniform":
        s = np.linspace(0.0, s_max, N)
        desc = "uniform"
    elif isinstance(grading, tuple) and grading[0] == "geometric":
        r = float(grading[1])
        if not r > 1.0:
            raise ValueError("geometric ratio must exceed 1")
        h0 = s_max * (r - 1.0) / (r ** (N - 1) - 1.0)
        s = np.concatenate([[0.0], h0 * np.cumsum(r ** np.arange(N - 1))])
        s[-1] = s_max
        desc = f"geometric:{r!r}"
    else:
        raise ValueError(f"unknown grading {grading!r}")
    return Grid(s, desc)


@dataclass(frozen=True)
class SolverConfig:
    stepper: str = "semi_implicit"
    spatial: str = "upwind"
    horizon: float = 1.0
    cfl: float = 0.5
    rtol: float = 1e-6
    atol: float = 1e-10  # relative to m/omega_n
    dt_init: float = 1e-8  # relative to the horizon
    dt_min: float = 1e-20  # relative to the horizon
    dt_max: float = math.inf
    U_max: Optional[float] = None
    U_max_factor: float = 1e6
    monotonicity: str = "flag"
    save_stride: int = 50
    series_stride: int = 1
    save_times: tuple = ()

    def __post_init__(self):
        if self.stepper not in STEPPERS:
            raise ValueError(f"unknown stepper {self.stepper!r}")
        if self.spatial not in ("upwind", "centered"):
            raise ValueError("spatial must be 'upwind' or 'centered'")
        if self.monotonicity not in ("flag", "project"):
            raise ValueError("monotonicity must be 'flag' or 'project'")
        if not (self.dt_min > 0 and self.horizon > 0 and self.save_stride >= 1
                and self.series_stride >= 1 and 0 < self.cfl <= 1):
            raise ValueError("dt_min, horizon, strides must be positive and 0 < cfl <= 1")


@dataclass(frozen=True)
class Status:
    kind: str  # Completed | BlowUpThreshold | StepCollapse
    t: float
    value: float  # horizon, sup u at crossing, or last dt
    detail: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Trajectory:
    grid: Grid
    n: int
    omega_n: float
    times: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    series: list = field(default_factory=list)  # (t, sup_u, mass, dt)
    monotone: list = field(default_factory=list)
    status: Optional[Status] = None
    steps: int = 0
    initial_sup_u: float = math.nan
    threshold: float = math.nan

    @property
    def sup_u_series(self):
        return [(t, u) for t, u, _, _ in self.series]

    @property
    def mass_series(self):
        return [(t, m) for t, _, m, _ in self.series]

    def snapshot_array(self) -> np.ndarray:
        return np.asarray(self.snapshots)

    def metadata(self) -> dict:
        return {"status": self.status.to_dict() if self.status else None,
                "steps": self.steps, "n": self.n, "grid": self.grid.to_dict(),
                "initial_sup_u": self.initial_sup_u, "threshold": self.threshold,
                "saved_times": len(self.times),
                "non_monotone_snapshots": [t for t, ok in zip(self.times, self.monotone) if not ok]}

    def series_csv(self) -> str:
        return _csv([("t", "sup_u", "mass", "dt")] + [tuple(map(_fmt, r)) for r in self.series])

    def snapshots_csv(self) -> str:
        rows = [("t",) + tuple(_fmt(x) for x in self.grid.s_nodes)]
        for t, w in zip(self.times, self.snapshots):
            rows.append((_fmt(t),) + tuple(_fmt(x) for x in w))
        return _csv(rows)

    def metadata_json(self) -> str:
        return json.dumps(self.metadata(), indent=2, ensure_ascii=False) + "\n"


def _fmt(x) -> str:
    return repr(float(x))


def _csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# spatial operator

def _stencil(s: np.ndarray):
    hm = s[1:-1] - s[:-2]
    hp = s[2:] - s[1:-1]
    den = hm * hp * (hm + hp)
    # first derivative weights (minus, centre, plus)
    c1 = (-hp * hp / den, (hp * hp - hm * hm) / den, hm * hm / den)
    c2 = (2.0 * hp / den, -2.0 * (hm + hp) / den, 2.0 * hm / den)
    return c1, c2


def derivatives(s: np.ndarray, w: np.ndarray):
    """Centred first and second differences at interior nodes."""
    c1, c2 = _stencil(s)
    wm, w0, wp = w[:-2], w[1:-1], w[2:]
    return c1[0] * wm + c1[1] * w0 + c1[2] * wp, c2[0] * wm + c2[1] * w0 + c2[2] * wp


def _one_sided(s: np.ndarray):
    """Three-point one-sided first-derivative weights at interior nodes.

    Right-biased weights use nodes (i, i+1, i+2) and left-biased weights use
    (i-2, i-1, i); next to the boundary the two-point difference is used.
    """
    m = s.size - 2
    i = np.arange(1, s.size - 1)
    right = np.zeros((3, m))
    left = np.zeros((3, m))
    ok = i + 2 <= s.size - 1
    h1 = s[i[ok] + 1] - s[i[ok]]
    h2 = s[i[ok] + 2] - s[i[ok] + 1]
    right[0, ok] = -(2 * h1 + h2) / (h1 * (h1 + h2))
    right[1, ok] = (h1 + h2) / (h1 * h2)
    right[2, ok] = -h1 / (h2 * (h1 + h2))
    hb = s[i[~ok] + 1] - s[i[~ok]]
    right[0, ~ok], right[1, ~ok] = -1.0 / hb, 1.0 / hb
    ok = i - 2 >= 0
    g1 = s[i[ok]] - s[i[ok] - 1]
    g2 = s[i[ok] - 1] - s[i[ok] - 2]
    left[0, ok] = (2 * g1 + g2) / (g1 * (g1 + g2))
    left[1, ok] = -(g1 + g2) / (g1 * g2)
    left[2, ok] = g1 / (g2 * (g1 + g2))
    gb = s[i[~ok]] - s[i[~ok] - 1]
    left[0, ~ok], left[1, ~ok] = 1.0 / gb, -1.0 / gb
    return right, left


class _RHS:
    """Semi-discrete right-hand side.

    Both terms are written as ``(prefactor in w_s) * (bounded factor)``.  The
    prefactor uses a one-sided second-order difference taken from the side
    the term transports information from: the sign of ``w_ss`` for the
    diffusive part and the sign of ``X`` for the chemotactic part.  In the
    flux-saturated regime both behave like transport, where centred
    prefactors produce odd-even chatter.  Linear profiles are reproduced
    exactly by every stencil.
    """

    bandwidth = 2

    def __init__(self, problem: ProblemParams, s: np.ndarray, upwind: bool = True):
        n = problem.n
        self.p, self.q, self.chi, self.n = problem.p, problem.q, problem.chi, n
        self.s = s
        si = s[1:-1]
        self.half = np.exp((1.0 - 1.0 / n) * np.log(si))  # s^(1-1/n)
        self.lin = problem.mu / n * si
        self.wl, self.wr = 0.0, problem.mass_scale
        self.c1, self.c2 = _stencil(s)
        self.right, self.left = _one_sided(s)
        self.upwind = upwind
        self.cdiff = n ** self.p
        self.cchem = n ** self.q * self.chi

    def full(self, y):
        w = np.empty(y.size + 2)
        w[0], w[-1], w[1:-1] = self.wl, self.wr, y
        return w

    def _sided(self, w, forward):
        m = w.size - 2
        wp2 = np.append(w[3:], w[-1])  # padded; weight is zero where unused
        wm2 = np.insert(w[:-3], 0, w[0])
        fr = self.right[0] * w[1:-1] + self.right[1] * w[2:] + self.right[2] * wp2
        bl = self.left[0] * w[1:-1] + self.left[1] * w[:-2] + self.left[2] * wm2
        del m
        return np.where(forward, fr, bl)

    def __call__(self, t, y):
        w = self.full(y)
        wm, w0, wp = w[:-2], w[1:-1], w[2:]
        c1, c2 = self.c1, self.c2
        wsc = c1[0] * wm + c1[1] * w0 + c1[2] * wp
        wss = c2[0] * wm + c2[1] * w0 + c2[2] * wp
        X = w0 - self.lin
        if self.upwind:
            ws_d = np.maximum(self._sided(w, wss > 0), 0.0)
            ws_c = np.maximum(self._sided(w, X > 0), 0.0)
        else:
            ws_d = ws_c = np.maximum(wsc, 0.0)
        # bounded factor z/sqrt(1+z^2) with z = n s^(1-1/n) w_ss / w_s
        num = self.n * self.half * wss
        den = np.hypot(np.maximum(wsc, 0.0), num)
        G = np.divide(num, den, out=np.zeros_like(den), where=den > 0)
        diff = self.cdiff * self.half * ws_d ** self.p * G
        chem = self.cchem * X * ws_c ** self.q / np.hypot(1.0, X / self.half)
        return diff + chem


def u_from_w(grid: Grid, snapshot, n: int = 1) -> np.ndarray:
    """Density ``u = n * dw/ds`` at every node (one-sided at the ends)."""
    s = grid.s_nodes
    w = np.asarray(snapshot, dtype=float)
    ws = np.empty_like(w)
    ws[1:-1] = derivatives(s, w)[0]
    h0, h1 = s[1] - s[0], s[2] - s[1]
    ws[0] = (-(2 * h0 + h1) / (h0 * (h0 + h1)) * w[0] + (h0 + h1) / (h0 * h1) * w[1]
             - h0 / (h1 * (h0 + h1)) * w[2])
    g0, g1 = s[-1] - s[-2], s[-2] - s[-3]
    ws[-1] = ((2 * g0 + g1) / (g0 * (g0 + g1)) * w[-1] - (g0 + g1) / (g0 * g1) * w[-2]
              + g0 / (g1 * (g0 + g1)) * w[-3])
    return n * ws


def is_monotone(w) -> bool:
    return bool(np.all(np.diff(np.asarray(w)) > 0))


def v_gradient(problem: ProblemParams, grid: Grid, snapshot, r):
    """Radial derivative of the chemical signal, ``mu r/n - r^(1-n) w(r^n)``."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0) or np.any(r > problem.R * (1 + 1e-15)):
        raise ValueError("r must lie in (0, R]")
    n = problem.n
    w = np.interp(np.minimum(r ** n, problem.s_max), grid.s_nodes, np.asarray(snapshot))
    out = problem.mu * r / n - r ** (1 - n) * w
    return float(out) if out.ndim == 0 else out


def detect_blowup(sup_u_series, threshold: float) -> Optional[float]:
    if len(sup_u_series) == 0:
        raise ValueError("empty series")
    for t, u in sup_u_series:
        if u >= threshold:
            return float(t)
    return None


# ---------------------------------------------------------------------------

class _SemiImplicit:
    """Linearly implicit Euler for the flux-limited term, explicit upwind chemotaxis.

    The diffusive part is written as ``a(w) * w_ss`` with the nonnegative
    coefficient ``a`` frozen at the start of the step, giving a tridiagonal
    M-matrix.  The chemotactic part is a first-order upwind transport term
    advanced explicitly under a CFL restriction, so each step is monotone.
    """

    def __init__(self, problem: ProblemParams, s: np.ndarray, t0, y0, t_bound, cfl,
                 dt_max, first_step, upwind=True):
        n = problem.n
        self.n, self.p, self.q, self.chi = n, problem.p, problem.q, problem.chi
        si = s[1:-1]
        self.half = np.exp((1.0 - 1.0 / n) * np.log(si))
        self.lin = problem.mu / n * si
        self.hp = s[2:] - si
        self.hm = si - s[:-2]
        self.c1, self.c2 = _stencil(s)
        self.wl, self.wr = 0.0, problem.mass_scale
        self.t, self.y = float(t0), np.asarray(y0, dtype=float).copy()
        self.t_bound, self.cfl, self.dt_max = float(t_bound), cfl, dt_max
        self.first_step = first_step
        self.upwind = upwind
        self.t_old = None
        self.step_size = None
        self.status = "running"
        self._y_old = None

    def _parts(self, w):
        wm, w0, wp = w[:-2], w[1:-1], w[2:]
        c1, c2 = self.c1, self.c2
        wsc = np.maximum(c1[0] * wm + c1[1] * w0 + c1[2] * wp, 0.0)
        wss = c2[0] * wm + c2[1] * w0 + c2[2] * wp
        den = np.hypot(wsc, self.n * self.half * wss)
        a = np.divide(self.n ** (self.p + 1) * self.half ** 2 * wsc ** self.p, den,
                      out=np.zeros_like(den), where=den > 0)
        X = w0 - self.lin
        fwd = X > 0
        if self.upwind:
            wsu = np.maximum(np.where(fwd, (wp - w0) / self.hp, (w0 - wm) / self.hm), 0.0)
        else:
            wsu = wsc
        hx = np.hypot(1.0, X / self.half)
        chem = self.n ** self.q * self.chi * X * wsu ** self.q / hx
        speed = (self.n ** self.q * self.chi * self.q * np.abs(X) / hx
                 * np.where(wsu > 0, wsu, 0.0) ** (self.q - 1.0))
        hup = np.where(fwd, self.hp, self.hm)
        return a, chem, speed, hup

    def step(self):
        w = np.empty(self.y.size + 2)
        w[0], w[-1], w[1:-1] = self.wl, self.wr, self.y
        a, chem, speed, hup = self._parts(w)
        fast = speed > 0
        dt = self.cfl * float(np.min(hup[fast] / speed[fast])) if np.any(fast) else math.inf
        dt = min(dt, self.dt_max, self.t_bound - self.t)
        if self.t_old is None and self.first_step:
            dt = min(dt, self.first_step)
        if not (dt > 0) or not math.isfinite(dt):
            self.status = "failed"
            return "no admissible time step"
        c2 = self.c2
        m = self.y.size
        ab = np.empty((3, m))
        ab[1] = 1.0 - dt * a * c2[1]
        ab[0, 0] = 0.0
        ab[0, 1:] = -dt * a[:-1] * c2[2][:-1]
        ab[2, :-1] = -dt * a[1:] * c2[0][1:]
        ab[2, -1] = 0.0
        rhs = self.y + dt * chem
        rhs[0] += dt * a[0] * c2[0][0] * self.wl
        rhs[-1] += dt * a[-1] * c2[2][-1] * self.wr
        y_new = solve_banded((1, 1), ab, rhs, check_finite=False)
        self.t_old, self._y_old = self.t, self.y
        self.t = self.t + dt if self.t + dt < self.t_bound else self.t_bound
        self.y, self.step_size = y_new, dt
        if self.t >= self.t_bound:
            self.status = "finished"
        return None

    def dense_output(self):
        t0, y0, t1, y1 = self.t_old, self._y_old, self.t, self.y
        return lambda tt: y0 + (tt - t0) / (t1 - t0) * (y1 - y0)


def run(problem: ProblemParams, grid: Grid, w0, config: SolverConfig = SolverConfig()) -> Trajectory:
    """Integrate from ``w0`` (nodal values on ``grid``) until a stopping rule fires."""
    s = grid.s_nodes
    M = problem.mass_scale
    w0 = np.asarray(w0, dtype=float)
    if w0.shape != s.shape:
        raise ValueError("w0 must have one value per grid node")
    if abs(s[-1] - problem.s_max) > 1e-12 * problem.s_max:
        raise ValueError("grid must end at R^n")
    if abs(w0[0]) > 1e-10 * M or abs(w0[-1] - M) > 1e-10 * M:
        raise ValueError("w0 must satisfy w(0) = 0 and w(R^n) = m/omega_n")
    if not is_monotone(w0):
        raise ValueError("w0 must be strictly increasing in s")

    n = problem.n
    upwind = config.spatial == "upwind"
    rhs = _RHS(problem, s, upwind=upwind)
    traj = Trajectory(grid=grid, n=n, omega_n=problem.omega_n)
    w = w0.copy()
    w[0], w[-1] = 0.0, M
    u0max = float(np.max(u_from_w(grid, w, n)))
    U_max = config.U_max if config.U_max is not None else config.U_max_factor * u0max
    if not U_max > u0max:
        raise ValueError("U_max must exceed the initial sup of u")
    traj.initial_sup_u, traj.threshold = u0max, U_max
    mass = problem.omega_n * w[-1]

    def save(t, wv):
        traj.times.append(float(t))
        traj.snapshots.append(wv.copy())
        traj.monotone.append(is_monotone(wv))

    save(0.0, w)
    traj.series.append((0.0, u0max, mass, 0.0))
    T_end = config.horizon
    dt_min = config.dt_min * T_end
    pending = sorted(t for t in config.save_times if 0.0 < t < T_end)

    def make(t0, y0):
        first = min(config.dt_init * T_end, T_end - t0)
        if config.stepper == "semi_implicit":
            return _SemiImplicit(problem, s, t0, y0, T_end, config.cfl, config.dt_max, first,
                                 upwind=upwind)
        kw = dict(rtol=config.rtol, atol=config.atol * M, max_step=config.dt_max,
                  first_step=first)
        if config.stepper == "explicit":
            return RK23(rhs, t0, y0, T_end, **kw)
        return Rosenbrock23(rhs, t0, y0, T_end, bandwidth=rhs.bandwidth, **kw)

    solver = make(0.0, w[1:-1].copy())
    while True:
        msg = solver.step()
        wv = rhs.full(solver.y)
        t = solver.t
        dt = solver.step_size if solver.step_size is not None else 0.0
        traj.steps += 1
        if solver.status == "failed" or not np.all(np.isfinite(solver.y)):
            traj.status = Status("StepCollapse", float(solver.t_old or t), float(dt),
                                 msg or "non-finite state")
            break
        if pending and solver.t_old is not None and t >= pending[0]:
            dense = solver.dense_output()
            while pending and t >= pending[0]:
                save(pending[0], rhs.full(dense(pending[0])))
                pending.pop(0)
        if config.monotonicity == "project" and not is_monotone(wv):
            y = isotonic_regression(wv).x[1:-1]
            solver = make(t, y)
            wv = rhs.full(y)
        sup_u = float(np.max(u_from_w(grid, wv, n)))
        if traj.steps % config.series_stride == 0:
            traj.series.append((float(t), sup_u, mass, float(dt)))
        if sup_u >= U_max:
            _close(traj, t, sup_u, mass, dt, config)
            save(t, wv)
            traj.status = Status("BlowUpThreshold", float(t), sup_u)
            break
        if solver.status == "finished":
            _close(traj, t, sup_u, mass, dt, config)
            save(t, wv)
            traj.status = Status("Completed", float(t), T_end)
            break
        if dt < dt_min and t < T_end:
            _close(traj, t, sup_u, mass, dt, config)
            save(t, wv)
            traj.status = Status("StepCollapse", float(t), float(dt), "step below dt_min")
            break
        if traj.steps % config.save_stride == 0:
            save(t, wv)
    return traj


def _close(traj, t, sup_u, mass, dt, config):
    # make sure the terminal step appears in the series
    if traj.steps % config.series_stride != 0:
        traj.series.append((float(t), sup_u, mass, float(dt)))
