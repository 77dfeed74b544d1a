"""Second-order L-stable Rosenbrock stepper for banded systems.

Scheme of Shampine and Reichelt (the ``ode23s`` pair) with an embedded
third-order error estimate.  The Jacobian is formed by colour-group finite
differences and factorised with LAPACK's banded LU.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.linalg import lapack

_D = 1.0 / (2.0 + math.sqrt(2.0))
_E32 = 6.0 + math.sqrt(2.0)
_SQEPS = math.sqrt(np.finfo(float).eps)


def banded_jacobian(fun, t, y, f0, bw: int, floor: float):
    """Finite-difference Jacobian with ``bw`` sub- and super-diagonals.

    Returned in LAPACK general-band storage with ``bw`` extra rows on top
    for the LU fill-in, i.e. ``ab[2*bw + i - j, j] = J[i, j]``.
    """
    m = y.size
    ab = np.zeros((3 * bw + 1, m))
    h = _SQEPS * np.maximum(np.abs(y), floor)
    ncol = 2 * bw + 1
    rows = np.arange(m)
    for c in range(ncol):
        idx = np.arange(c, m, ncol)
        yp = y.copy()
        yp[idx] += h[idx]
        hh = yp[idx] - y[idx]
        df = fun(t, yp) - f0
        for j, dh in zip(idx, hh):
            lo, hi = max(0, j - bw), min(m, j + bw + 1)
            r = rows[lo:hi]
            ab[2 * bw + r - j, j] = df[lo:hi] / dh
    return ab


class Rosenbrock23:
    """Step-by-step integrator following the attribute protocol of scipy's OdeSolver."""

    def __init__(self, fun, t0, y0, t_bound, rtol=1e-6, atol=1e-10, first_step=None,
                 max_step=math.inf, bandwidth: int = 2, **_ignored):
        self.fun = fun
        self.t = float(t0)
        self.y = np.asarray(y0, dtype=float).copy()
        self.t_bound = float(t_bound)
        self.rtol, self.atol = rtol, atol
        self.max_step = max_step
        self.bw = int(bandwidth)
        self.h = first_step if first_step else 1e-6 * (t_bound - t0)
        self.t_old = None
        self.step_size = None
        self.status = "running"
        self.f = fun(self.t, self.y)
        self._y_old = self._f_old = None
        self.nfev = 1
        self.rejected = 0

    def _factor(self, jac, h):
        bw = self.bw
        a = -h * _D * jac
        a[2 * bw] += 1.0
        lu, piv, info = lapack.dgbtrf(a, bw, bw)
        if info != 0:
            return None
        return lu, piv

    def _solve(self, lu, rhs):
        x, info = lapack.dgbtrs(lu[0], self.bw, self.bw, rhs, lu[1])
        return x

    def step(self):
        if self.status != "running":
            raise RuntimeError("solver is not running")
        t, y, f0 = self.t, self.y, self.f
        jac = banded_jacobian(self.fun, t, y, f0, self.bw, self.atol / self.rtol)
        self.nfev += 2 * self.bw + 1
        h = min(self.h, self.max_step, self.t_bound - t)
        min_step = 10.0 * np.spacing(abs(t) + abs(h))
        while True:
            if h < min_step:
                self.status = "failed"
                return "Required step size is less than spacing between numbers."
            lu = self._factor(jac, h)
            ok = lu is not None
            if ok:
                k1 = self._solve(lu, f0)
                f1 = self.fun(t + 0.5 * h, y + 0.5 * h * k1)
                k2 = self._solve(lu, f1 - k1) + k1
                y_new = y + h * k2
                f2 = self.fun(t + h, y_new)
                k3 = self._solve(lu, f2 - _E32 * (k2 - f1) - 2.0 * (k1 - f0))
                self.nfev += 2
                err = h / 6.0 * (k1 - 2.0 * k2 + k3)
                scale = self.atol + self.rtol * np.maximum(np.abs(y), np.abs(y_new))
                en = float(np.max(np.abs(err) / scale))
                ok = math.isfinite(en) and bool(np.all(np.isfinite(y_new)))
            if ok and en <= 1.0:
                break
            self.rejected += 1
            h *= 0.5 if not ok else max(0.2, 0.8 * en ** (-1.0 / 3.0))
        self.t_old, self._y_old, self._f_old = t, y, f0
        self.t = t + h if t + h < self.t_bound else self.t_bound
        self.y, self.f = y_new, f2
        self.step_size = h
        self.h = h * (5.0 if en == 0 else min(5.0, max(0.2, 0.8 * en ** (-1.0 / 3.0))))
        if self.t >= self.t_bound:
            self.status = "finished"
        return None

    def dense_output(self):
        """Cubic Hermite interpolant over the last step."""
        t0, t1 = self.t_old, self.t
        y0, y1, f0, f1 = self._y_old, self.y, self._f_old, self.f
        h = t1 - t0

        def interp(tt):
            x = (tt - t0) / h
            return ((2 * x ** 3 - 3 * x ** 2 + 1) * y0 + (x ** 3 - 2 * x ** 2 + x) * h * f0
                    + (-2 * x ** 3 + 3 * x ** 2) * y1 + (x ** 3 - x ** 2) * h * f1)
        return interp
