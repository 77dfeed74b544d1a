"""Analytic subsolution: profile, time coefficients, collapse law and jets.

All evaluators accept scalars or numpy arrays in the space variable and
return arrays of matching shape.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import CertifiedParams, ProblemParams

INNER, OUTER = "inner_exp", "outer_rational"
REGION_VERY_INNER, REGION_INTERMEDIATE, REGION_OUTER, REGION_KINK = 0, 1, 2, 3
REGION_NAMES = ("very_inner", "intermediate", "outer", "kink")
KINK_TOL = 1e-12


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class ProfileJet:
    value: np.ndarray
    first: np.ndarray
    second: np.ndarray
    branch: np.ndarray  # True on the outer branch


def _outer_parts(lam):
    a = (1.0 - lam) ** 2 / (2.0 * lam)
    b = (3.0 * lam - 1.0) / (2.0 * lam)
    c = (1.0 - lam) / (2.0 * lam)  # equals 1 - b without cancellation
    return a, b, c


def profile(lam: float, d: float, xi, side: str = "auto") -> ProfileJet:
    """Profile phi and its first two derivatives.

    ``side`` selects the one-sided second derivative at ``xi == 1``;
    ``auto`` and ``right`` use the outer branch there.
    """
    if side not in ("left", "right", "auto"):
        raise ValueError(f"side must be left, right or auto, got {side!r}")
    xi = np.asarray(xi, dtype=float)
    if np.any(xi < 0) or np.any(~np.isfinite(xi)):
        raise DomainError("xi must be finite and nonnegative")
    shape = xi.shape
    xi = xi.reshape(-1)
    a, b, c = _outer_parts(lam)
    ed = math.exp(d)
    outer = xi > 1.0 if side == "left" else xi >= 1.0

    val = np.empty_like(xi)
    d1 = np.empty_like(xi)
    d2 = np.empty_like(xi)

    xin = np.where(outer, 0.0, xi)
    e = np.exp(d * (xin - 1.0))
    val_in = 2.0 * lam * (np.exp(d * xin) - 1.0) / (d * ed)
    val[:] = val_in
    d1[:] = 2.0 * lam * e
    d2[:] = 2.0 * d * lam * e

    if np.any(outer):
        xo = xi[outer]
        if a > 0.0:
            gap = np.where(xo == 1.0, c, xo - b)
            val[outer] = 1.0 - a / gap
            d1[outer] = a / gap ** 2
            d2[outer] = -2.0 * a / gap ** 3
        else:
            # lambda = 1: the outer branch is the constant 1, with the
            # continuous extension of value and slope at xi = 1
            val[outer] = np.where(xo == 1.0, lam, 1.0)
            d1[outer] = np.where(xo == 1.0, 2.0 * lam, 0.0)
            d2[outer] = 0.0
    return ProfileJet(val.reshape(shape), d1.reshape(shape), d2.reshape(shape),
                      outer.reshape(shape))


def profile_branches_at_one(lam: float, d: float) -> dict:
    """Raw branch formulas evaluated at xi = 1 from either side."""
    a, b, c = _outer_parts(lam)
    ed = math.exp(d)
    left = (2.0 * lam * (ed - 1.0) / (d * ed), 2.0 * lam * math.exp(0.0))
    if a > 0.0:
        right = (1.0 - a / (1.0 - b), a / (1.0 - b) ** 2)
    else:
        right = (1.0 - 2.0 * lam * c, 2.0 * lam)
    return {"value_left": left[0], "slope_left": left[1],
            "value_right": right[0], "slope_right": right[1]}


# ---------------------------------------------------------------------------

def collapse(B0: float, kappa: float, n: int, t):
    """Closed-form collapse ``B(t)`` and its derivative."""
    T = horizon(B0, kappa, n)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t >= T):
        raise DomainError(f"t must lie in [0, T) with T = {T!r}")
    base = B0 ** (1.0 / (2 * n)) - kappa * t / (2 * n)
    B = base ** (2 * n)
    Bp = -kappa * base ** (2 * n - 1)
    if B.ndim == 0:
        return float(B), float(Bp)
    return B, Bp


def horizon(B0: float, kappa: float, n: int) -> float:
    if not (B0 > 0 and kappa > 0):
        raise DomainError("B0 and kappa must be positive")
    return 2.0 * n / kappa * B0 ** (1.0 / (2 * n))


@dataclass(frozen=True)
class TimeCoefficients:
    A: float
    D: float
    E: float
    N: float
    A_prime: float
    D_prime: float
    E_prime: float


def time_coefficients(params: CertifiedParams, problem: ProblemParams,
                      B_t: float, B_prime_t: float) -> TimeCoefficients:
    a, b, K = params.a_lambda, params.b_lambda, params.K
    Rn, M = problem.s_max, problem.mass_scale
    if not (0.0 < B_t < 1.0):
        raise DomainError("B(t) must lie in (0, 1)")
    rb = math.sqrt(B_t)
    if not (K * rb < Rn):
        raise DomainError("K*sqrt(B) < R^n violated")
    if not (B_t <= K * K / (4.0 * (a + b) ** 2)):
        raise DomainError("B <= K^2/(4(a+b)^2) violated")
    N = K * K + a * Rn - (a + b) * (2.0 * K * rb - b * B_t)
    A = M * (K - b * rb) ** 2 / N
    D = M * a / N
    E = M - Rn * D
    g = K / rb - b
    A_p = M * g * (a * K * K - a * b * Rn) * B_prime_t / N ** 2
    D_p = M * a * (a + b) * g * B_prime_t / N ** 2
    return TimeCoefficients(A=A, D=D, E=E, N=N, A_prime=A_p, D_prime=D_p,
                            E_prime=-Rn * D_p)


@dataclass(frozen=True)
class SubsolutionJet:
    w_under: np.ndarray
    ds: np.ndarray
    dss: np.ndarray
    dt: np.ndarray
    region: np.ndarray  # integer codes, see REGION_NAMES
    B: float
    split: float

    def region_names(self):
        return [REGION_NAMES[int(k)] for k in np.ravel(self.region)]


def eval_subsolution(params: CertifiedParams, problem: ProblemParams, s, t: float,
                     side: str = "auto") -> SubsolutionJet:
    """Value and jet of the pieced subsolution at time ``t``.

    Points within ``1e-12 R^n`` of either kink are tagged as kink; their
    jet is the one-sided value selected by ``side`` (``auto`` means right).
    """
    Rn = problem.s_max
    s = np.asarray(s, dtype=float)
    if np.any(s < 0) or np.any(s > Rn * (1 + 1e-15)):
        raise DomainError("s must lie in [0, R^n]")
    B, Bp = collapse(params.B0, params.kappa, problem.n, t)
    tc = time_coefficients(params, problem, B, Bp)
    split = params.K * math.sqrt(B)
    tol = KINK_TOL * Rn

    use_outer = s > split if side == "left" else s >= split
    if side != "left":
        use_outer = use_outer | (np.abs(s - split) <= tol)
    else:
        use_outer = use_outer & ~(np.abs(s - split) <= tol)
    xi = np.where(use_outer, 0.0, s / B)
    # snap xi to 1 (relative band, since B itself may be below tol) so the
    # side flag is honoured; the boundary s = 0 is never a kink
    near_b = (np.abs(s - B) <= tol) & (s > 0)
    xi = np.where((np.abs(s - B) <= KINK_TOL * B) & ~use_outer, 1.0, xi)
    pj = profile(params.lam, params.d, xi, side=side)

    val = np.where(use_outer, tc.D * s + tc.E, tc.A * pj.value)
    ds = np.where(use_outer, tc.D, tc.A * pj.first / B)
    dss = np.where(use_outer, 0.0, tc.A * pj.second / B ** 2)
    dt_in = tc.A_prime * pj.value - tc.A * pj.first / B * xi * Bp
    dt_out = -tc.D_prime * (Rn - s)
    dt = np.where(use_outer, dt_out, dt_in)

    region = np.where(use_outer, REGION_OUTER,
                      np.where(s < B, REGION_VERY_INNER, REGION_INTERMEDIATE))
    kink = near_b | (np.abs(s - split) <= tol)
    region = np.where(kink, REGION_KINK, region).astype(np.int8)
    return SubsolutionJet(val, ds, dss, dt, region, B, split)


def subsolution_values(params, problem, s, t) -> np.ndarray:
    return eval_subsolution(params, problem, s, t).w_under


def mass_floor(params: CertifiedParams, problem: ProblemParams, r) -> np.ndarray:
    """Mass floor ``omega_n * w_under(r^n, 0)``."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0) or np.any(r > problem.R * (1 + 1e-15)):
        raise DomainError("r must lie in [0, R]")
    s = np.minimum(r ** problem.n, problem.s_max)
    return problem.omega_n * subsolution_values(params, problem, s, 0.0)


def initial_data(params: CertifiedParams, problem: ProblemParams, r,
                 mollify: float = 0.0) -> np.ndarray:
    """Radial initial density ``u0(r) = n * d/ds w_under(r^n, 0)``.

    With ``mollify > 0`` the accumulated mass is averaged over a window of
    half-width ``mollify`` in s before differencing, which rounds the two
    kinks of the density.  The total mass is unchanged because the outer
    piece is affine.
    """
    r = np.asarray(r, dtype=float)
    n = problem.n
    s = np.minimum(r ** n, problem.s_max)
    if mollify <= 0.0:
        return n * eval_subsolution(params, problem, s, 0.0).ds
    eps = float(mollify)
    B0 = params.B0
    tc = time_coefficients(params, problem, *collapse(B0, params.kappa, n, 0.0))

    def w_ext(x):
        # odd extension through s = 0, affine continuation past R^n
        x = np.asarray(x, dtype=float)
        inside = np.clip(np.abs(x), 0.0, problem.s_max)
        v = subsolution_values(params, problem, inside, 0.0)
        v = np.where(x > problem.s_max, tc.D * x + tc.E, v)
        return np.where(x < 0, -v, v)

    return n * (w_ext(s + eps) - w_ext(s - eps)) / (2.0 * eps)
