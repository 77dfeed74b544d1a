"""Problem instance, derived constants and automatic constant selection.

The selector searches for the profile parameter, the split scale ``K``, the
slack ``delta``, the initial collapse value ``B0`` and the collapse rate
``kappa`` such that every sufficient condition for the subsolution property
holds with nonnegative slack.  All searches are deterministic.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.optimize import brentq, minimize_scalar

LAMBDA_MIN_N1 = (5.0 - math.sqrt(17.0)) / 2.0


class InfeasibleError(ValueError):
    """Raised when no admissible constant set exists for a problem."""


def unit_sphere_measure(n: int) -> float:
    """(n-1)-dimensional measure of the unit sphere in R^n."""
    if int(n) != n or n < 1:
        raise ValueError(f"dimension must be a positive integer, got {n!r}")
    n = int(n)
    if n == 1:
        return 2.0
    if n == 2:
        return 2.0 * math.pi
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


@dataclass(frozen=True)
class ProblemParams:
    n: int
    R: float
    chi: float
    p: float
    q: float
    m: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        for name in ("R", "chi", "m"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v!r}")
        for name in ("p", "q"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 1):
                raise ValueError(f"{name} must be >= 1, got {v!r}")

    @property
    def omega_n(self) -> float:
        return unit_sphere_measure(self.n)

    @property
    def s_max(self) -> float:
        return self.R ** self.n

    @property
    def mass_scale(self) -> float:
        """Boundary value m/omega_n of the accumulated mass at s = R^n."""
        return self.m / self.omega_n

    @property
    def mu(self) -> float:
        return self.n * self.m / (self.omega_n * self.s_max)

    def to_dict(self) -> dict:
        return {"n": self.n, "R": self.R, "chi": self.chi, "p": self.p,
                "q": self.q, "m": self.m}


def _d_residual(d: float) -> float:
    return (2.0 - d) * math.exp(d) - 2.0


@lru_cache(maxsize=None)
def solve_d() -> float:
    """Root of (2-d) e^d = 2 in (1, 2).

    Newton iteration safeguarded by the bracket [1, 2]; the residual is
    positive at 1 (e - 2) and negative at 2 (-2).
    """
    lo, hi = 1.0, 2.0
    d = 1.6
    for _ in range(100):
        f = _d_residual(d)
        if f > 0:
            lo = d
        else:
            hi = d
        df = (1.0 - d) * math.exp(d)
        step = f / df
        nd = d - step
        if not (lo < nd < hi):
            nd = 0.5 * (lo + hi)
        if abs(nd - d) <= 4e-16 * nd or hi - lo <= 4e-16:
            d = nd
            break
        d = nd
    # polish: pick the best float in a tiny neighbourhood
    cands = [d, math.nextafter(d, 0.0), math.nextafter(d, 3.0)]
    return min(cands, key=lambda x: abs(_d_residual(x)))


def shape_constants(lam: float) -> tuple[float, float, Optional[float]]:
    """Return ``(a_lambda, b_lambda, delta_lambda)``; delta is None when b = 0."""
    if not (1.0 / 3.0 - 1e-15 <= lam <= 1.0):
        raise ValueError(f"lambda must lie in [1/3, 1], got {lam!r}")
    a = (1.0 - lam) ** 2 / (2.0 * lam)
    b = (3.0 * lam - 1.0) / (2.0 * lam)
    if b <= 0.0:
        return a, 0.0, None
    return a, b, a / b


def chi_threshold(m: float, n: int, p: float, q: float, R: float) -> float:
    """Sensitivity threshold (m n / (omega_n R^n))^(p - q)."""
    if m <= 0 or R <= 0:
        raise ValueError("m and R must be positive")
    if p == q:
        return 1.0
    base = m * n / (unit_sphere_measure(n) * R ** n)
    return base ** (p - q)


# ---------------------------------------------------------------------------
# critical mass (n = 1)

@dataclass(frozen=True)
class CriticalMass:
    m_c: float
    lam: float
    residual: float
    variant: str = "standard"

    def to_dict(self) -> dict:
        return asdict(self)


def _pow0(x: float, e: float) -> float:
    # 0**0 == 1 and 0**negative == inf
    if e == 0:
        return 1.0
    if x == 0:
        return math.inf if e < 0 else 0.0
    return x ** e


def mass_balance(m: float, lam: float, chi: float, p: float, q: float, R: float,
                 variant: str = "standard") -> float:
    """Function whose smallest positive root in m defines m_c at fixed lambda.

    ``variant="standard"`` keeps the mass m and the factor (1 + delta); for
    p = q its infimum is 1/sqrt(chi^2 - 1).
    ``variant="certifiable"`` uses the accumulated-mass scale m/omega_1 in the
    chemotactic term and the squared factor (1 + delta)^2 that the
    intermediate-region estimate actually delivers.
    """
    a, b, _ = shape_constants(lam)
    delta = a / b
    omega = unit_sphere_measure(1)
    sigma_min = (m / omega) * a / ((a + b) * R)
    if variant == "standard":
        first = (1.0 - delta) * m * chi / math.sqrt((1.0 + delta) / lam ** 2 + m ** 2)
    elif variant == "certifiable":
        M = m / omega
        first = (1.0 - delta) * M * chi / math.sqrt((1.0 + delta) ** 2 / lam ** 2 + M ** 2)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return first - _pow0(sigma_min, p - q)


def _check_mc_domain(chi: float, p: float, q: float, R: float) -> None:
    if not (1 <= p <= q):
        raise ValueError(f"critical mass requires 1 <= p <= q, got p={p}, q={q}")
    if R <= 0:
        raise ValueError("R must be positive")
    if p == q and chi <= 1:
        raise InfeasibleError("χ ≤ 1 with p = q: no finite critical mass")
    if chi <= 0:
        raise ValueError("chi must be positive")


def mc_window(chi: float) -> float:
    return 1e3 * max(1.0, 1.0 / math.sqrt(max(chi * chi - 1.0, 1e-12)))


def _root_in_m(lam, chi, p, q, R, variant, window) -> float:
    f = lambda m: mass_balance(m, lam, chi, p, q, R, variant)  # noqa: E731
    lo = window * 1e-12
    flo, fhi = f(lo), f(window)
    if not (math.isfinite(fhi) and fhi > 0):
        return math.nan
    if flo > 0:
        return lo
    return brentq(f, lo, window, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


def _lambda_grid(points: int = 64) -> np.ndarray:
    lo = LAMBDA_MIN_N1 + 1e-6
    return np.exp(np.linspace(math.log(lo), 0.0, points))


def critical_mass(chi: float, p: float, q: float, R: float, *,
                  variant: str = "standard", window: Optional[float] = None,
                  grid_points: int = 64) -> CriticalMass:
    """Critical mass for n = 1 as an infimum over lambda.

    The infimum is taken over a log-uniform lambda grid with golden-section
    refinement around the best grid point.
    """
    _check_mc_domain(chi, p, q, R)
    if window is None:
        window = mc_window(chi)
    grid = _lambda_grid(grid_points)
    roots = np.array([_root_in_m(l, chi, p, q, R, variant, window) for l in grid])
    ok = np.isfinite(roots)
    if not ok.any():
        raise InfeasibleError("no finite m_c located in search window")
    i = int(np.nanargmin(np.where(ok, roots, np.nan)))
    best_lam, best_m = float(grid[i]), float(roots[i])
    lo = float(grid[max(i - 1, 0)])
    hi = float(grid[min(i + 1, len(grid) - 1)])
    if hi > lo:
        def obj(l):
            r = _root_in_m(l, chi, p, q, R, variant, window)
            return r if math.isfinite(r) else math.inf
        res = minimize_scalar(obj, bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12})
        if math.isfinite(res.fun) and res.fun < best_m:
            best_lam, best_m = float(res.x), float(res.fun)
    resid = mass_balance(best_m, best_lam, chi, p, q, R, variant)
    return CriticalMass(m_c=best_m, lam=best_lam, residual=float(resid), variant=variant)


def certifiable_mass(chi: float, p: float, q: float, R: float, **kw) -> CriticalMass:
    """Mass threshold above which the n = 1 selector can certify."""
    return critical_mass(chi, p, q, R, variant="certifiable", **kw)


# ---------------------------------------------------------------------------
# constant selection

@dataclass(frozen=True)
class CertifiedParams:
    lam: float
    d: float
    a_lambda: float
    b_lambda: float
    delta: float
    K: float
    B0: float
    kappa: float
    T: float
    A_T: float
    sigma: float
    c1: float
    kappa_bounds: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lam")
        return out


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    binding_constraints: list
    failure_reason: Optional[str] = None

    def to_dict(self) -> dict:
        return {"feasible": self.feasible,
                "binding_constraints": [[k, v] for k, v in self.binding_constraints],
                "failure_reason": self.failure_reason}


@dataclass(frozen=True)
class SelectionConfig:
    grid_points: int = 64
    k_grid_points: int = 48
    k_margin: float = 1.1
    strict_slack: float = 1e-9
    b0_fraction: float = 0.5
    delta_fraction: float = 0.5
    # "corrected" bounds the chemotactic drift with the accumulated mass m/omega_1;
    # "uncorrected" uses m and (1 + delta) instead; kept for diagnostics only
    n1_margin: str = "corrected"


def _bisect_max(pred, hi: float, iters: int = 200) -> float:
    """Largest x in (0, hi] with pred(x) true, assuming pred is downward closed."""
    if pred(hi):
        return hi
    lo = 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if pred(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _phi_outer(xi, lam, a, b):
    return 1.0 - a / (xi - b)


def _intermediate_q(B0: float, K: float, lam: float, a: float, b: float, n: int) -> float:
    """sup over s in (B0, K sqrt(B0)) of s^(2-2/n) / phi(s/B0)^2."""
    alpha = 2.0 - 2.0 / n
    xi_hi = K / math.sqrt(B0)
    if xi_hi <= 1.0:
        return B0 ** alpha / lam ** 2
    xi = np.geomspace(1.0, xi_hi, 400)
    vals = (B0 * xi) ** alpha / _phi_outer(xi, lam, a, b) ** 2
    vals[0] = B0 ** alpha / lam ** 2
    # the profile is smooth; refine around the discrete maximum
    j = int(np.argmax(vals))
    lo, hi = xi[max(j - 1, 0)], xi[min(j + 1, len(xi) - 1)]
    if hi > lo:
        res = minimize_scalar(lambda x: -((B0 * x) ** alpha / _phi_outer(x, lam, a, b) ** 2),
                              bounds=(lo, hi), method="bounded", options={"xatol": 1e-12 * hi})
        return max(float(vals.max()), float(-res.fun)) * (1.0 + 1e-9)
    return float(vals.max()) * (1.0 + 1e-9)


def _candidate(problem: ProblemParams, lam: float, K: float, cfg: SelectionConfig):
    """Evaluate one (lambda, K) choice.

    Returns ``(objective, data)``; the objective is -inf when some hypothesis
    cannot be met.
    """
    n, R, chi, p, q, m = problem.n, problem.R, problem.chi, problem.p, problem.q, problem.m
    Rn, M, mu, omega = problem.s_max, problem.mass_scale, problem.mu, problem.omega_n
    d = solve_d()
    a, b, delta_lam = shape_constants(lam)
    if a <= 0.0 or K <= 0.0:
        return -math.inf, {"reason": "degenerate profile (a_lambda = 0)"}
    if K * K < b * Rn * (1.0 - 1e-15):
        return -math.inf, {"reason": "K below sqrt(b_lambda R^n)"}
    A_T = M * K * K / (K * K + a * Rn)
    sigma = M * a / (K * K + a * Rn)
    slack = cfg.strict_slack

    if n == 1:
        delta = delta_lam
        if cfg.n1_margin == "uncorrected":
            denom = math.sqrt((1.0 + delta) / lam ** 2 + m ** 2)
            c1 = (1.0 - delta) * m * chi / denom - _pow0(sigma, p - q)
        else:
            denom = math.sqrt((1.0 + a * Rn / (K * K)) ** 2 / lam ** 2 + M ** 2)
            c1 = (1.0 - delta) * M * chi / denom - _pow0(sigma, p - q)
        kappa_region = sigma ** (q - 1) * c1 / K
    else:
        target = _pow0(n * sigma, p - q)
        g = lambda dl: (1.0 - dl) * chi / math.sqrt(1.0 + dl) - target  # noqa: E731
        if g(0.0) <= slack * max(1.0, target):
            return -math.inf, {"reason": "χ ≤ χ-threshold at this K", "c1": n ** q * g(0.0)}
        delta_sup = _bisect_max(lambda dl: g(dl) > 0.0, 1.0)
        delta = cfg.delta_fraction * delta_sup
        c1 = n ** q * g(delta)
        kappa_region = sigma ** (q - 1) * c1 * K ** (-1.0 / n)
    if not (c1 > slack):
        return -math.inf, {"reason": "c1 <= 0", "c1": c1}

    # upper bounds on B0
    ed = math.exp(d)
    bounds = {
        "B0<1": 1.0,
        "K*sqrt(B0)<R^n": (Rn / K) ** 2,
        "B0<=K^2/(16(a+b)^2)": K * K / (16.0 * (a + b) ** 2),
        "B0<2*lam*n*A_T/(e^d*mu)": 2.0 * lam * n * A_T / (ed * mu),
        "mu/(n*A_T)*B0/lam<=delta": delta * lam * n * A_T / mu,
        "mu/(n*A_T)*2K*sqrt(B0)<=delta": (delta * n * A_T / (2.0 * mu * K)) ** 2,
    }
    cap = min(bounds.values())
    if n >= 2:
        def vi_ok(B0):
            rhs = 2.0 * lam * A_T / ed - mu * B0 / n
            return rhs > 0 and B0 ** (2.0 - 2.0 / n) <= rhs * rhs
        bounds["B0^(2-2/n)<=(2*lam*A_T/e^d-mu*B0/n)^2"] = _bisect_max(vi_ok, cap)

        def int_ok(B0):
            return _intermediate_q(B0, K, lam, a, b, n) / A_T ** 2 <= delta
        bounds["sup s^(2-2/n)/(A_T*phi)^2<=delta"] = _bisect_max(int_ok, cap, iters=80)
    B0 = cfg.b0_fraction * min(bounds.values())
    if not (B0 > 0.0):
        return -math.inf, {"reason": "no admissible B0"}

    nm = n * m
    kb = {
        "outer": a ** (q - 1) * nm ** q * chi * K / (
            2.0 * (a + b) * (K * K + a * Rn) ** (q - 1) * omega ** q * Rn
            * math.sqrt(1.0 + K ** (2.0 / n - 2.0) * M ** 2)),
        "very_inner_diffusion": d / math.sqrt(d * d + 1.0) * (2.0 * lam * A_T / ed) ** (p - 1),
        "very_inner_chemotaxis": n ** q * chi / math.sqrt(2.0) * (2.0 * lam * A_T / ed) ** (q - 1),
        "intermediate": kappa_region,
    }
    kappa = min(kb.values())
    T = 2.0 * n / kappa * B0 ** (1.0 / (2.0 * n))
    objective = kappa * B0 ** (1.0 - 1.0 / (2.0 * n))
    data = dict(lam=lam, d=d, a=a, b=b, delta=delta, K=K, B0=B0, kappa=kappa, T=T,
                A_T=A_T, sigma=sigma, c1=c1, kappa_bounds=kb, b0_bounds=bounds)
    return objective, data


def _best_K(problem: ProblemParams, lam: float, cfg: SelectionConfig):
    Rn = problem.s_max
    a, b, _ = shape_constants(lam)
    k_lo = cfg.k_margin * math.sqrt(b * Rn) if b > 0 else 1e-3 * math.sqrt(Rn)
    k_hi = max(k_lo, math.sqrt(Rn), math.sqrt(a * Rn)) * 1e2
    ks = np.geomspace(k_lo, k_hi, cfg.k_grid_points)
    results = [_candidate(problem, lam, float(k), cfg) for k in ks]
    objs = np.array([r[0] for r in results])
    j = int(np.argmax(objs))
    if not math.isfinite(objs[j]):
        return -math.inf, results[0][1]
    best = results[j]
    lo, hi = ks[max(j - 1, 0)], ks[min(j + 1, len(ks) - 1)]
    if hi > lo:
        res = minimize_scalar(lambda lk: -_candidate(problem, lam, math.exp(lk), cfg)[0],
                              bounds=(math.log(lo), math.log(hi)), method="bounded",
                              options={"xatol": 1e-10})
        cand = _candidate(problem, lam, math.exp(res.x), cfg)
        if cand[0] > best[0]:
            best = cand
    return best


def _params_from(data: dict) -> CertifiedParams:
    return CertifiedParams(
        lam=data["lam"], d=data["d"], a_lambda=data["a"], b_lambda=data["b"],
        delta=data["delta"], K=data["K"], B0=data["B0"], kappa=data["kappa"],
        T=data["T"], A_T=data["A_T"], sigma=data["sigma"], c1=data["c1"],
        kappa_bounds=dict(data["kappa_bounds"]))


def check_invariants(problem: ProblemParams, cp: CertifiedParams) -> list:
    """Slack of every hypothesis on the constant set (>= 0 means satisfied)."""
    n, Rn, mu = problem.n, problem.s_max, problem.mu
    lam, a, b, K, B0, d = cp.lam, cp.a_lambda, cp.b_lambda, cp.K, cp.B0, cp.d
    A_T, delta = cp.A_T, cp.delta
    ed = math.exp(d)
    out = [
        ("lambda_range", lam - LAMBDA_MIN_N1 if n == 1 else 1e-15 - abs(lam - 1.0 / 3.0)),
        ("K*sqrt(B0)<R^n", 1.0 - K * math.sqrt(B0) / Rn),
        ("K>=sqrt(b*R^n)", 1.0 - b * Rn / (K * K)),
        ("B0<1", 1.0 - B0),
        ("B0<=K^2/(16(a+b)^2)", 1.0 - B0 * 16.0 * (a + b) ** 2 / (K * K)),
        ("B0<2*lam*n*A_T/(e^d*mu)", 1.0 - B0 * ed * mu / (2.0 * lam * n * A_T)),
        ("mu/(n*A_T)*max(B0/lam,2K*sqrt(B0))<=delta",
         1.0 - mu / (n * A_T) * max(B0 / lam, 2.0 * K * math.sqrt(B0)) / delta),
        ("c1>0", cp.c1),
        ("kappa<=bounds", min(cp.kappa_bounds.values()) / cp.kappa - 1.0),
        ("delta<1", 1.0 - delta),
    ]
    if n == 1:
        out.append(("delta=delta_lambda", 1e-15 - abs(delta - a / b)))
    else:
        rhs = 2.0 * lam * A_T / ed - mu * B0 / n
        out.append(("B0^(2-2/n)<=(2*lam*A_T/e^d-mu*B0/n)^2",
                    1.0 - B0 ** (2.0 - 2.0 / n) / (rhs * rhs) if rhs > 0 else -1.0))
        out.append(("sup s^(2-2/n)/(A_T*phi)^2<=delta",
                    1.0 - _intermediate_q(B0, K, lam, a, b, n) / A_T ** 2 / delta))
    return out


def select_parameters(problem: ProblemParams, cfg: SelectionConfig = SelectionConfig()):
    """Choose a certified constant set; returns ``(CertifiedParams | None, FeasibilityReport)``.

    Among admissible choices the one maximising ``kappa * B0^(1-1/(2n))`` is
    kept, which is proportional to ``B0 / T`` and keeps desk-scale runs short.
    """
    n, p, q, chi = problem.n, problem.p, problem.q, problem.chi
    if p > q:
        raise ValueError("constant selection requires p <= q")
    if n == 1:
        if p == q and chi <= 1.0:
            return None, FeasibilityReport(False, [], "χ ≤ 1 with p = q")
        grid = _lambda_grid(cfg.grid_points)
        grid = grid[grid < 1.0]
        results = [_best_K(problem, float(l), cfg) for l in grid]
        objs = np.array([r[0] for r in results])
        i = int(np.argmax(objs))
        if not math.isfinite(objs[i]):
            try:
                mc = certifiable_mass(chi, p, q, problem.R).m_c
                why = f"m ≤ m_c: no λ gives c1 > 0 (certifiable threshold {mc:.10g})"
            except (ValueError, InfeasibleError):
                why = "m ≤ m_c: no λ gives c1 > 0"
            return None, FeasibilityReport(False, [], why)
        best = results[i]
        lo, hi = float(grid[max(i - 1, 0)]), float(grid[min(i + 1, len(grid) - 1)])
        if hi > lo:
            res = minimize_scalar(lambda l: -_best_K(problem, l, cfg)[0], bounds=(lo, hi),
                                  method="bounded",
                                  options={"xatol": 1e-9})
            cand = _best_K(problem, float(res.x), cfg)
            if cand[0] > best[0]:
                best = cand
    else:
        thr = chi_threshold(problem.m, n, p, q, problem.R)
        if chi <= thr * (1.0 + cfg.strict_slack):
            return None, FeasibilityReport(False, [], f"χ ≤ χ-threshold ({thr:.10g})")
        best = _best_K(problem, 1.0 / 3.0, cfg)
        if not math.isfinite(best[0]):
            return None, FeasibilityReport(False, [], f"no admissible K: {best[1].get('reason')}")
    cp = _params_from(best[1])
    slacks = check_invariants(problem, cp)
    binding = sorted(slacks, key=lambda kv: kv[1])
    feasible = all(v >= 0.0 for _, v in slacks)
    reason = None if feasible else "invariant violated: " + binding[0][0]
    return (cp if feasible else None), FeasibilityReport(feasible, binding, reason)
