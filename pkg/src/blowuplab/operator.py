"""Parabolic operator for the mass accumulation and sign certificates."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .params import CertifiedParams, ProblemParams, check_invariants
from .subsolution import (REGION_INTERMEDIATE, REGION_KINK, REGION_NAMES, REGION_OUTER,
                          REGION_VERY_INNER, DomainError, collapse, eval_subsolution,
                          horizon, profile, time_coefficients)

MAX_LISTED_VIOLATIONS = 1000


def _spow(s, e):
    # s**e through logs; s > 0 is required by callers
    return np.exp(e * np.log(s))


def operator_terms(problem: ProblemParams, s, value, ds, dss):
    """Diffusion and chemotaxis parts of the operator (without the time term)."""
    n, p, q, chi = problem.n, problem.p, problem.q, problem.chi
    s = np.asarray(s, dtype=float)
    ds = np.asarray(ds, dtype=float)
    dss = np.asarray(dss, dtype=float)
    half = _spow(s, 1.0 - 1.0 / n)  # s^(1-1/n), i.e. sqrt(s^(2-2/n))
    hd = half * dss
    diff = n ** (p + 1) * half * ds ** p * hd / np.hypot(ds, n * hd)
    X = np.asarray(value, dtype=float) - problem.mu / n * s
    Y = X / half  # s^(1/n-1) X
    chem = n ** q * chi * X * ds ** q / np.hypot(1.0, Y)
    return diff, chem


def eval_P(problem: ProblemParams, s, value, ds, dss, dt):
    """Operator applied to a jet; vectorised over arrays of equal shape."""
    s = np.asarray(s, dtype=float)
    ds = np.asarray(ds, dtype=float)
    if np.any(s <= 0):
        raise DomainError("operator requires s > 0")
    if np.any(~(ds > 0)):
        raise DomainError("operator requires a strictly positive s-derivative")
    diff, chem = operator_terms(problem, s, value, ds, dss)
    out = np.asarray(dt, dtype=float) - diff - chem
    return float(out) if out.ndim == 0 else out


def region_terms(problem: ProblemParams, params: CertifiedParams, s, t: float) -> dict:
    """Split of the operator on the inner piece into J1 and J2.

    Returns a dict with ``J1``, ``J2``, ``xi``, the gradient ``G = A phi'/B``
    and the reconstruction ``A' phi + G (-xi B' + J1 + J2)``.
    """
    n, p, q, chi, mu = problem.n, problem.p, problem.q, problem.chi, problem.mu
    s = np.asarray(s, dtype=float)
    B, Bp = collapse(params.B0, params.kappa, n, t)
    split = params.K * math.sqrt(B)
    if np.any(s <= 0) or np.any(s >= split) or np.any(s == B):
        raise DomainError("region_terms needs s in (0, K sqrt(B)) and s != B")
    tc = time_coefficients(params, problem, B, Bp)
    xi = s / B
    pj = profile(params.lam, params.d, xi)
    G = tc.A * pj.first / B
    alpha = 2.0 - 2.0 / n
    xa = _spow(xi, alpha)
    den = np.sqrt(B ** (4.0 / n - 2.0) * pj.first ** 2
                  + n * n * B ** (2.0 / n - 2.0) * xa * pj.second ** 2)
    J1 = -n ** (p + 1) * xa * pj.second / den * G ** (p - 1)
    X = tc.A * pj.value - mu * B * xi / n
    J2 = -n ** q * chi * X / np.sqrt(1.0 + _spow(B * xi, 2.0 / n - 2.0) * X * X) * G ** (q - 1)
    recon = tc.A_prime * pj.value + G * (-xi * Bp + J1 + J2)
    return {"J1": J1, "J2": J2, "xi": xi, "G": G, "X": X, "reconstruction": recon}


# ---------------------------------------------------------------------------

@dataclass
class RegionSummary:
    max_value: float = -math.inf
    argmax_s: float = math.nan
    argmax_t: float = math.nan
    points: int = 0

    def update(self, vals, s, t):
        if vals.size == 0:
            return
        self.points += int(vals.size)
        i = int(np.argmax(vals))
        if vals[i] > self.max_value:
            self.max_value = float(vals[i])
            self.argmax_s = float(s[i])
            self.argmax_t = float(t)

    def to_dict(self):
        return {"max_value": self.max_value if self.points else None,
                "argmax": [self.argmax_s, self.argmax_t] if self.points else None,
                "points": self.points}


@dataclass
class CertificateReport:
    regions: dict
    Ns: int
    Nt: int
    kink_margin: int
    tolerance: float
    scale: float
    t_end: float
    violations: list = field(default_factory=list)
    violation_count: int = 0
    skipped_kink_points: int = 0

    @property
    def passed(self) -> bool:
        return self.violation_count == 0

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tolerance": self.tolerance,
            "scale": self.scale,
            "grid": {"Ns": self.Ns, "Nt": self.Nt, "kink_margin": self.kink_margin,
                     "t_end": self.t_end},
            "regions": {k: self.regions[k].to_dict() for k in REGION_NAMES[:3]},
            "skipped_kink_points": self.skipped_kink_points,
            "violation_count": self.violation_count,
            "violations": [list(v) for v in self.violations],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"


def certificate_s_grid(problem: ProblemParams, B_min: float, Ns: int,
                       ratio: float = 1.05, rel_start: float = 1e-3) -> np.ndarray:
    """Interior s-grid: geometric from ``rel_start * B_min``, then uniform to R^n.

    The geometric part stops once its spacing would exceed the uniform
    spacing needed to reach R^n with the remaining nodes.
    """
    Rn = problem.s_max
    if Ns < 2:
        raise ValueError("Ns must be at least 2")
    s0 = rel_start * B_min
    nodes = [s0]
    while len(nodes) < Ns:
        cur = nodes[-1]
        h = cur * (ratio - 1.0)
        remaining = Ns - len(nodes)
        if h >= (Rn - cur) / (remaining + 1):
            break
        nodes.append(cur * ratio)
    else:
        # too few nodes for this ratio: stretch it so the grid spans (0, R^n)
        r = (Rn / s0) ** (1.0 / Ns)
        return s0 * r ** np.arange(Ns)
    rest = Ns - len(nodes)
    if rest > 0:
        tail = np.linspace(nodes[-1], Rn, rest + 2)[1:-1]
        nodes.extend(tail.tolist())
    return np.asarray(nodes[:Ns])


def _kink_mask(s: np.ndarray, positions, margin: int) -> np.ndarray:
    mask = np.zeros(s.size, dtype=bool)
    for x in positions:
        k = int(np.searchsorted(s, x))
        mask[max(k - margin, 0):min(k + margin, s.size)] = True
    return mask


def certify_subsolution(problem: ProblemParams, params: CertifiedParams, Ns: int = 2000,
                        Nt: int = 2000, kink_margin: int = 3, tolerance: float | None = None,
                        t_fraction: float = 0.999, ratio: float = 1.05,
                        require_feasible: bool = True) -> CertificateReport:
    """Scan the operator applied to the subsolution on a tensor (s, t) grid.

    The t-grid is uniform on ``[0, t_fraction * T]``.  Points within
    ``kink_margin`` cells of either kink are skipped.  The default
    tolerance is ``1e-10 * (m/omega_n) / T``.
    """
    if Ns <= 0 or Nt <= 0:
        raise ValueError("Ns and Nt must be positive")
    if require_feasible:
        bad = [k for k, v in check_invariants(problem, params) if v < 0]
        if bad:
            raise ValueError("parameters are not certified: " + ", ".join(bad))
    n = problem.n
    T = horizon(params.B0, params.kappa, n)
    scale = problem.mass_scale / T
    tol = 1e-10 * scale if tolerance is None else float(tolerance)
    t_end = t_fraction * T
    ts = np.linspace(0.0, t_end, Nt)
    B_min = collapse(params.B0, params.kappa, n, t_end)[0]
    s = certificate_s_grid(problem, B_min, Ns, ratio=ratio)

    regions = {name: RegionSummary() for name in REGION_NAMES[:3]}
    violations = []
    count = 0
    skipped = 0
    for t in ts:
        jet = eval_subsolution(params, problem, s, float(t))
        keep = ~_kink_mask(s, (jet.B, jet.split), kink_margin) & (jet.region != REGION_KINK)
        skipped += int((~keep).sum())
        vals = np.full(s.shape, -math.inf)
        vals[keep] = eval_P(problem, s[keep], jet.w_under[keep], jet.ds[keep],
                            jet.dss[keep], jet.dt[keep])
        for code in (REGION_VERY_INNER, REGION_INTERMEDIATE, REGION_OUTER):
            sel = keep & (jet.region == code)
            regions[REGION_NAMES[code]].update(vals[sel], s[sel], t)
        bad = np.nonzero(vals > tol)[0]
        count += bad.size
        for i in bad:
            if len(violations) >= MAX_LISTED_VIOLATIONS:
                break
            violations.append((float(s[i]), float(t), float(vals[i])))
    return CertificateReport(regions=regions, Ns=Ns, Nt=Nt, kink_margin=kink_margin,
                             tolerance=tol, scale=scale, t_end=t_end,
                             violations=violations, violation_count=count,
                             skipped_kink_points=skipped)


def with_kappa(params: CertifiedParams, kappa: float, n: int) -> CertifiedParams:
    """Copy of ``params`` with a different collapse rate and matching horizon."""
    return dataclasses.replace(params, kappa=kappa, T=horizon(params.B0, kappa, n))
