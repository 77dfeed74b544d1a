"""Experiment configuration.

Grammar: an INI file (``configparser``) with the sections ``[problem]``,
``[select]``, ``[solver]``, ``[certify]``, ``[compare]``, ``[sweep]`` and
``[output]``.  Every key is optional; unknown sections or keys are errors.
Lines starting with ``#`` or ``;`` are comments.  Values:

* numbers use ``.`` as decimal separator; ``inf`` is accepted where noted;
* ``auto`` selects the documented default for optional values;
* ``problem.m`` also accepts ``<factor> * m_c`` or ``<factor> * m_c_certifiable``
  (n = 1 only), resolved from the remaining problem keys.
"""
from __future__ import annotations

import configparser
import math
import os
import re
from dataclasses import dataclass, field, fields, replace
from typing import Optional

from .params import ProblemParams, SelectionConfig, certifiable_mass, critical_mass
from .solver import STEPPERS, SolverConfig

DEFAULT_OUTDIR = "blowuplab-out"


class ConfigError(ValueError):
    pass


# value parsers ------------------------------------------------------------

def _float(v: str) -> float:
    x = float(v)
    if math.isnan(x):
        raise ValueError("nan is not allowed")
    return x


def _int(v: str) -> int:
    return int(v)


def _opt_float(v: str) -> Optional[float]:
    return None if v.strip().lower() in ("auto", "none") else _float(v)


def _str(v: str) -> str:
    return v.strip()


def _choice(*options):
    def parse(v: str) -> str:
        v = v.strip()
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return v
    return parse


_MASS_RE = re.compile(r"^\s*([0-9.eE+-]+)\s*\*\s*(m_c|m_c_certifiable)\s*$")


def _mass(v: str):
    if _MASS_RE.match(v):
        return v.strip()
    return _float(v)


def _grading(v: str):
    v = v.strip()
    if v == "uniform":
        return v
    if v.startswith("geometric:"):
        r = float(v.split(":", 1)[1])
        if not r > 1.0:
            raise ValueError("geometric ratio must exceed 1")
        return v
    raise ValueError("expected 'uniform' or 'geometric:<ratio>'")


# blocks -------------------------------------------------------------------

@dataclass(frozen=True)
class ProblemBlock:
    n: int = field(default=1, metadata={"parse": _int})
    R: float = field(default=1.0, metadata={"parse": _float})
    chi: float = field(default=2.0, metadata={"parse": _float})
    p: float = field(default=1.0, metadata={"parse": _float})
    q: float = field(default=1.0, metadata={"parse": _float})
    m: object = field(default=None, metadata={"parse": _mass})

    def resolve_mass(self) -> float:
        if self.m is None:
            raise ConfigError("problem.m is required")
        if isinstance(self.m, float):
            return self.m
        factor, kind = _MASS_RE.match(self.m).groups()
        if self.n != 1:
            raise ConfigError("problem.m in units of m_c requires n = 1")
        fn = critical_mass if kind == "m_c" else certifiable_mass
        return float(factor) * fn(self.chi, self.p, self.q, self.R).m_c

    def build(self) -> ProblemParams:
        return ProblemParams(self.n, self.R, self.chi, self.p, self.q, self.resolve_mass())


@dataclass(frozen=True)
class SelectBlock:
    n1_margin: str = field(default="corrected", metadata={"parse": _choice("corrected", "uncorrected")})
    grid_points: int = field(default=64, metadata={"parse": _int})
    k_grid_points: int = field(default=48, metadata={"parse": _int})

    def build(self) -> SelectionConfig:
        return SelectionConfig(grid_points=self.grid_points, k_grid_points=self.k_grid_points,
                               n1_margin=self.n1_margin)


@dataclass(frozen=True)
class SolverBlock:
    grid_size: int = field(default=400, metadata={"parse": _int})
    grading: str = field(default="geometric:1.05", metadata={"parse": _grading})
    stepper: str = field(default="semi_implicit", metadata={"parse": _choice(*STEPPERS)})
    spatial: str = field(default="upwind", metadata={"parse": _choice("upwind", "centered")})
    cfl: float = field(default=0.5, metadata={"parse": _float})
    rtol: float = field(default=1e-6, metadata={"parse": _float})
    atol: float = field(default=1e-10, metadata={"parse": _float})
    dt_max: float = field(default=math.inf, metadata={"parse": _float})
    horizon: Optional[float] = field(default=None, metadata={"parse": _opt_float})
    U_max: Optional[float] = field(default=None, metadata={"parse": _opt_float})
    U_max_factor: float = field(default=1e6, metadata={"parse": _float})
    monotonicity: str = field(default="flag", metadata={"parse": _choice("flag", "project")})
    save_stride: int = field(default=50, metadata={"parse": _int})
    series_stride: int = field(default=1, metadata={"parse": _int})
    initial_data: str = field(default="subsolution",
                              metadata={"parse": _choice("subsolution", "uniform", "bump")})
    bump_amplitude: float = field(default=0.1, metadata={"parse": _float})
    mollify: float = field(default=0.0, metadata={"parse": _float})

    def grid_args(self):
        if self.grading == "uniform":
            return self.grid_size, "uniform"
        return self.grid_size, ("geometric", float(self.grading.split(":", 1)[1]))

    def build(self, horizon: float) -> SolverConfig:
        return SolverConfig(stepper=self.stepper, spatial=self.spatial, horizon=horizon,
                            cfl=self.cfl, rtol=self.rtol, atol=self.atol, dt_max=self.dt_max,
                            U_max=self.U_max, U_max_factor=self.U_max_factor,
                            monotonicity=self.monotonicity, save_stride=self.save_stride,
                            series_stride=self.series_stride)


@dataclass(frozen=True)
class CertifyBlock:
    Ns: int = field(default=2000, metadata={"parse": _int})
    Nt: int = field(default=2000, metadata={"parse": _int})
    tolerance: Optional[float] = field(default=None, metadata={"parse": _opt_float})
    kink_margin: int = field(default=3, metadata={"parse": _int})
    t_fraction: float = field(default=0.999, metadata={"parse": _float})
    ratio: float = field(default=1.05, metadata={"parse": _float})
    kappa_factor: float = field(default=1.0, metadata={"parse": _float})


@dataclass(frozen=True)
class CompareBlock:
    tolerance: Optional[float] = field(default=None, metadata={"parse": _opt_float})
    sampling: str = field(default="nodes", metadata={"parse": _choice("nodes", "pchip")})
    lower_bound_factor: float = field(default=0.95, metadata={"parse": _float})
    min_inner_nodes: int = field(default=8, metadata={"parse": _int})


@dataclass(frozen=True)
class SweepBlock:
    n: int = field(default=2, metadata={"parse": _int})
    R: float = field(default=1.0, metadata={"parse": _float})
    p_min: float = field(default=1.0, metadata={"parse": _float})
    p_max: float = field(default=2.5, metadata={"parse": _float})
    q_min: float = field(default=1.0, metadata={"parse": _float})
    q_max: float = field(default=2.5, metadata={"parse": _float})
    steps: int = field(default=4, metadata={"parse": _int})
    m: float = field(default=2.0 * math.pi, metadata={"parse": _float})
    chi: float = field(default=1.0, metadata={"parse": _float})
    chi_factor: float = field(default=2.0, metadata={"parse": _float})
    mass_factor: float = field(default=2.0, metadata={"parse": _float})
    mass_policy: str = field(default="certifiable",
                             metadata={"parse": _choice("certifiable", "standard")})
    horizon: float = field(default=1.0, metadata={"parse": _float})
    dt_fraction: float = field(default=0.005, metadata={"parse": _float})
    U_max_factor: float = field(default=1e3, metadata={"parse": _float})
    grid_size: int = field(default=400, metadata={"parse": _int})
    grading: str = field(default="geometric:1.05", metadata={"parse": _grading})
    bump_amplitude: float = field(default=0.1, metadata={"parse": _float})
    workers: int = field(default=4, metadata={"parse": _int})

    def values(self):
        def axis(lo, hi):
            if self.steps == 1:
                return [lo]
            return [lo + (hi - lo) * k / (self.steps - 1) for k in range(self.steps)]
        return axis(self.p_min, self.p_max), axis(self.q_min, self.q_max)


@dataclass(frozen=True)
class OutputBlock:
    dir: Optional[str] = field(default=None, metadata={"parse": _str})
    seed: int = field(default=0, metadata={"parse": _int})

    def resolve_dir(self) -> str:
        return self.dir or os.environ.get("BLOWUPLAB_OUTDIR") or DEFAULT_OUTDIR


SECTIONS = {"problem": ProblemBlock, "select": SelectBlock, "solver": SolverBlock,
            "certify": CertifyBlock, "compare": CompareBlock, "sweep": SweepBlock,
            "output": OutputBlock}


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemBlock = ProblemBlock()
    select: SelectBlock = SelectBlock()
    solver: SolverBlock = SolverBlock()
    certify: CertifyBlock = CertifyBlock()
    compare: CompareBlock = CompareBlock()
    sweep: SweepBlock = SweepBlock()
    output: OutputBlock = OutputBlock()

    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            block = getattr(self, name)
            out[name] = {f.name: getattr(block, f.name) for f in fields(block)}
        return out


def _apply(cfg: ExperimentConfig, section: str, items, origin: str) -> ExperimentConfig:
    if section not in SECTIONS:
        raise ConfigError(f"{origin}: unknown section [{section}]")
    block = getattr(cfg, section)
    known = {f.name: f for f in fields(block)}
    updates = {}
    for key, raw in items:
        if key not in known:
            raise ConfigError(f"{origin}: unknown key '{key}' in [{section}]")
        try:
            updates[key] = known[key].metadata["parse"](raw)
        except ValueError as exc:
            raise ConfigError(f"{origin}: bad value for {section}.{key} = {raw!r}: {exc}")
    return replace(cfg, **{section: replace(block, **updates)})


def _validate(cfg: ExperimentConfig) -> None:
    pb = cfg.problem
    try:
        ProblemParams(pb.n, pb.R, pb.chi, pb.p, pb.q, 1.0)
    except ValueError as exc:
        raise ConfigError(f"[problem]: {exc}")
    if isinstance(pb.m, float) and not (math.isfinite(pb.m) and pb.m > 0):
        raise ConfigError("[problem]: m must be positive and finite")
    sb = cfg.solver
    if sb.grid_size < 18:
        raise ConfigError("[solver]: grid_size must be at least 18")
    if sb.horizon is not None and not sb.horizon > 0:
        raise ConfigError("[solver]: horizon must be positive")
    try:
        sb.build(1.0)
    except ValueError as exc:
        raise ConfigError(f"[solver]: {exc}")
    cb = cfg.certify
    if cb.Ns < 2 or cb.Nt < 1 or cb.kink_margin < 0 or not (0 < cb.t_fraction < 1):
        raise ConfigError("[certify]: need Ns >= 2, Nt >= 1, kink_margin >= 0, 0 < t_fraction < 1")
    if not (cb.ratio > 1 and cb.kappa_factor > 0):
        raise ConfigError("[certify]: ratio must exceed 1 and kappa_factor must be positive")
    sw = cfg.sweep
    if sw.steps < 1 or sw.workers < 1 or sw.grid_size < 18:
        raise ConfigError("[sweep]: steps, workers must be >= 1 and grid_size >= 18")
    if min(sw.p_min, sw.q_min) < 1 or sw.p_max < sw.p_min or sw.q_max < sw.q_min:
        raise ConfigError("[sweep]: need 1 <= p_min <= p_max and 1 <= q_min <= q_max")


def load_config(path: Optional[str] = None, overrides=()) -> ExperimentConfig:
    """Read ``path`` (optional), then apply ``overrides`` of the form
    ``("section.key", "value")``; the result is validated."""
    cfg = ExperimentConfig()
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None, default_section="__unused__")
        cp.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}")
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}")
        for section in cp.sections():
            cfg = _apply(cfg, section, cp.items(section), path)
    for dotted, value in overrides:
        if "." not in dotted:
            raise ConfigError(f"override '{dotted}' must look like section.key")
        section, key = dotted.split(".", 1)
        cfg = _apply(cfg, section, [(key, value)], "command line")
    _validate(cfg)
    return cfg
