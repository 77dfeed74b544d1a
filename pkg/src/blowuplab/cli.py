"""Command line front end.

Exit codes
----------
0   success: report passed / ordering holds / run ended Completed or BlowUpThreshold
1   report negative: certificate violated, ordering or lower bound failed
2   simulation ended in StepCollapse
3   infeasible parameters (no certified constants, no finite critical mass)
64  malformed configuration or command line
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .comparison import compare, dominance_check, dominance_r_grid
from .config import ConfigError, ExperimentConfig, SweepBlock, load_config
from .operator import certify_subsolution, with_kappa
from .params import (InfeasibleError, ProblemParams, certifiable_mass, chi_threshold,
                     critical_mass, select_parameters)
from .solver import SolverConfig, Trajectory, build_grid, run, u_from_w
from .subsolution import initial_data, subsolution_values

EXIT_OK, EXIT_NEGATIVE, EXIT_COLLAPSE, EXIT_INFEASIBLE, EXIT_USAGE = 0, 1, 2, 3, 64

CLASSES = ("blowup_observed", "no_blowup_in_horizon", "unclassified", "infeasible")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# output helpers -------------------------------------------------------------

def _clean(x):
    # JSON has no inf/nan; spell them as strings
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        x = x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def write_text(outdir: str, name: str, text: str) -> str:
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, name)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


# shared pipeline pieces -----------------------------------------------------

def _problem(cfg: ExperimentConfig) -> ProblemParams:
    try:
        return cfg.problem.build()
    except InfeasibleError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc))


def _select(cfg: ExperimentConfig, problem: ProblemParams):
    try:
        return select_parameters(problem, cfg.select.build())
    except ValueError as exc:
        raise ConfigError(str(exc))


def _initial_w(cfg: ExperimentConfig, problem: ProblemParams, grid, params):
    s = grid.s_nodes
    kind = cfg.solver.initial_data
    if kind == "subsolution":
        r = s ** (1.0 / problem.n) if problem.n > 1 else s
        if cfg.solver.mollify > 0:
            # integrate the mollified density back to w with the trapezoid rule
            u = initial_data(params, problem, r, mollify=cfg.solver.mollify)
            w = np.concatenate([[0.0], np.cumsum(0.5 * (u[1:] + u[:-1]) * np.diff(s))])
            w /= problem.n
            w *= problem.mass_scale / w[-1]
        else:
            w = subsolution_values(params, problem, s, 0.0)
    elif kind == "uniform":
        w = problem.mu * s / problem.n
    else:
        w = bump_data(problem, s, cfg.solver.bump_amplitude)
    w = np.array(w, dtype=float)
    w[0], w[-1] = 0.0, problem.mass_scale
    return w


def bump_data(problem: ProblemParams, s, amplitude: float) -> np.ndarray:
    """Steady state plus a smooth bump vanishing at both ends (s in units of R^n)."""
    x = np.asarray(s, dtype=float) / problem.s_max
    w = problem.mu * np.asarray(s, dtype=float) / problem.n
    return w + amplitude * problem.mass_scale * np.sin(np.pi * x) ** 3


def _simulate(cfg: ExperimentConfig):
    """Returns (problem, params or None, feasibility or None, trajectory, horizon_source)."""
    problem = _problem(cfg)
    params = report = None
    need_params = cfg.solver.initial_data == "subsolution" or cfg.solver.horizon is None
    if need_params and problem.p <= problem.q:
        params, report = _select(cfg, problem)
    if cfg.solver.initial_data == "subsolution" and params is None:
        why = report.failure_reason if report else "constant selection needs p <= q"
        raise InfeasibleError(why)
    if cfg.solver.horizon is not None:
        horizon, source = cfg.solver.horizon, "config"
    elif params is not None:
        horizon, source = params.T, "T"
    else:
        horizon, source = 1.0, "default"
    grid = build_grid(*cfg.solver.grid_args(), s_max=problem.s_max)
    w0 = _initial_w(cfg, problem, grid, params)
    try:
        scfg = cfg.solver.build(horizon)
    except ValueError as exc:
        raise ConfigError(str(exc))
    traj = run(problem, grid, w0, scfg)
    return problem, params, report, traj, source


def _trajectory_files(cfg, outdir, problem, params, traj: Trajectory, source):
    meta = {"problem": problem.to_dict(),
            "params": params.to_dict() if params is not None else None,
            "horizon_source": source,
            "config": cfg.to_dict(),
            "trajectory": traj.metadata()}
    write_text(outdir, "series.csv", traj.series_csv())
    write_text(outdir, "snapshots.csv", traj.snapshots_csv())
    write_text(outdir, "trajectory.json", dumps(meta))


def _status_line(traj: Trajectory, params) -> str:
    st = traj.status
    if st.kind == "BlowUpThreshold":
        msg = (f"blow-up: sup u = {st.value:.6g} crossed U_max = {traj.threshold:.6g} "
               f"at t* = {st.t:.9g}")
        if params is not None:
            msg += f" (certified upper bound T = {params.T:.9g})"
        return msg
    if st.kind == "Completed":
        return f"completed: horizon {st.t:.9g} reached without crossing U_max"
    return f"step collapse at t = {st.t:.9g}: {st.detail} (dt = {st.value:.3g})"


# commands -------------------------------------------------------------------

def cmd_mc(args, cfg: ExperimentConfig) -> int:
    pb = cfg.problem
    fn = certifiable_mass if args.variant == "certifiable" else critical_mass
    res = fn(pb.chi, pb.p, pb.q, pb.R)
    print(f"m_c = {res.m_c:.7f}  lambda = {res.lam:.7f}  residual = {res.residual:.3e}")
    out = {"chi": pb.chi, "p": pb.p, "q": pb.q, "R": pb.R, "variant": res.variant,
           "m_c": res.m_c, "lambda": res.lam, "residual": res.residual}
    if pb.p == pb.q and pb.chi > 1:
        out["closed_form"] = 1.0 / math.sqrt(pb.chi ** 2 - 1.0)
    write_text(cfg.output.resolve_dir(), "mc.json", dumps(out))
    return EXIT_OK


def cmd_params(args, cfg: ExperimentConfig) -> int:
    problem = _problem(cfg)
    params, report = _select(cfg, problem)
    out = {"problem": problem.to_dict(), "feasibility": report.to_dict(),
           "params": params.to_dict() if params is not None else None}
    write_text(cfg.output.resolve_dir(), "params.json", dumps(out))
    if params is None:
        print(f"infeasible: {report.failure_reason}")
        return EXIT_INFEASIBLE
    print(f"feasible: lambda = {params.lam:.6g}, K = {params.K:.6g}, B0 = {params.B0:.6g}, "
          f"kappa = {params.kappa:.6g}, T = {params.T:.6g}")
    return EXIT_OK


def cmd_certify(args, cfg: ExperimentConfig) -> int:
    problem = _problem(cfg)
    params, report = _select(cfg, problem)
    cb = cfg.certify
    if params is None:
        write_text(cfg.output.resolve_dir(), "certificate.json",
                   dumps({"problem": problem.to_dict(), "feasibility": report.to_dict(),
                          "certificate": None}))
        print(f"infeasible: {report.failure_reason}")
        return EXIT_INFEASIBLE
    used = params
    if cb.kappa_factor != 1.0:
        used = with_kappa(params, params.kappa * cb.kappa_factor, problem.n)
    cert = certify_subsolution(problem, used, Ns=cb.Ns, Nt=cb.Nt, kink_margin=cb.kink_margin,
                               tolerance=cb.tolerance, t_fraction=cb.t_fraction,
                               ratio=cb.ratio, require_feasible=cb.kappa_factor == 1.0)
    out = {"problem": problem.to_dict(), "feasibility": report.to_dict(),
           "params": used.to_dict(), "kappa_factor": cb.kappa_factor,
           "certificate": cert.to_dict()}
    write_text(cfg.output.resolve_dir(), "certificate.json", dumps(out))
    print(f"certificate {'passed' if cert.passed else 'FAILED'}: "
          f"{cert.violation_count} violations on {cb.Ns}x{cb.Nt} grid")
    return EXIT_OK if cert.passed else EXIT_NEGATIVE


def cmd_simulate(args, cfg: ExperimentConfig) -> int:
    problem, params, _, traj, source = _simulate(cfg)
    _trajectory_files(cfg, cfg.output.resolve_dir(), problem, params, traj, source)
    print(_status_line(traj, params))
    return EXIT_COLLAPSE if traj.status.kind == "StepCollapse" else EXIT_OK


def cmd_compare(args, cfg: ExperimentConfig) -> int:
    problem = _problem(cfg)
    params, report = _select(cfg, problem)
    outdir = cfg.output.resolve_dir()
    if params is None:
        write_text(outdir, "comparison.json",
                   dumps({"problem": problem.to_dict(), "feasibility": report.to_dict(),
                          "ordering_ok": None}))
        print(f"infeasible: {report.failure_reason}")
        return EXIT_INFEASIBLE
    problem, _, _, traj, source = _simulate(cfg)
    _trajectory_files(cfg, outdir, problem, params, traj, source)
    cb = cfg.compare
    rep = compare(traj, params, problem, tolerance=cb.tolerance,
                  lower_bound_factor=cb.lower_bound_factor, sampling=cb.sampling,
                  min_inner_nodes=cb.min_inner_nodes)
    if cfg.solver.initial_data == "subsolution" and cfg.solver.mollify == 0:
        r = dominance_r_grid(params, problem)
        u0 = initial_data(params, problem, r)
    else:
        r = traj.grid.s_nodes ** (1.0 / problem.n)
        u0 = u_from_w(traj.grid, traj.snapshots[0], problem.n)
    dom_ok, dom_r, dom_gap = dominance_check(u0, r, params, problem)
    out = rep.to_dict()
    out = {"ordering_ok": out.pop("ordering_ok"), "lower_bound_ok": out.pop("lower_bound_ok"),
           "dominance": {"ok": dom_ok, "worst_r": dom_r, "worst_margin": dom_gap},
           "status": traj.status.to_dict(), "t_star_below_T": (
               traj.status.kind == "BlowUpThreshold" and traj.status.t < params.T),
           "T": params.T, **out}
    write_text(outdir, "comparison.json", dumps(out))
    write_text(outdir, "lower_bound.csv", rep.lower_bound_csv())
    print(_status_line(traj, params))
    if not rep.precondition_ok:
        print(f"precondition failed: initial data below the subsolution by {-rep.initial_gap:.3e}")
    print(f"ordering {'ok' if rep.ordering_ok else 'VIOLATED'} (min gap {rep.min_gap:.3e}, "
          f"tolerance {rep.tolerance:.3e}); lower bound {'ok' if rep.lower_bound_ok else 'FAILED'}")
    return EXIT_OK if rep.ordering_ok else EXIT_NEGATIVE


# phase sweep ------------------------------------------------------------------

def regime(n: int, p: float, q: float) -> str:
    if p <= q:
        return "blowup"
    if p > q + 1.0 - 1.0 / n:
        return "global"
    return "band"


def phase_cell(sweep: SweepBlock, p: float, q: float) -> dict:
    """Run one sweep cell; never raises."""
    n, R = sweep.n, sweep.R
    kind = regime(n, p, q)
    row = {"p": p, "q": q, "regime": kind, "classification": "unclassified", "chi": None,
           "m": None, "horizon": None, "status": None, "t": None, "sup_u": None,
           "threshold": None, "detail": ""}
    try:
        if kind == "blowup":
            if n == 1:
                chi = sweep.chi
                fn = certifiable_mass if sweep.mass_policy == "certifiable" else critical_mass
                m = sweep.mass_factor * fn(chi, p, q, R).m_c
            else:
                m = sweep.m
                chi = sweep.chi_factor * chi_threshold(m, n, p, q, R)
            problem = ProblemParams(n, R, chi, p, q, m)
            row.update(chi=chi, m=m)
            params, rep = select_parameters(problem)
            if params is None:
                row.update(classification="infeasible", detail=rep.failure_reason)
                return row
            horizon = params.T
        else:
            problem = ProblemParams(n, R, sweep.chi, p, q, sweep.m)
            row.update(chi=sweep.chi, m=sweep.m)
            horizon = sweep.horizon
        grading = sweep.grading
        grid = build_grid(sweep.grid_size, "uniform" if grading == "uniform" else
                          ("geometric", float(grading.split(":", 1)[1])), s_max=problem.s_max)
        s = grid.s_nodes
        if kind == "blowup":
            w0 = subsolution_values(params, problem, s, 0.0)
        else:
            w0 = bump_data(problem, s, sweep.bump_amplitude)
        w0[0], w0[-1] = 0.0, problem.mass_scale
        cfg = SolverConfig(horizon=horizon, U_max_factor=sweep.U_max_factor,
                           dt_max=sweep.dt_fraction * horizon, save_stride=10 ** 9,
                           series_stride=10 ** 9)
        traj = run(problem, grid, w0, cfg)
        st = traj.status
        row.update(horizon=horizon, status=st.kind, t=st.t, threshold=traj.threshold,
                   sup_u=max(u for _, u in traj.sup_u_series), detail=st.detail)
        if st.kind == "BlowUpThreshold":
            row["classification"] = "blowup_observed"
        elif st.kind == "Completed" and kind != "band":
            row["classification"] = "no_blowup_in_horizon"
    except Exception as exc:  # recorded per cell; the sweep continues
        row.update(classification="infeasible" if isinstance(exc, InfeasibleError)
                   else "unclassified", detail=f"{type(exc).__name__}: {exc}")
    return row


PHASE_COLUMNS = ("p", "q", "regime", "classification", "chi", "m", "horizon", "status", "t",
                 "sup_u", "threshold", "detail")


def _cell_name(p, q) -> str:
    return f"cell_p{p!r}_q{q!r}.json"


def cmd_phase(args, cfg: ExperimentConfig) -> int:
    sweep = cfg.sweep
    ps, qs = sweep.values()
    cells = [(p, q) for p in ps for q in qs]
    outdir = cfg.output.resolve_dir()
    celldir = os.path.join(outdir, "cells")
    if sweep.workers > 1:
        with ProcessPoolExecutor(max_workers=sweep.workers) as pool:
            futures = [pool.submit(phase_cell, sweep, p, q) for p, q in cells]
            for (p, q), fut in zip(cells, futures):
                write_text(celldir, _cell_name(p, q), dumps(fut.result()))
    else:
        for p, q in cells:
            write_text(celldir, _cell_name(p, q), dumps(phase_cell(sweep, p, q)))
    rows = []
    for p, q in sorted(cells):
        with open(os.path.join(celldir, _cell_name(p, q)), encoding="utf-8") as fh:
            rows.append(json.load(fh))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PHASE_COLUMNS)
    for row in rows:
        writer.writerow(["" if row[c] is None else (repr(row[c]) if isinstance(row[c], float)
                                                      else row[c]) for c in PHASE_COLUMNS])
    write_text(outdir, "phase.csv", buf.getvalue())
    policy = {"blowup": "q >= p: subsolution initial data, horizon T; n = 1 uses "
                         "m = mass_factor * m_c, n >= 2 uses chi = chi_factor * threshold",
              "band": "q < p <= q + 1 - 1/n: bump data, label unclassified unless U_max is crossed",
              "global": "p > q + 1 - 1/n: bump data over the sweep horizon"}
    write_text(outdir, "phase.json", dumps({"sweep": cfg.to_dict()["sweep"], "policy": policy,
                                            "seed": cfg.output.seed, "cells": rows}))
    for row in rows:
        print(f"p={row['p']:<5g} q={row['q']:<5g} {row['regime']:<8} {row['classification']}")
    return EXIT_OK


# argument handling ------------------------------------------------------------

FLAG_MAP = {
    "n": "problem.n", "R": "problem.R", "chi": "problem.chi", "p": "problem.p",
    "q": "problem.q", "m": "problem.m", "grid_size": "solver.grid_size",
    "grading": "solver.grading", "stepper": "solver.stepper", "U_max": "solver.U_max",
    "horizon": "solver.horizon", "initial_data": "solver.initial_data",
    "Ns": "certify.Ns", "Nt": "certify.Nt", "kink_margin": "certify.kink_margin",
    "tolerance": "certify.tolerance", "kappa_factor": "certify.kappa_factor",
    "workers": "sweep.workers", "outdir": "output.dir", "seed": "output.seed",
}


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="blowuplab", description="Flux-limited chemotaxis blow-up toolkit.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    commands = {
        "mc": "critical mass for n = 1",
        "params": "select certified constants",
        "certify": "scan the operator applied to the subsolution",
        "simulate": "integrate the mass accumulation equation",
        "compare": "simulate and check ordering against the subsolution",
        "phase": "sweep (p, q) and classify each cell",
    }
    for name, help_ in commands.items():
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", nargs="?", help="INI configuration file")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any configuration key")
        for flag, target in FLAG_MAP.items():
            sp.add_argument(f"--{flag.replace('_', '-')}", dest=f"flag_{flag}", default=None,
                            metavar=target.split(".")[1].upper(), help=f"sets {target}")
        if name == "mc":
            sp.add_argument("--variant", choices=("standard", "certifiable"), default="standard")
    return ap


def _overrides(args):
    out = []
    for flag, target in FLAG_MAP.items():
        v = getattr(args, f"flag_{flag}")
        if v is not None:
            out.append((target, v))
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out.append((k.strip(), v))
    return out


COMMANDS = {"mc": cmd_mc, "params": cmd_params, "certify": cmd_certify,
            "simulate": cmd_simulate, "compare": cmd_compare, "phase": cmd_phase}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config, _overrides(args))
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
