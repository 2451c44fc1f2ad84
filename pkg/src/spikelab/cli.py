"""Command-line front end: ground-state, nlep {scan,hopf,asymptotics}, steady, simulate, verify-identities.

Exit codes: 0 success with all built-in checks passing, 1 numerical or check
failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .grid import RadialGrid
from .ground_state import (DEFAULT_L, DEFAULT_N_NODES, GroundStateError, ResolutionError, identities_pass,
                           identity_residuals, solve_ground_state)
from .nlep import (DEFAULT_NLEP_L, DEFAULT_NLEP_N, MAX_STEPS_PER_DECADE, B_SECH_STATED, NlepError, NlepProblem,
                   asymptotic_checks, find_hopf, scan_branch)
from .operators import ShiftAtSpectrum, SpectrumError, linearized_operator

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(ValueError):
    pass


def fmt(x) -> str:
    """17 significant digits, enough to round-trip a double."""
    return format(float(x), ".17g")


# ---------------------------------------------------------------- config

KEY_TYPES = {
    "dim": int, "grid_n": int, "grid_L": float, "tol": float, "out": str,
    "tau": float, "tau_min": float, "tau_max": float, "steps_per_decade": int,
    "eps": float, "D0": float, "alpha0": float, "gamma0": float, "R": float,
    "tau_tilde": float, "dt": float, "T": float, "output_every": int, "perturbation": float,
}

DEFAULTS = {
    "ground-state": {"dim": 1, "grid_n": DEFAULT_N_NODES, "grid_L": DEFAULT_L, "tol": None, "out": "out"},
    "verify-identities": {"dim": 1, "grid_n": DEFAULT_N_NODES, "grid_L": DEFAULT_L, "tol": 1e-6, "out": "out"},
    "nlep scan": {"dim": 2, "grid_n": DEFAULT_NLEP_N, "grid_L": DEFAULT_NLEP_L, "tau_min": 1e-2,
                  "tau_max": 1e4, "steps_per_decade": 20, "out": "out"},
    "nlep hopf": {"dim": 2, "grid_n": DEFAULT_NLEP_N, "grid_L": DEFAULT_NLEP_L, "tau_min": 1e-2,
                  "tau_max": 1e4, "steps_per_decade": 20, "tol": 1e-8, "out": "out"},
    "nlep asymptotics": {"dim": 1, "grid_n": DEFAULT_NLEP_N, "grid_L": DEFAULT_NLEP_L, "tau": 1e4, "out": "out"},
    "steady": {"dim": 1, "eps": 0.05, "D0": 1e3, "alpha0": 1.0, "gamma0": 1.0, "R": 1.0, "grid_n": None,
               "tol": 1e-10, "out": "out"},
    "simulate": {"dim": 2, "eps": 0.05, "D0": 1e3, "alpha0": 1.0, "gamma0": 1.0, "R": 1.0, "grid_n": None,
                 "tau_tilde": 0.5, "tau": None, "dt": 0.005, "T": 60.0, "output_every": 4,
                 "perturbation": 0.01, "out": "out"},
}


def _convert(key: str, raw: str):
    if key not in KEY_TYPES:
        raise UsageError(f"unknown configuration key {key!r}")
    if raw in ("", "None", "none"):
        return None
    try:
        return KEY_TYPES[key](raw)
    except ValueError as exc:
        raise UsageError(f"bad value for {key}: {raw!r}") from exc


def parse_config(text: str) -> dict:
    """Flat key=value lines; '#' starts a comment; dashes in keys read as underscores."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        out[key] = _convert(key, raw)
    return out


def format_config(cfg: dict) -> str:
    lines = []
    for key in sorted(cfg):
        val = cfg[key]
        if val is None:
            continue
        if KEY_TYPES.get(key) is float:
            val = fmt(val)
        lines.append(f"{key}={val}")
    return "\n".join(lines) + "\n"


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cfg = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from exc
        for key, val in parse_config(text).items():
            if key not in cfg:
                raise UsageError(f"key {key!r} does not apply to {command}")
            cfg[key] = val
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if cfg.get("dim") not in (1, 2):
        raise UsageError(f"--dim must be 1 or 2, got {cfg.get('dim')}")
    for key in ("grid_n", "steps_per_decade", "output_every"):
        if cfg.get(key) is not None and cfg[key] < 1:
            raise UsageError(f"{key} must be a positive integer")
    for key in ("grid_L", "tol", "eps", "D0", "alpha0", "gamma0", "R", "dt", "T", "tau_min", "tau_max"):
        if cfg.get(key) is not None and not cfg[key] > 0:
            raise UsageError(f"{key} must be positive")
    return cfg


# ---------------------------------------------------------------- output

def _plain(obj):
    """Numpy scalars and tuples to plain JSON-able values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def dumps(obj, indent: int = 0) -> str:
    """JSON with every float at 17 significant digits and sorted keys."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(k)}: {dumps(obj[k], indent + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(inner + dumps(v, indent + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, float):
        return fmt(obj) if math.isfinite(obj) else "null"
    return json.dumps(obj)


class Emitter:
    """Writes data files into one directory and remembers them for the manifest."""

    def __init__(self, out: str, command: str):
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.files: list[str] = []

    def _path(self, name: str) -> Path:
        self.files.append(name)
        return self.dir / name

    def csv(self, name: str, header: list[str], rows) -> None:
        with open(self._path(name), "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(header)
            for row in rows:
                wr.writerow([fmt(x) for x in row])

    def json(self, name: str, obj) -> None:
        self._path(name).write_text(dumps(_plain(obj)) + "\n", encoding="utf-8")

    def manifest(self, cfg: dict, checks: dict, started: float, code: int) -> Path:
        stem = self.command.replace(" ", "_").replace("-", "_")
        man = {
            "command": self.command,
            "config": cfg,
            "config_text": format_config(cfg),
            "version": __version__,
            "files": list(self.files),
            "checks": checks,
            "exit_code": code,
            "started": _dt.datetime.fromtimestamp(started, _dt.timezone.utc).isoformat(),
            "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "wall_clock_seconds": time.time() - started,
        }
        path = self.dir / f"{stem}_manifest.json"
        path.write_text(dumps(_plain(man)) + "\n", encoding="utf-8")
        return path


def _finish(em: Emitter, cfg: dict, checks: dict, started: float) -> int:
    code = EXIT_OK if all(checks.values()) else EXIT_FAIL
    em.manifest(cfg, checks, started, code)
    return code


# ---------------------------------------------------------------- commands

def _ground_state(cfg: dict):
    grid = RadialGrid(cfg["dim"], cfg["grid_n"], cfg["grid_L"])
    try:
        return solve_ground_state(cfg["dim"], grid), None
    except ResolutionError as exc:
        return solve_ground_state(cfg["dim"], grid, check_residual=False), str(exc)


def _identity_tol(cfg: dict) -> float:
    if cfg.get("tol") is not None:
        return cfg["tol"]
    return 1e-6 if cfg["dim"] == 1 else 1e-3


def _report_identities(res: dict, relative: bool, tol: float) -> None:
    key = "rel_err" if relative else "abs_err"
    for name, row in res.items():
        flag = "ok" if row[key] <= tol else "FAIL"
        print(f"  {name:12s} value={fmt(row['value'])} expected={fmt(row['expected'])} "
              f"{key}={row[key]:.3e} {flag}")


def cmd_ground_state(cfg: dict) -> int:
    started = time.time()
    em = Emitter(cfg["out"], "ground-state")
    try:
        gs, resolution = _ground_state(cfg)
    except (GroundStateError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _finish(em, cfg, {"solved": False}, started)
    tol = _identity_tol(cfg)
    relative = gs.N == 2
    res = identity_residuals(gs)
    em.csv("ground_state_profile.csv", ["r", "w", "dw", "w0"], zip(gs.grid.r, gs.w, gs.dw, gs.w0))
    em.json("ground_state_moments.json", {
        "N": gs.N, "grid_n": gs.grid.n, "grid_L": gs.grid.L, **gs.moments(),
        "w_origin": gs.w_origin, "ode_residual": gs.residual, "identities": res,
        "identity_tol": tol, "identity_mode": "relative" if relative else "absolute",
    })
    checks = {"resolution": resolution is None, "identities": identities_pass(gs, tol, relative)}
    print(f"w(0) = {fmt(gs.w_origin)}  m2 = {fmt(gs.m2)}  ODE residual = {gs.residual:.3e}")
    if resolution is not None:
        print(f"resolution error: {resolution}", file=sys.stderr)
    if not all(checks.values()):
        print("identity-residual report:")
        _report_identities(res, relative, tol)
    return _finish(em, cfg, checks, started)


def cmd_verify_identities(cfg: dict) -> int:
    started = time.time()
    em = Emitter(cfg["out"], "verify-identities")
    try:
        gs, resolution = _ground_state(cfg)
    except (GroundStateError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _finish(em, cfg, {"solved": False}, started)
    tol = cfg["tol"]
    relative = gs.N == 2
    res = identity_residuals(gs)
    # discrete operator identity on the polished profile
    op = linearized_operator(gs)
    w = op.w
    lw = op.apply(w)
    n = gs.grid.n
    op_err = float(np.max(np.abs(lw[:n] - 2 * w[:n] ** 3)) / np.max(np.abs(2 * w[:n] ** 3)))
    res["L0_w_eq_2w3"] = {"value": op_err, "expected": 0.0, "abs_err": op_err, "rel_err": op_err}
    checks = {"resolution": resolution is None, "identities": identities_pass(gs, tol, relative),
              "operator": op_err <= tol}
    em.json("identities.json", {"N": gs.N, "grid_n": n, "tol": tol,
                                "mode": "relative" if relative else "absolute", "identities": res})
    _report_identities(res, relative, tol)
    if resolution is not None:
        print(f"resolution error: {resolution}", file=sys.stderr)
    print("PASS" if all(checks.values()) else "FAIL")
    return _finish(em, cfg, checks, started)


def _nlep_problem(cfg: dict) -> NlepProblem:
    return NlepProblem.build(cfg["dim"], n=cfg["grid_n"], L=cfg["grid_L"])


def cmd_nlep_scan(cfg: dict) -> int:
    started = time.time()
    em = Emitter(cfg["out"], "nlep scan")
    lo, hi = cfg["tau_min"], cfg["tau_max"]
    if not hi > lo:
        print("error: tau_max must exceed tau_min", file=sys.stderr)
        return EXIT_USAGE
    spd = min(cfg["steps_per_decade"], MAX_STEPS_PER_DECADE)
    try:
        p = _nlep_problem(cfg)
        steps = int(math.ceil(spd * math.log10(hi / lo))) + 1
        br = scan_branch(p, (hi, lo), max(steps, 2))
    except (NlepError, ShiftAtSpectrum, SpectrumError, GroundStateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        branch = getattr(exc, "branch", None)
        if branch is not None:
            em.csv("nlep_branch.csv", ["tau_tilde", "re_lambda", "im_lambda", "abs_F"], branch.rows())
        return _finish(em, cfg, {"scan": False}, started)
    em.csv("nlep_branch.csv", ["tau_tilde", "re_lambda", "im_lambda", "abs_F"], br.rows())
    crossings = [[br.taus[k], br.taus[k + 1]] for k in br.sign_changes()]
    em.json("nlep_scan.json", {"N": p.N, "points": len(br.taus), "seed": br.seed,
                               "sign_change_brackets": crossings, "max_abs_F": max(br.abs_F)})
    print(f"{len(br.taus)} points, Re lambda sign changes in {crossings}")
    return _finish(em, cfg, {"scan": True}, started)


def cmd_nlep_hopf(cfg: dict) -> int:
    started = time.time()
    em = Emitter(cfg["out"], "nlep hopf")
    try:
        p = _nlep_problem(cfg)
        hp = find_hopf(p, bracket=(cfg["tau_min"], cfg["tau_max"]), steps_per_decade=cfg["steps_per_decade"],
                       tol=cfg["tol"])
    except (NlepError, ShiftAtSpectrum, SpectrumError, GroundStateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _finish(em, cfg, {"hopf": False}, started)
    em.csv("nlep_branch.csv", ["tau_tilde", "re_lambda", "im_lambda", "abs_F"], hp.branch.rows())
    em.json("nlep_hopf.json", {"N": p.N, "tau_h": hp.tau, "re_lambda_h": hp.lam.real,
                               "im_lambda_h": hp.lam.imag})
    print(f"tau_h = {fmt(hp.tau)}")
    print(f"lambda_h = {fmt(hp.lam.real)} + {fmt(hp.lam.imag)}i")
    ok = math.isfinite(hp.tau) and hp.tau > 0 and hp.lam.imag != 0
    return _finish(em, cfg, {"hopf": ok}, started)


def cmd_nlep_asymptotics(cfg: dict) -> int:
    started = time.time()
    em = Emitter(cfg["out"], "nlep asymptotics")
    try:
        p = _nlep_problem(cfg)
        rep = asymptotic_checks(p, taus=(cfg["tau"],))
    except (NlepError, ShiftAtSpectrum, SpectrumError, GroundStateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _finish(em, cfg, {"asymptotics": False}, started)
    row = rep["rows"][0]
    if p.N == 1:
        checks = {"im_scaling": row["rel_err_im"] < 0.01, "re_scaling": row["rel_err_re_vs_stated"] < 0.10}
        print(f"Im lambda * tau^(1/2) = {fmt(row['im_lambda_sqrt_tau'])}  (sqrt 2, rel err {row['rel_err_im']:.2e})")
        print(f"Re lambda * tau = {fmt(row['re_lambda_tau'])}  (target {fmt(B_SECH_STATED)}, "
              f"rel err {row['rel_err_re_vs_stated']:.2e}; profile value {fmt(row['b_profile'])})")
    else:
        checks = {"arg": row["arg_err"] < 0.05, "modulus": row["rel_err_modulus"] < 0.10}
        print(f"arg lambda = {fmt(row['arg_lambda'])}  (pi/3, err {row['arg_err']:.2e})")
        print(f"|lambda|^3 tau / c0 = {fmt(row['abs_lambda_cubed_tau_over_c0'])}  "
              f"(rel err {row['rel_err_modulus']:.2e})")
    em.json("nlep_asymptotics.json", {**rep, "checks": checks})
    return _finish(em, cfg, checks, started)


def _model_params(cfg: dict):
    from .steady_state import ModelParams
    return ModelParams(cfg["alpha0"], cfg["gamma0"], cfg["R"], cfg["eps"], cfg["D0"], N=cfg["dim"])


def cmd_steady(cfg: dict) -> int:
    from .steady_state import SteadyStateError, diagnostics, solve_spike
    started = time.time()
    em = Emitter(cfg["out"], "steady")
    try:
        p = _model_params(cfg)
        sol = solve_spike(p, n_phys=cfg["grid_n"])
        diag = diagnostics(sol)
    except (SteadyStateError, GroundStateError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _finish(em, cfg, {"newton": False}, started)
    em.csv("steady_profile.csv", ["r", "u", "v", "A", "V"], sol.rows())
    em.json("steady_summary.json", {"N": p.N, "grid_n": sol.grid.n, "newton_history": sol.history, **diag})
    print(f"v(0) = {fmt(diag['v0_computed'])}  v0 = {fmt(diag['v0_predicted'])}  "
          f"Newton residual = {diag['newton_residual']:.3e} after {sol.iterations} iterations")
    return _finish(em, cfg, {"newton": diag["newton_residual"] < cfg["tol"]}, started)


def cmd_simulate(cfg: dict) -> int:
    from .pde_sim import SimConfig, SimulationError, perturbed, run
    from .steady_state import SteadyStateError, solve_spike
    started = time.time()
    em = Emitter(cfg["out"], "simulate")
    try:
        p = _model_params(cfg)
        p = p.with_tau_tilde(cfg["tau_tilde"]) if cfg["tau"] is None else replace(p, tau=cfg["tau"])
        sol = solve_spike(p, n_phys=cfg["grid_n"])
        sc = SimConfig(p, sol.grid, dt=cfg["dt"], T=cfg["T"], output_every=cfg["output_every"])
        tr = run(sc, perturbed(sol.u, sol.v, sol.grid, p.eps, cfg["perturbation"]), (sol.u, sol.v))
    except (SimulationError, SteadyStateError, GroundStateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _finish(em, cfg, {"simulation": False}, started)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    em.csv("simulate_timeseries.csv", ["t", "u0", "v0", "amp"], tr.rows())
    em.json("simulate_summary.json", {"N": p.N, "tau": p.tau, "tau_tilde": p.tau_tilde, **tr.summary()})
    print(f"verdict: {tr.verdict}  sigma = {fmt(tr.sigma)}  omega = {fmt(tr.omega)}")
    return _finish(em, cfg, {"simulation": math.isfinite(tr.sigma)}, started)


# ---------------------------------------------------------------- parser

def _common(sp: argparse.ArgumentParser, grid: bool = True) -> None:
    sp.add_argument("--dim", type=int, choices=(1, 2), help="space dimension N")
    if grid:
        sp.add_argument("--grid-n", dest="grid_n", type=int, help="number of grid intervals")
    sp.add_argument("--out", help="output directory (default ./out)")
    sp.add_argument("--config", help="key=value configuration file; flags override it")


def _model_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--grid-n", dest="grid_n", type=int, help="grid intervals on [0, R]")
    sp.add_argument("--eps", type=float)
    sp.add_argument("--D0", dest="D0", type=float)
    sp.add_argument("--alpha0", type=float)
    sp.add_argument("--gamma0", type=float)
    sp.add_argument("--R", dest="R", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spikelab", description="Spike steady states, NLEP spectra and dynamics.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    for name, hlp in (("ground-state", "ground state profile and moments"),
                      ("verify-identities", "integral and operator identity suite")):
        sp = sub.add_parser(name, help=hlp)
        _common(sp)
        sp.add_argument("--grid-L", dest="grid_L", type=float, help="truncation radius")
        sp.add_argument("--tol", type=float, help="identity tolerance")

    nl = sub.add_parser("nlep", help="nonlocal eigenvalue problem")
    nsub = nl.add_subparsers(dest="action", required=True)
    for name in ("scan", "hopf", "asymptotics"):
        sp = nsub.add_parser(name)
        _common(sp)
        sp.add_argument("--grid-L", dest="grid_L", type=float, help="truncation radius")
        if name == "asymptotics":
            sp.add_argument("--tau", type=float, help="tau-tilde at which to test the large-tau formulas")
        else:
            sp.add_argument("--tau-min", dest="tau_min", type=float)
            sp.add_argument("--tau-max", dest="tau_max", type=float)
            sp.add_argument("--steps-per-decade", dest="steps_per_decade", type=int)
        if name == "hopf":
            sp.add_argument("--tol", type=float, help="tolerance on Re lambda at the crossing")

    sp = sub.add_parser("steady", help="full steady state by Newton")
    _common(sp, grid=False)
    _model_flags(sp)
    sp.add_argument("--tol", type=float, help="Newton residual required for success")

    sp = sub.add_parser("simulate", help="time integration from a perturbed spike")
    _common(sp, grid=False)
    _model_flags(sp)
    sp.add_argument("--tau-tilde", dest="tau_tilde", type=float)
    sp.add_argument("--tau", type=float, help="raw tau (overrides --tau-tilde)")
    sp.add_argument("--dt", type=float)
    sp.add_argument("--T", dest="T", type=float)
    sp.add_argument("--output-every", dest="output_every", type=int)
    sp.add_argument("--perturbation", type=float, help="relative height of the initial bump")
    return ap


COMMANDS = {
    "ground-state": cmd_ground_state,
    "verify-identities": cmd_verify_identities,
    "nlep scan": cmd_nlep_scan,
    "nlep hopf": cmd_nlep_hopf,
    "nlep asymptotics": cmd_nlep_asymptotics,
    "steady": cmd_steady,
    "simulate": cmd_simulate,
}


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    command = args.command if args.command != "nlep" else f"nlep {args.action}"
    try:
        cfg = resolve_config(command, args)
        return COMMANDS[command](cfg)
    except UsageError as exc:
        ap.print_usage(sys.stderr)
        print(f"spikelab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
