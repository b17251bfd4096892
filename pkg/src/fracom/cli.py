"""Command-line front end.

    fracom <command> [--config FILE.ini] [--set section.key=value ...] [--out DIR] [--threads N]

Commands: check, mpp, simulate, tube, ratio, smallball, example {pendulum,duffing}.
Configs are INI files with sections [model], [noise], [boundary] and [run]; flags
override file keys. Every run writes ``manifest.ini`` (the resolved config plus
version and seeds), which can be fed back through ``--config`` to reproduce it.

Exit codes: 0 success, 1 numerical or convergence failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InvalidArgument, NumericalFailure
from .fbm import as_hurst
from .grid import GridFn, TimeGrid
from .models import (ModelSpec, Potential, constant_noise, double_well, forced_duffing, linear_force,
                     modulated_noise, pendulum, potential_force, zero_force)
from .montecarlo import (NOISE, POSITION, EnsembleSpec, om_ratio_experiment, simulate_ensemble,
                         small_ball_diagnostic, tube_probability, write_ensemble)
from .mpp import (BoundaryData, MppOptions, MppProblem, minimize_om, noiseless_shoot, solve_el_bvp,
                  write_path_csv, write_solution)
from .omfunctional import PathPair, check_assumption_A, default_beta

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2

DEFAULTS = {
    "model": {"force": "pendulum", "gamma": "0.0"},
    "noise": {"kind": "cos", "sigma0": "2.0", "A": "1.5", "omega": "10.0"},
    "run": {"H": "0.3", "n": "129", "seed": "0", "threads": "1", "n_paths": "10000",
            "n_steps": "512", "starts": "5"},
}

EXAMPLES = {
    "pendulum": {
        "model": {"force": "pendulum", "gamma": "0.0"},
        "noise": {"kind": "cos", "sigma0": "2.0", "A": "1.5", "omega": "10.0"},
        "boundary": {"x0": str(-math.pi / 2), "y0": "0.0", "x1": str(math.pi / 2), "y1": "0.0"},
        "run": {"H": "0.3", "n": "257", "seed": "0", "n_paths": "10000", "n_steps": "1024",
                "check_H": "0.51", "check_beta": "0.28", "check_sigma0": "2.0", "check_A": "0.1"},
    },
    "duffing": {
        "model": {"force": "duffing", "gamma": "0.1", "coefficients": "0,0,-0.5,0,0.25"},
        "noise": {"kind": "constant", "c": "3.0"},
        "boundary": {"x0": "-1.0", "y0": "0.0", "x1": "1.0", "y1": "0.0"},
        "run": {"H": "0.5", "n": "257", "seed": "0", "n_paths": "10000", "n_steps": "1024"},
    },
}


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    """A resolved configuration: section -> key -> raw string value."""

    sections: dict

    def get(self, section: str, key: str, default=None) -> str | None:
        return self.sections.get(section, {}).get(key, default)

    def num(self, section: str, key: str, default=None, kind=float):
        raw = self.get(section, key)
        if raw is None:
            if default is None:
                raise UsageError(f"missing required key {section}.{key}")
            return default
        try:
            value = kind(raw)
        except ValueError:
            raise UsageError(f"{section}.{key}={raw!r} is not a valid {kind.__name__}") from None
        if isinstance(value, float) and not math.isfinite(value):
            raise UsageError(f"{section}.{key} must be finite")
        return value

    def floats(self, section: str, key: str) -> list[float]:
        raw = self.get(section, key)
        if raw is None:
            raise UsageError(f"missing required key {section}.{key}")
        try:
            return [float(v) for v in raw.replace(";", ",").split(",") if v.strip()]
        except ValueError:
            raise UsageError(f"{section}.{key}={raw!r} is not a list of numbers") from None

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        for sec in sorted(self.sections):
            parser[sec] = {k: self.sections[sec][k] for k in sorted(self.sections[sec])}
        from io import StringIO

        buf = StringIO()
        parser.write(buf)
        return buf.getvalue()


def load_config(path: str | None, overrides: list[str], base: dict | None = None) -> RunConfig:
    sections: dict = {s: dict(v) for s, v in (base or DEFAULTS).items()}
    if path:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        for sec in parser.sections():
            if sec == "meta":
                continue
            sections.setdefault(sec, {}).update(parser[sec])
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise UsageError(f"override {item!r} must look like section.key=value")
        key, value = item.split("=", 1)
        sec, name = key.split(".", 1)
        sections.setdefault(sec.strip(), {})[name.strip()] = value.strip()
    return RunConfig(sections)


# --- building domain objects from a config ------------------------------------------

def build_model(cfg: RunConfig) -> ModelSpec:
    force_name = cfg.get("model", "force", "pendulum")
    gamma = cfg.num("model", "gamma", 0.0)
    if force_name == "pendulum":
        k = cfg.get("model", "k")
        force = pendulum(None if k is None else cfg.num("model", "k"), gamma)
    elif force_name in ("duffing", "polynomial"):
        coefs = cfg.floats("model", "coefficients") if cfg.get("model", "coefficients") else None
        pot = Potential.from_coefficients(coefs) if coefs else double_well()
        force = potential_force(pot, gamma, force_name)
    elif force_name == "forced_duffing":
        force = forced_duffing(cfg.num("model", "delta", 0.0), cfg.num("model", "alpha", 1.0),
                               cfg.num("model", "cubic", 1.0), cfg.num("model", "forcing", 0.0),
                               cfg.num("model", "omega", 1.0))
    elif force_name == "linear":
        force = linear_force(cfg.num("model", "a", -math.pi**2), cfg.num("model", "b", 0.0))
    elif force_name == "zero":
        force = zero_force()
    else:
        raise UsageError(f"unknown force preset {force_name!r}")
    kind = cfg.get("noise", "kind", "constant")
    if kind == "constant":
        noise = constant_noise(cfg.num("noise", "c", 1.0))
    elif kind in ("cos", "sin"):
        noise = modulated_noise(cfg.num("noise", "sigma0", 2.0), cfg.num("noise", "A", 0.0),
                                cfg.num("noise", "omega", 0.0), kind)
    else:
        raise UsageError(f"unknown noise preset {kind!r}")
    L = cfg.get("model", "lipschitz_L")
    return ModelSpec(force, noise, lipschitz_L=None if L is None else cfg.num("model", "lipschitz_L"))


def potential_of(cfg: RunConfig) -> Potential | None:
    if cfg.get("model", "force") not in ("duffing", "polynomial"):
        return None
    coefs = cfg.floats("model", "coefficients") if cfg.get("model", "coefficients") else None
    return Potential.from_coefficients(coefs) if coefs else double_well()


def hurst(cfg: RunConfig, key: str = "H") -> float:
    H = cfg.num("run", key)
    try:
        as_hurst(H)
    except InvalidArgument as exc:
        raise UsageError(str(exc)) from None
    return H


def boundary(cfg: RunConfig) -> BoundaryData:
    return BoundaryData(*(cfg.num("boundary", k) for k in ("x0", "y0", "x1", "y1")))


def ensemble_spec(cfg: RunConfig, model: ModelSpec, H: float) -> EnsembleSpec:
    n_paths = cfg.num("run", "n_paths", kind=int)
    if n_paths < 1:
        raise UsageError("run.n_paths must be positive")
    n_steps = cfg.num("run", "n_steps", kind=int)
    if n_steps < 64:
        raise UsageError("run.n_steps must be at least 64")
    x0 = cfg.num("boundary", "x0", 0.0)
    y0 = cfg.num("boundary", "y0", 0.0)
    return EnsembleSpec(model, H, x0, y0, n_steps, n_paths, cfg.num("run", "seed", 0, int),
                        threads=cfg.num("run", "threads", 1, int),
                        store_paths=cfg.num("run", "store_paths", 0, int))


# --- output -----------------------------------------------------------------------

def _clean(value):
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else str(v)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value


def write_summary(out: Path, record: dict, name: str = "summary.json"):
    (out / name).write_text(json.dumps(_clean(record), indent=2, sort_keys=True) + "\n")


def write_manifest(out: Path, cfg: RunConfig, command: str):
    text = cfg.to_ini()
    meta = (f"[meta]\ncommand = {command}\nversion = {__version__}\n"
            f"seed = {cfg.get('run', 'seed', '0')}\n\n")
    (out / "manifest.ini").write_text(meta + text)


# --- commands -----------------------------------------------------------------------

def cmd_check(cfg: RunConfig, out: Path) -> int:
    model = build_model(cfg)
    H = hurst(cfg)
    beta = cfg.num("run", "beta", default_beta(H))
    report = check_assumption_A(model, H, beta)
    rec = report.to_record()
    ratio = rec.get("lipschitz_ratio")
    line = "PASS" if report.passed else "FAIL"
    if ratio is not None:
        line += f" (Lipschitz ratio {ratio:.6g})"
    print(line)
    for r in report.reasons:
        print(f"  reason: {r}")
    for w in report.warnings:
        print(f"  warning: {w}")
    write_summary(out, rec)
    return EXIT_OK if report.passed else EXIT_NUMERIC


def _mpp_options(cfg: RunConfig) -> MppOptions:
    return MppOptions(starts=cfg.num("run", "starts", 5, int), seed=cfg.num("run", "seed", 0, int),
                      threads=cfg.num("run", "threads", 1, int),
                      constraint=cfg.get("run", "constraint", "nullspace"))


def cmd_mpp(cfg: RunConfig, out: Path) -> int:
    model = build_model(cfg)
    H = hurst(cfg)
    b = boundary(cfg)
    n = cfg.num("run", "n", kind=int)
    if n < 33:
        raise UsageError("run.n must be at least 33")
    grid = TimeGrid(n)
    sol = minimize_om(MppProblem(model, H, b, grid, "multistart", _mpp_options(cfg)))
    summary = write_solution(sol, out, "path")
    ref = noiseless_shoot(model, b.x0, b.y0, grid)
    summary["noiseless_linf"] = float(np.max(np.abs(sol.path.psi.values - ref.psi.values)))
    write_path_csv(ref, out / "noiseless.csv")
    ok = sol.converged
    pot = potential_of(cfg)
    if H == 0.5 and pot is not None and model.noise.name == "constant":
        bvp = solve_el_bvp(pot, cfg.num("model", "gamma", 0.0), b, grid, sigma=model.noise.M)
        write_path_csv(bvp.path, out / "path_bvp.csv")
        summary.update({"bvp_J": bvp.J.J, "bvp_converged": bvp.converged,
                        "bvp_J_collocation": bvp.extras["J_collocation"],
                        "J_gap_relative": abs(sol.J.J - bvp.J.J) / max(abs(bvp.J.J), 1e-300),
                        "path_gap_linf": float(np.max(np.abs(sol.path.psi.values - bvp.path.psi.values)))})
        ok = ok and bvp.converged
    write_summary(out, summary)
    print(f"J = {sol.J.J:.10g}  converged = {sol.converged}  iterations = {sol.iterations}")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    model = build_model(cfg)
    spec = ensemble_spec(cfg, model, hurst(cfg))
    res = simulate_ensemble(spec)
    rec = write_ensemble(res, out)
    ref = noiseless_shoot(model, spec.x0, spec.y0, spec.grid)
    rec["mean_noiseless_linf"] = float(np.max(np.abs(res.mean_x.values - ref.psi.values)))
    write_summary(out, rec)
    if spec.store_paths:
        res.write_paths_csv(out / "paths")
    print(f"{spec.n_paths} paths, {res.n_diverged} diverged")
    return EXIT_OK


def _noiseless_center(cfg: RunConfig, spec: EnsembleSpec) -> PathPair:
    return noiseless_shoot(spec.model, spec.x0, spec.y0, spec.grid)


def cmd_tube(cfg: RunConfig, out: Path) -> int:
    model = build_model(cfg)
    H = hurst(cfg)
    spec = ensemble_spec(cfg, model, H)
    mode = cfg.get("run", "mode", POSITION)
    if mode not in (POSITION, NOISE):
        raise UsageError(f"run.mode must be {POSITION} or {NOISE}")
    eps = cfg.num("run", "epsilon")
    if eps < 0:
        raise UsageError("run.epsilon must be non-negative")
    est = tube_probability(spec, _noiseless_center(cfg, spec), eps, cfg.num("run", "beta", default_beta(H)), mode)
    write_summary(out, {**spec.provenance(), **est.to_record()})
    print(f"p_hat = {est.p_hat:.6g}  ({est.hits}/{est.trials}), 95% CI {est.wilson_ci}")
    return EXIT_OK


def cmd_ratio(cfg: RunConfig, out: Path) -> int:
    model = build_model(cfg)
    H = hurst(cfg)
    spec = ensemble_spec(cfg, model, H)
    psi1 = _noiseless_center(cfg, spec)
    c = cfg.num("run", "ratio_c", 1.0)
    psi2 = PathPair.from_velocity(GridFn(spec.grid, psi1.phi.values + c * spec.grid.t), spec.x0)
    psi1 = PathPair.from_velocity(psi1.phi, spec.x0)
    eps = cfg.num("run", "epsilon")
    res = om_ratio_experiment(spec, psi1, psi2, eps, cfg.num("run", "beta", default_beta(H)))
    write_summary(out, {**spec.provenance(), **res.to_record()})
    print(f"log ratio (MC) = {res.log_ratio_mc:.6g} +- {res.log_ratio_se:.2g}, "
          f"J1 - J2 = {res.delta_J:.6g}, inconclusive = {res.inconclusive}")
    return EXIT_OK


def cmd_smallball(cfg: RunConfig, out: Path) -> int:
    model = build_model(cfg)
    H = hurst(cfg)
    spec = ensemble_spec(cfg, model, H)
    res = small_ball_diagnostic(spec, cfg.num("run", "beta", default_beta(H)), cfg.floats("run", "eps_list"))
    write_summary(out, {**spec.provenance(), **res.to_record()})
    print(f"slope = {res.slope_fit:.6g} over {len(res.points)} points")
    return EXIT_OK


def cmd_example(name: str, cfg: RunConfig, out: Path) -> int:
    codes = []
    if name == "pendulum":
        chk = RunConfig({**cfg.sections, "noise": {"kind": "cos", "sigma0": cfg.get("run", "check_sigma0"),
                                                   "A": cfg.get("run", "check_A"), "omega": "10.0"},
                         "run": {**cfg.sections["run"], "H": cfg.get("run", "check_H"),
                                 "beta": cfg.get("run", "check_beta")}})
        (out / "check").mkdir(parents=True, exist_ok=True)
        codes.append(cmd_check(chk, out / "check"))
    for sub, fn in (("mpp", cmd_mpp), ("simulate", cmd_simulate)):
        (out / sub).mkdir(parents=True, exist_ok=True)
        codes.append(fn(cfg, out / sub))
    return max(codes)


COMMANDS = {"check": cmd_check, "mpp": cmd_mpp, "simulate": cmd_simulate, "tube": cmd_tube,
            "ratio": cmd_ratio, "smallball": cmd_smallball}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracom", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(COMMANDS) + ["example"]:
        p = sub.add_parser(name)
        if name == "example":
            p.add_argument("preset", choices=sorted(EXAMPLES))
        p.add_argument("--config", help="INI file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("--out", default="fracom-run", help="output directory")
        p.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
        p.add_argument("--seed", type=int)
        p.add_argument("--H", type=float)
        p.add_argument("--beta", type=float)
        p.add_argument("--n-paths", type=int)
        p.add_argument("--epsilon", type=float)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    overrides = list(args.set)
    for flag, key in (("threads", "threads"), ("seed", "seed"), ("H", "H"), ("beta", "beta"),
                      ("n_paths", "n_paths"), ("epsilon", "epsilon")):
        value = getattr(args, flag)
        if value is not None:
            overrides.append(f"run.{key}={value!r}" if isinstance(value, float) else f"run.{key}={value}")
    try:
        base = EXAMPLES[args.preset] if args.command == "example" else DEFAULTS
        cfg = load_config(args.config, overrides, base)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        command = f"example {args.preset}" if args.command == "example" else args.command
        write_manifest(out, cfg, command)
        if args.command == "example":
            return cmd_example(args.preset, cfg, out)
        return COMMANDS[args.command](cfg, out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidArgument as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
