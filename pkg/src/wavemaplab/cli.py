"""Command line front end: config files in, report artifacts out.

Configs are INI files with three sections (full key table in the README):

    [experiment]  kind, epsilon_list, H, gamma, n_paths, base_seed, and the
                  optional mollifier/family/amplitude/width/noise/eta/beta/
                  coupling knobs
    [grid]        half_length, n_points, dt, n_steps
    [output]      directory, verbosity (both optional)

`wavemaplab run cfg.ini` executes the plan and drops report.json, paths.csv,
and provenance.json into the output directory; the WAVEMAPLAB_OUTPUT_DIR
environment variable overrides the configured directory.  `validate` checks a
config (including the grid sizing rules) without running anything, `moments`
prints the derived noise constants for a given H, and `oracle` runs one of
the named analytic cross-checks.

Exit codes: 0 = ran and every pass flag is true; 2 = configuration problem;
3 = numeric failure inside a solver or a failed oracle; 4 = the run completed
but a statistical pass flag is false.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from ._kernels import backend_name
from .experiments import (
    EXPERIMENT_KINDS,
    ExperimentPlan,
    dispatch_experiment,
    enforce_grid_policy,
    overall_pass,
    write_per_path_csv,
)
from .families import geodesic_bump, tangent_bump
from .fluctuations import heat_kernel
from .grid import GridSpec, derivative, norm
from .heatflow import HeatRunConfig, step_heatflow
from .noise import gaussian_mollifier, make_fractional_density, moments, mollify
from .wavemap import WaveRunConfig, make_state, run_wavemap

__all__ = [
    "ConfigError",
    "RunConfig",
    "parse_config",
    "serialize_config",
    "dispatch",
    "ORACLES",
    "main",
]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_STATISTICAL = 4

_TRUE = {"on", "true", "yes", "1"}
_FALSE = {"off", "false", "no", "0"}

# key: (required, parser); section order fixes the serialized layout
_EXPERIMENT_KEYS = {
    "kind": (True, str),
    "epsilon_list": (True, None),  # handled separately
    "H": (True, float),
    "gamma": (True, float),
    "n_paths": (True, int),
    "base_seed": (True, int),
    "mollifier": (False, str),
    "family": (False, str),
    "amplitude": (False, float),
    "width": (False, float),
    "noise": (False, None),  # on/off
    "eta": (False, float),
    "beta": (False, float),
    "coupling": (False, str),
}
_GRID_KEYS = {
    "half_length": (True, float),
    "n_points": (True, int),
    "dt": (True, float),
    "n_steps": (True, int),
}
_OUTPUT_KEYS = {
    "directory": (False, str),
    "verbosity": (False, int),
}
_SECTIONS = {"experiment": _EXPERIMENT_KEYS, "grid": _GRID_KEYS, "output": _OUTPUT_KEYS}


class ConfigError(Exception):
    """Carries every violation found, not just the first."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("\n".join(self.problems))


@dataclass(frozen=True)
class RunConfig:
    plan: ExperimentPlan
    output_dir: str = "wavemaplab_out"
    verbosity: int = 1


def _parse_bool(text: str, where: str, problems: list) -> bool:
    low = text.strip().lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    problems.append(f"{where}: expected on/off, got {text!r}")
    return True


def _read_ini(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive, H is literally H
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError([f"cannot read config: {exc}"]) from exc
    except configparser.Error as exc:
        raise ConfigError([f"config syntax: {exc}"]) from exc
    return cp


def parse_config(path) -> RunConfig:
    """Parse and fully validate a config file.

    Key presence, types, plan invariants, and the per-epsilon grid sizing
    rules are all checked here; the error lists every problem found at the
    raw-key stage before any value-level constraint is evaluated.
    """
    cp = _read_ini(path)
    problems = []
    for section in cp.sections():
        if section not in _SECTIONS:
            problems.append(f"unknown section [{section}]")
    for section, keys in _SECTIONS.items():
        present = cp.options(section) if cp.has_section(section) else []
        for key in present:
            if key not in keys:
                problems.append(f"unknown key {section}.{key}")
        for key, (required, _) in keys.items():
            if required and key not in present:
                problems.append(f"missing required key {section}.{key}")
    if problems:
        raise ConfigError(problems)

    values = {}
    for section, keys in _SECTIONS.items():
        for key, (_, conv) in keys.items():
            if not cp.has_section(section) or key not in cp.options(section):
                continue
            raw = cp.get(section, key)
            where = f"{section}.{key}"
            if key == "epsilon_list":
                try:
                    values[key] = tuple(float(tok) for tok in raw.split(",") if tok.strip())
                except ValueError:
                    problems.append(f"{where}: expected comma-separated floats, got {raw!r}")
            elif key == "noise":
                values[key] = _parse_bool(raw, where, problems)
            else:
                try:
                    values[key] = conv(raw)
                except ValueError:
                    problems.append(f"{where}: expected {conv.__name__}, got {raw!r}")
    if problems:
        raise ConfigError(problems)

    try:
        grid = GridSpec(values["half_length"], values["n_points"],
                        values["dt"], values["n_steps"])
        plan = ExperimentPlan(
            kind=values["kind"],
            eps_list=values["epsilon_list"],
            H=values["H"],
            gamma=values["gamma"],
            grid=grid,
            n_paths=values["n_paths"],
            base_seed=values["base_seed"],
            mollifier_tag=values.get("mollifier", "gaussian"),
            family=values.get("family", "geodesic_bump"),
            amplitude=values.get("amplitude", 1.5),
            width=values.get("width", 1.0),
            noise_on=values.get("noise", True),
            eta=values.get("eta", 0.1),
            beta=values.get("beta", 0.5),
            coupling=values.get("coupling", "common"),
        )
        enforce_grid_policy(plan)
    except ValueError as exc:
        raise ConfigError([str(exc)]) from exc
    return RunConfig(plan=plan,
                     output_dir=values.get("directory", "wavemaplab_out"),
                     verbosity=values.get("verbosity", 1))


def serialize_config(cfg: RunConfig) -> str:
    """Inverse of parse_config: parse(serialize(cfg)) == cfg."""
    p = cfg.plan
    lines = [
        "[experiment]",
        f"kind = {p.kind}",
        "epsilon_list = " + ", ".join(repr(e) for e in p.eps_list),
        f"H = {p.H!r}",
        f"gamma = {p.gamma!r}",
        f"n_paths = {p.n_paths}",
        f"base_seed = {p.base_seed}",
        f"mollifier = {p.mollifier_tag}",
        f"family = {p.family}",
        f"amplitude = {p.amplitude!r}",
        f"width = {p.width!r}",
        f"noise = {'on' if p.noise_on else 'off'}",
        f"eta = {p.eta!r}",
        f"beta = {p.beta!r}",
        f"coupling = {p.coupling}",
        "",
        "[grid]",
        f"half_length = {p.grid.half_length!r}",
        f"n_points = {p.grid.n_points}",
        f"dt = {p.grid.dt!r}",
        f"n_steps = {p.grid.n_steps}",
        "",
        "[output]",
        f"directory = {cfg.output_dir}",
        f"verbosity = {cfg.verbosity}",
    ]
    return "\n".join(lines) + "\n"


def _derived_gamma0(plan: ExperimentPlan) -> float:
    if not plan.noise_on:
        return plan.gamma
    return plan.gamma + 0.5 * moments(plan.base_density()).c0


def _build_stamp() -> dict:
    try:
        from importlib.metadata import version

        pkg_version = version("artifact")
    except Exception:
        pkg_version = "unknown"
    return {
        "package_version": pkg_version,
        "kernel_backend": backend_name,
        "numpy_version": np.__version__,
        "python_version": ".".join(str(v) for v in sys.version_info[:3]),
    }


def _provenance(cfg: RunConfig) -> dict:
    plan = cfg.plan
    return {
        "config_sha256": hashlib.sha256(serialize_config(cfg).encode()).hexdigest(),
        "seeds": {
            "base_seed": plan.base_seed,
            "coupling": plan.coupling,
            "per_epsilon": {
                repr(eps): [plan.seed_for(i, p) for p in range(plan.n_paths)]
                for i, eps in enumerate(plan.eps_list)
            },
        },
        "build": _build_stamp(),
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }


def _output_dir(cfg: RunConfig) -> Path:
    return Path(os.environ.get("WAVEMAPLAB_OUTPUT_DIR") or cfg.output_dir)


def dispatch(cfg: RunConfig) -> int:
    """Run the configured experiment and write the three artifacts.

    The exit status is a pure function of what happened: solver errors map
    to the numeric code, anything the runners reject maps to the config
    code, and a clean run exits zero iff every pass flag is true.
    """
    try:
        report = dispatch_experiment(cfg.plan)
    except (ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"plan rejected: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    outdir = _output_dir(cfg)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    write_per_path_csv(report, outdir / "paths.csv")
    (outdir / "provenance.json").write_text(json.dumps(_provenance(cfg), indent=2))
    for name, ok in sorted(report["pass_flags"].items()):
        print(f"{name}: {'PASS' if ok else 'FAIL'}")
    if cfg.verbosity >= 1:
        print(f"artifacts: {outdir}/report.json, paths.csv, provenance.json")
        print(f"runtime: {report['runtime_seconds']:.1f}s")
    return EXIT_OK if overall_pass(report) else EXIT_STATISTICAL


def _cmd_run(args) -> int:
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(f"invalid config:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    return dispatch(cfg)


def _cmd_validate(args) -> int:
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(f"invalid config:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    plan = cfg.plan
    print(f"kind = {plan.kind}")
    print(f"epsilon_list = {list(plan.eps_list)}")
    print(f"H = {plan.H}, gamma = {plan.gamma}, gamma0 = {_derived_gamma0(plan):.6f}")
    print(f"grid: L = {plan.grid.half_length}, N = {plan.grid.n_points}, "
          f"dt = {plan.grid.dt}, T = {plan.grid.horizon}")
    print(f"n_paths = {plan.n_paths}, base_seed = {plan.base_seed}, "
          f"coupling = {plan.coupling}, noise = {'on' if plan.noise_on else 'off'}")
    print(f"output directory = {_output_dir(cfg)}")
    print("config OK")
    return EXIT_OK


def _cmd_moments(args) -> int:
    if args.mollifier != "gaussian":
        print(f"unknown mollifier {args.mollifier!r} (available: gaussian)", file=sys.stderr)
        return EXIT_CONFIG
    try:
        density = mollify(make_fractional_density(args.H), gaussian_mollifier())
    except ValueError as exc:
        print(f"invalid arguments: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    mom = moments(density)
    print(f"c0 = {mom.c0:.10f}")
    print(f"c1 = {mom.c1:.10f}")
    print(f"gamma0 = gamma + c0/2 = {args.gamma + 0.5 * mom.c0:.10f} (gamma = {args.gamma})")
    return EXIT_OK


# Named analytic cross-checks, each returning (passed, detail).  They pin the
# solvers against closed forms that are independent of the implementation.

def _oracle_moments():
    mom = moments(mollify(make_fractional_density(0.75), gaussian_mollifier()))
    c0_exact, c1_exact = math.gamma(0.25), math.gamma(1.25)
    err = max(abs(mom.c0 - c0_exact), abs(mom.c1 - c1_exact))
    return err < 1e-4, (f"c0 = {mom.c0:.8f} vs Gamma(1/4) = {c0_exact:.8f}, "
                        f"c1 = {mom.c1:.8f} vs Gamma(5/4) = {c1_exact:.8f}")


def _oracle_heat_kernel():
    grid = GridSpec(12.0, 512, 1.0, 1)
    t = 0.5
    val = norm(heat_kernel(grid, t), grid, "L2")
    exact = (8.0 * math.pi * t) ** -0.25
    rel = abs(val - exact) / exact
    return rel < 1e-6, f"|G_t|_L2 = {val:.8f} vs (8 pi t)^(-1/4) = {exact:.8f}"


def _oracle_heat_equivariant():
    # u = (sin th, 0, cos th) reduces the flow to gamma0 th_t = th_xx
    L, n = 10.0, 256
    dx = 2 * L / n
    dt = 0.15 * dx * dx
    n_steps = int(round(1.0 / dt))
    grid = GridSpec(L, n, dt, n_steps)
    cfg = HeatRunConfig(gamma0=1.0, grid=grid, scheme="explicit")
    theta = 1.5 * np.exp(-(grid.x**2))
    u = np.column_stack([np.sin(theta), np.zeros(n), np.cos(theta)])
    th = theta.copy()
    for _ in range(n_steps):
        u = step_heatflow(u, cfg)
        th = th + dt * derivative(th, grid, 2)
    rel = norm(np.arctan2(u[:, 0], u[:, 2]) - th, grid, "L2") / norm(th, grid, "L2")
    return rel < 1e-5, f"theta vs scalar heat: rel L2 = {rel:.2e}"


def _oracle_wave_equivariant():
    # same reduction for the damped wave with eps = 0.25; the scalar
    # reference applies the identical rotate-project update to (theta, s)
    eps, gamma = 0.25, 1.0
    grid = GridSpec(10.0, 128, 0.004, 200)
    theta = 1.2 * np.exp(-(grid.x**2))
    s = np.zeros_like(theta)
    u0 = np.column_stack([np.sin(theta), np.zeros(grid.n_points), np.cos(theta)])
    cfg = WaveRunConfig(eps=eps, gamma=gamma, grid=grid)
    traj, _ = run_wavemap(make_state(u0, np.zeros_like(u0)), cfg,
                          snapshot_stride=grid.n_steps)
    dt = grid.dt
    for _ in range(grid.n_steps):
        s_star = s + dt * (derivative(theta, grid, 2) - gamma * s) / eps
        q = -dt * s * s
        phi = np.arctan2(dt * s_star, 1.0 + dt * q)
        theta = theta + phi
        s = s_star * np.cos(phi) - q * np.sin(phi)
    full = np.arctan2(traj.u[-1][:, 0], traj.u[-1][:, 2])
    rel = norm(full - theta, grid, "L2") / norm(theta, grid, "L2")
    return rel < 1e-4, f"theta vs scalar damped wave: rel L2 = {rel:.2e}"


def _oracle_energy_identity():
    def drift(dt, n_steps):
        grid = GridSpec(10.0, 256, dt, n_steps)
        cfg = WaveRunConfig(eps=0.25, gamma=1.0, grid=grid)
        u0 = geodesic_bump(grid, 1.2)
        v0 = tangent_bump(grid, u0)
        _, ledger = run_wavemap(make_state(u0, v0), cfg, snapshot_stride=None)
        return ledger.max_relative_drift()

    d1 = drift(0.008, 125)
    d2 = drift(0.004, 250)
    ok = d1 < 0.05 and d2 < 0.7 * d1
    return ok, f"relative drift {d1:.2e} at dt, {d2:.2e} at dt/2"


ORACLES = {
    "moments": _oracle_moments,
    "heat-kernel": _oracle_heat_kernel,
    "heat-equivariant": _oracle_heat_equivariant,
    "wave-equivariant": _oracle_wave_equivariant,
    "energy-identity": _oracle_energy_identity,
}


def _cmd_oracle(args) -> int:
    if args.name == "all":
        names = list(ORACLES)
    elif args.name in ORACLES:
        names = [args.name]
    else:
        print(f"unknown oracle {args.name!r} (available: "
              f"{', '.join(list(ORACLES) + ['all'])})", file=sys.stderr)
        return EXIT_CONFIG
    failed = False
    for name in names:
        ok, detail = ORACLES[name]()
        print(f"{name}: {'PASS' if ok else 'FAIL'} ({detail})")
        failed = failed or not ok
    return EXIT_NUMERIC if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wavemaplab",
        description="Monte Carlo laboratory for the damped stochastic wave map "
                    "and its heat-flow and fluctuation limits.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the experiment described by an INI config")
    p_run.add_argument("config", help="path to the INI config file")
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="check a config (plan and grid sizing) without running")
    p_val.add_argument("config", help="path to the INI config file")
    p_val.set_defaults(func=_cmd_validate)

    p_mom = sub.add_parser("moments", help="print the noise constants c0, c1 and gamma0 for a given H")
    p_mom.add_argument("--H", type=float, required=True, help="Hurst parameter in [1/2, 1)")
    p_mom.add_argument("--mollifier", default="gaussian", help="mollifier name (gaussian)")
    p_mom.add_argument("--gamma", type=float, default=1.0, help="bare friction (default 1.0)")
    p_mom.set_defaults(func=_cmd_moments)

    p_orc = sub.add_parser("oracle", help="run a named analytic cross-check")
    p_orc.add_argument("name", help=f"one of {', '.join(list(ORACLES) + ['all'])}")
    p_orc.set_defaults(func=_cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
