"""Command-line front end.

Subcommands: ``simulate`` (trajectory ensemble -> estimator CSV),
``analytic`` (closed-form/perturbative curves -> CSV), ``oracle``
(density-matrix populations -> CSV) and ``compare`` (z-scores between a
simulated and an analytic CSV).

Configuration comes from a key=value file plus overriding flags; presets pin
parameters to the standard experiments (see PRESETS). Every CSV starts with
a provenance header ('# key=value' comment lines) and output is
byte-identical for identical configuration and seed.

Exit codes: 0 success, 2 configuration error, 3 numerical error,
4 comparison failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .analytics import TruncationPolicy, write_analytic_csv
from .errors import ConfigError, GridMismatchError, QhoCalError, SimulationError
from .lindblad import integrate, thermal_state, write_populations_csv
from .model import PhysicalParams, make_rates
from .trajectories import EnsembleConfig, iter_ensemble
from .work import measure_ensemble, write_moments_csv

__all__ = [
    "PRESETS",
    "ExperimentConfig",
    "parse_config",
    "run_simulate",
    "run_analytic",
    "run_oracle",
    "run_compare",
    "main",
]

# Preset parameter sets. All share lambda0 = 0.01, T = pi/lambda0, dim = 10.
# fig3 needs an explicit beta from {1, 2, 5}; the others pin beta = 2.
PRESETS: dict[str, dict] = {
    "fig3": {"lambda0": 0.01, "gamma": 0.01 * 0.01, "beta_choices": (1.0, 2.0, 5.0)},
    "fig4": {"lambda0": 0.01, "gamma": 0.1 * 0.01, "beta": 2.0},
    "fig5a": {"lambda0": 0.01, "gamma": 0.01, "beta": 2.0},
    "fig5b": {"lambda0": 0.01, "gamma": 0.05, "beta": 2.0},
    "fig5c": {"lambda0": 0.01, "gamma": 0.1, "beta": 2.0},
}

_DEFAULT_GRID_POINTS = 101

_FILE_KEYS = {
    "preset": str,
    "lambda0": float,
    "gamma": float,
    "beta": float,
    "omega0": float,
    "drive_time": float,
    "dim": int,
    "ntraj": int,
    "seed": int,
    "grid": int,
    "dt": float,
    "n_max": int,
    "m_max": int,
    "jumps_max": int,
    "out": str,
}


@dataclass(frozen=True)
class ExperimentConfig:
    params: PhysicalParams
    ensemble: EnsembleConfig
    policy: TruncationPolicy
    out: str | None = None
    preset: str | None = None

    def provenance(self) -> list[str]:
        p, e = self.params, self.ensemble
        lines = [
            f"qho-cal {__version__}",
            f"preset={self.preset or ''}",
            f"lambda0={p.lambda0!r} gamma={p.gamma!r} beta={p.beta!r} "
            f"omega0={p.omega0!r} drive_time={p.drive_time!r} dim={p.dim}",
            f"ntraj={e.n_traj} seed={e.master_seed} grid_points={len(e.checkpoint_grid)} "
            f"dt={e.dt!r}",
            f"policy n_max={self.policy.n_max} m_max={self.policy.m_max} "
            f"jumps_max={self.policy.jumps_max}",
        ]
        return lines


def _parse_file(text: str) -> dict:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _FILE_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _FILE_KEYS[key](val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from exc
    return values


def parse_config(text: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Build a validated ExperimentConfig from key=value text plus overrides
    (flag values win over file values)."""
    values = _parse_file(text) if text else {}
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _FILE_KEYS:
            raise ConfigError(f"unknown configuration key {key!r}")
        values[key] = val

    preset = values.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {preset!r}; choose from {sorted(PRESETS)}"
            )
        preset_values = dict(PRESETS[preset])
        choices = preset_values.pop("beta_choices", None)
        for key, val in preset_values.items():
            values.setdefault(key, val)
        if choices is not None:
            if "beta" not in values:
                raise ConfigError(
                    f"preset {preset!r} needs beta set to one of {choices}"
                )
            if values["beta"] not in choices:
                raise ConfigError(
                    f"preset {preset!r} uses beta in {choices}, got {values['beta']}"
                )
    if "gamma" not in values:
        raise ConfigError("gamma is required (set it or pick a preset)")
    if "beta" not in values:
        raise ConfigError("beta is required (set it or pick a preset)")

    try:
        params = PhysicalParams(
            gamma=values["gamma"],
            beta=values["beta"],
            lambda0=values.get("lambda0", 0.01),
            omega0=values.get("omega0", 1.0),
            drive_time=values.get("drive_time"),
            dim=values.get("dim", 10),
        )
        n_points = values.get("grid", _DEFAULT_GRID_POINTS)
        if n_points < 1:
            raise ConfigError(f"grid must have at least 1 point, got {n_points}")
        if n_points == 1:
            grid = (0.0,)
        else:
            grid = tuple(np.linspace(0.0, params.drive_time, n_points))
        ensemble = EnsembleConfig(
            checkpoint_grid=grid,
            n_traj=values.get("ntraj", 100_000),
            master_seed=values.get("seed", 0),
            dt=values.get("dt"),
        )
        policy = TruncationPolicy(
            n_max=values.get("n_max", 1),
            m_max=values.get("m_max", 10),
            jumps_max=values.get("jumps_max", 2),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(
        params=params,
        ensemble=ensemble,
        policy=policy,
        out=values.get("out"),
        preset=preset,
    )


def _require_out(cfg: ExperimentConfig) -> str:
    if not cfg.out:
        raise ConfigError("an output path is required (--out or out=...)")
    return cfg.out


def run_simulate(cfg: ExperimentConfig, n_workers: int | None = None) -> str:
    """Run the trajectory ensemble, measure both work estimators, write the
    estimator CSV; prints a one-line summary."""
    out = _require_out(cfg)
    rates = make_rates(cfg.params)
    started = time.monotonic()
    records = iter_ensemble(cfg.params, rates, cfg.ensemble, n_workers=n_workers)
    result = measure_ensemble(records, rates)
    elapsed = time.monotonic() - started
    write_moments_csv(out, result, header_lines=cfg.provenance())
    print(
        f"simulate: {cfg.ensemble.n_traj} trajectories, "
        f"{len(cfg.ensemble.checkpoint_grid)} checkpoints, {elapsed:.1f} s -> {out}"
    )
    return out


def run_analytic(cfg: ExperimentConfig) -> str:
    out = _require_out(cfg)
    rates = make_rates(cfg.params)
    write_analytic_csv(
        out,
        cfg.ensemble.checkpoint_grid,
        cfg.params,
        rates,
        policy=cfg.policy,
        header_lines=cfg.provenance(),
    )
    print(f"analytic: {len(cfg.ensemble.checkpoint_grid)} grid points -> {out}")
    return out


def run_oracle(cfg: ExperimentConfig) -> str:
    out = _require_out(cfg)
    rates = make_rates(cfg.params)
    grid = cfg.ensemble.checkpoint_grid
    rho0 = thermal_state(cfg.params.beta, cfg.params.dim)
    rhos = integrate(rho0, cfg.params, rates, grid)
    write_populations_csv(out, grid, rhos, header_lines=cfg.provenance())
    print(f"oracle: {len(grid)} grid points -> {out}")
    return out


def _read_csv(path: str) -> tuple[list[str], np.ndarray, list[str]]:
    """Returns (column names, float matrix, trailing string column or [])."""
    rows = []
    methods = []
    header: list[str] | None = None
    try:
        fh = open(path)
    except OSError as exc:
        raise ConfigError(f"cannot read CSV {path}: {exc}") from exc
    with fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                continue
            parts = line.split(",")
            if header[-1] == "method":
                methods.append(parts[-1])
                parts = parts[:-1]
            rows.append([float(x) for x in parts])
    if header is None:
        raise ConfigError(f"{path}: no header row found")
    return header, np.array(rows), methods


_COMPARED = (("mean_Wp", "se_mean_Wp"), ("var_Wp", "se_var_Wp"),
             ("mean_Wc", "se_mean_Wc"), ("var_Wc", "se_var_Wc"))


def run_compare(sim_path: str, analytic_path: str, z_max: float = 3.0) -> int:
    """Per-time z = |MC - analytic| / SE for each moment column and method.

    Pass/fail at z <= z_max over each method's validity window: the whole
    grid for the unitary curves, t <= half the final grid time for the
    perturbative ones (beyond that, discarded higher jump numbers bite).
    Returns 0 on pass, 4 on failure.
    """
    sim_header, sim, _ = _read_csv(sim_path)
    ana_header, ana, methods = _read_csv(analytic_path)
    if "method" not in ana_header:
        raise ConfigError(f"{analytic_path}: not an analytic CSV (no method column)")
    sim_cols = {name: i for i, name in enumerate(sim_header)}
    ana_cols = {name: i for i, name in enumerate(ana_header)}

    failures = 0
    report_rows = []
    for method in dict.fromkeys(methods):
        rows = [i for i, m in enumerate(methods) if m == method]
        ana_t = ana[rows, ana_cols["t"]]
        sim_t = sim[:, sim_cols["t"]]
        if ana_t.shape != sim_t.shape or not np.allclose(ana_t, sim_t, atol=1e-9):
            raise GridMismatchError(
                f"time grids differ between {sim_path} and {analytic_path}"
            )
        window = np.ones_like(sim_t, dtype=bool)
        if method == "perturbative":
            window = sim_t <= 0.5 * sim_t[-1] + 1e-9
        for value_col, se_col in _COMPARED:
            diff = np.abs(sim[:, sim_cols[value_col]] - ana[rows, ana_cols[value_col]])
            se = sim[:, sim_cols[se_col]]
            z = np.where(diff <= 1e-12, 0.0, diff / np.where(se > 0, se, np.inf))
            worst = float(z[window].max()) if window.any() else 0.0
            ok = worst <= z_max
            failures += 0 if ok else 1
            report_rows.append((method, value_col, worst, ok))
    for method, col, worst, ok in report_rows:
        status = "pass" if ok else "FAIL"
        print(f"compare [{method:12s}] {col:8s} max|z| = {worst:7.3f}  {status}")
    overall = "pass" if failures == 0 else "FAIL"
    print(f"compare: {overall} (z threshold {z_max})")
    return 0 if failures == 0 else 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qho-cal",
        description="Work statistics of a driven, damped quantum oscillator "
        "via quantum-jump trajectories.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p):
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--preset", help=f"one of {sorted(PRESETS)}")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--ntraj", type=int, help="number of trajectories")
        p.add_argument("--dim", type=int, help="Fock truncation dimension")
        p.add_argument("--out", help="output CSV path")
        p.add_argument("--grid", type=int, help="number of checkpoint times")

    for name, doc in (
        ("simulate", "run the trajectory ensemble and write the estimator CSV"),
        ("analytic", "write closed-form/perturbative moment curves"),
        ("oracle", "integrate the master equation and write populations"),
    ):
        p = sub.add_parser(name, help=doc)
        add_config_flags(p)

    p = sub.add_parser("compare", help="z-score a simulated CSV against an analytic one")
    p.add_argument("simulated", help="CSV from the simulate subcommand")
    p.add_argument("analytic", help="CSV from the analytic subcommand")
    p.add_argument("--zmax", type=float, default=3.0, help="pass threshold (default 3)")
    return parser


def _config_from_args(args) -> ExperimentConfig:
    text = None
    if args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
    overrides = {
        "preset": args.preset,
        "seed": args.seed,
        "ntraj": args.ntraj,
        "dim": args.dim,
        "out": args.out,
        "grid": args.grid,
    }
    return parse_config(text, overrides)


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            run_simulate(_config_from_args(args))
        elif args.command == "analytic":
            run_analytic(_config_from_args(args))
        elif args.command == "oracle":
            run_oracle(_config_from_args(args))
        elif args.command == "compare":
            return run_compare(args.simulated, args.analytic, z_max=args.zmax)
        return 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (SimulationError, GridMismatchError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except QhoCalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
