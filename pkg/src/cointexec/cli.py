"""Command-line interface: ``cointexec {estimate, solve, backtest}``.

Every run writes ``manifest.json`` next to its outputs. The manifest is itself
a valid ``--config`` file, so ``cointexec <cmd> --config out/manifest.json``
reproduces the outputs byte for byte.

Exit codes: 0 success, 2 validation failure, 3 I/O failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from typing import List, Optional

import numpy as np

from . import __version__
from .estimation import (EstimationError, cointegration_weights, fit_diffusion_covariance,
                         fit_var, read_series_csv, SECONDS_PER_DAY)
from .model import (DimensionError, MarketModel, ModelValidationError, OrderFlowModel,
                    PenaltySpec, load_model, model_to_dict, nasdaq_model, save_model,
                    validate_model)
from .riccati import RiccatiBlowUpError, build_problem, solve_riccati
from .simulator import SimConfig, compare_strategies

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 2, 3

DEFAULTS = {
    "estimate": {"data": None, "quotes": False, "seconds_per_unit": SECONDS_PER_DAY,
                 "traded": 2, "a_temp": None, "out": "out"},
    "solve": {"model": "nasdaq", "phi": 0.01, "alpha": 1e6, "horizon": 1.0 / 6.5,
              "steps": 21600, "dump_csv": False, "out": "out"},
    "backtest": {"model": "nasdaq", "phi": [1e-3, 1e-2], "paths": 10000, "steps": 3600,
                 "seed": 0, "scenario": "full", "strategies": ["UL", "RL"],
                 "series_tail": False, "tau_switch": 0.01, "q0": [4600.0, 900.0],
                 "alpha": 1e6, "horizon": 1.0 / 6.5, "grid_refine": 6, "phi_ac": 0.1,
                 "dump_paths": False, "out": "out"},
}


class CliValidationError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cointexec", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"cointexec {__version__}")
    sub = p.add_subparsers(dest="subcommand", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config (or a previous manifest); flags override it")
        sp.add_argument("--out", help="output directory")

    e = sub.add_parser("estimate", help="fit the price model to a midprice CSV")
    common(e)
    e.add_argument("--data", help="CSV with a timestamp column followed by prices")
    e.add_argument("--quotes", action="store_true", default=None,
                   help="columns are bid, ask, bid_size, ask_size per asset")
    e.add_argument("--seconds-per-unit", type=float, help="seconds in one model time unit")
    e.add_argument("--traded", type=int, help="number of traded assets (the first columns)")
    e.add_argument("--a-temp", type=float, nargs="+", help="diagonal temporary impact per traded asset")

    s = sub.add_parser("solve", help="solve the Riccati system for a model")
    common(s)
    s.add_argument("--model", help="model JSON path, or 'nasdaq' for the bundled model")
    s.add_argument("--phi", type=float)
    s.add_argument("--alpha", type=float)
    s.add_argument("--horizon", type=float)
    s.add_argument("--steps", type=int)
    s.add_argument("--dump-csv", action="store_true", default=None, help="write riccati.csv")

    b = sub.add_parser("backtest", help="Monte Carlo comparison against Almgren-Chriss")
    common(b)
    b.add_argument("--model", help="model JSON path, or 'nasdaq' for the bundled model")
    b.add_argument("--phi", type=float, nargs="+")
    b.add_argument("--paths", type=int)
    b.add_argument("--steps", type=int)
    b.add_argument("--seed", type=int)
    b.add_argument("--scenario", choices=["full", "partial"])
    b.add_argument("--strategies", nargs="+", choices=["UL", "RL", "ULT", "AC", "SeriesTail"])
    b.add_argument("--series-tail", action="store_true", default=None,
                   help="also run the SeriesTail strategy")
    b.add_argument("--tau-switch", type=float, help="SeriesTail switch as a fraction of the horizon")
    b.add_argument("--q0", type=float, nargs="+")
    b.add_argument("--alpha", type=float)
    b.add_argument("--horizon", type=float)
    b.add_argument("--grid-refine", type=int)
    b.add_argument("--phi-ac", type=float)
    b.add_argument("--dump-paths", action="store_true", default=None)
    return p


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, the optional config file and explicit flags."""
    cfg = dict(DEFAULTS[args.subcommand])
    if args.config:
        with open(args.config) as fh:
            loaded = json.load(fh)
        if "config" in loaded and "subcommand" in loaded:
            if loaded["subcommand"] != args.subcommand:
                raise CliValidationError(f"{args.config}: manifest is for '{loaded['subcommand']}'")
            loaded = loaded["config"]
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise CliValidationError(f"{args.config}: unknown keys {sorted(unknown)}")
        cfg.update(loaded)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _manifest(out, sub, cfg):
    _write_json(os.path.join(out, "manifest.json"),
                {"subcommand": sub, "config": cfg, "code_version": __version__,
                 "seed": cfg.get("seed")})


def _load(spec):
    if spec == "nasdaq":
        model, sigma_ac = nasdaq_model()
        return model, None, sigma_ac
    if not os.path.exists(spec):
        raise FileNotFoundError(f"model file not found: {spec}")
    return load_model(spec)


def cmd_estimate(cfg: dict) -> int:
    if not cfg["data"]:
        raise CliValidationError("estimate needs --data")
    if not os.path.exists(cfg["data"]):
        raise FileNotFoundError(f"data file not found: {cfg['data']}")
    series = read_series_csv(cfg["data"], quotes=bool(cfg["quotes"]),
                             seconds_per_unit=float(cfg["seconds_per_unit"]))
    fit = fit_var(series)
    m = int(cfg["traded"])
    if not 1 <= m <= series.n:
        raise CliValidationError(f"--traded must be between 1 and {series.n}")
    a = cfg["a_temp"] or [1e-6] * m
    if len(a) != m:
        raise CliValidationError(f"--a-temp needs {m} values")
    model = fit.to_model(np.diag(a))
    sigma_ac = fit_diffusion_covariance(series, m)
    report = fit.report()
    report["cointegration_weights"] = (cointegration_weights(fit).tolist() if fit.rank >= 1 else None)
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    save_model(os.path.join(out, "model.json"), model, sigma_ac=sigma_ac)
    _write_json(os.path.join(out, "fit_report.json"), report)
    _manifest(out, "estimate", cfg)
    print(f"fitted {series.n} assets from {series.prices.shape[0]} observations; "
          f"co-integration rank {fit.rank}")
    return EXIT_OK


def cmd_solve(cfg: dict) -> int:
    model, _, _ = _load(cfg["model"])
    pen = PenaltySpec.isotropic(float(cfg["phi"]), float(cfg["alpha"]), model.m)
    rep = validate_model(model, pen)
    if not rep.passed:
        raise ModelValidationError(rep)
    sol = solve_riccati(build_problem(model, pen, float(cfg["horizon"]), int(cfg["steps"])))
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    if cfg["dump_csv"]:
        sol.to_csv(os.path.join(out, "riccati.csv"))
    _write_json(os.path.join(out, "solve_summary.json"), {
        "A0": sol.A[0].tolist(), "C0": sol.C[0].tolist(), "E0": sol.E[0].tolist(),
        "max_abs_G": float(np.abs(sol.G).max()), "steps": int(cfg["steps"])})
    _manifest(out, "solve", cfg)
    print(f"solved on {cfg['steps']} steps; max |G| = {np.abs(sol.G).max():.6g}")
    return EXIT_OK


def cmd_backtest(cfg: dict) -> int:
    model, _, sigma_ac = _load(cfg["model"])
    q0 = [float(x) for x in cfg["q0"]]
    if len(q0) != model.m:
        raise CliValidationError(f"q0 needs {model.m} entries")
    phis = [float(x) for x in cfg["phi"]]
    if any(p < 0 for p in phis):
        raise CliValidationError("phi values must be nonnegative")
    for phi in phis:
        rep = validate_model(model, PenaltySpec.isotropic(phi, float(cfg["alpha"]), model.m))
        if not rep.passed:
            raise ModelValidationError(rep)
    kinds = list(cfg["strategies"])
    if cfg["series_tail"] and "SeriesTail" not in kinds:
        kinds.append("SeriesTail")
    config = SimConfig(path_count=int(cfg["paths"]), q0=tuple(q0), step_count=int(cfg["steps"]),
                       rng_seed=int(cfg["seed"]), scenario=cfg["scenario"],
                       horizon=float(cfg["horizon"]), alpha=float(cfg["alpha"]),
                       grid_refine=int(cfg["grid_refine"]))
    run = compare_strategies(model, OrderFlowModel.zero_flow(model.n), config, kinds, phis,
                             sigma_ac=sigma_ac, phi_ac=float(cfg["phi_ac"]),
                             tau_switch=float(cfg["tau_switch"]))
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    run.to_csv(os.path.join(out, "simrun.csv"))
    run.to_json(os.path.join(out, "simrun.json"))
    if cfg["dump_paths"]:
        run.dump_paths(os.path.join(out, "paths.csv"))
    _manifest(out, "backtest", cfg)
    for row in run.summary():
        if row["strategy"] != "AC":
            print(f"phi={row['phi']:g} {row['strategy']}: median savings "
                  f"{row['savings_q50']:.4f} bps, underperforms AC on {row['underperform_pct']:.1f}% of paths")
    return EXIT_OK


COMMANDS = {"estimate": cmd_estimate, "solve": cmd_solve, "backtest": cmd_backtest}


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.subcommand](cfg)
    except (ModelValidationError,) as exc:
        print(f"error: model failed validation (bounded-solution condition alpha - 1/2 X b X^T > 0 "
              f"or another invariant):\n{exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (CliValidationError, EstimationError, DimensionError, RiccatiBlowUpError,
            ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
