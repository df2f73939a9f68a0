"""Command-line front end.

Every subcommand reads an optional JSON config whose keys mirror the
ModelParams, InitialState and GridSpec field names; explicit flags win
over the file.  Exit status: 0 ok, 1 a validation check failed, 2 bad input.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from contextlib import contextmanager
from typing import Optional

import numpy as np

from . import mean, moments, montecarlo, outcome, phase, validate
from .errors import DebtCycleError, InvalidParameters
from .model import InitialState, ModelParams

PARAM_KEYS = ("ell", "mu", "p", "s", "q", "pi_star", "phi")
INIT_KEYS = ("e0", "m0")
GRID_KEYS = ("p_min", "p_max", "p_steps", "s_min", "s_max", "s_steps")
DEFAULTS = {"ell": 0.5, "mu": 0.5, "p": 0.8, "s": 0.02, "q": 0.01, "pi_star": 3000.0, "phi": 0.01,
            "e0": 30000.0, "m0": 300000.0}


class BadInput(Exception):
    pass


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise BadInput(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise BadInput("config must be a JSON object")
    return data


def _settings(args) -> dict:
    merged = dict(DEFAULTS)
    merged.update(_load_config(args.config))
    for key in PARAM_KEYS + INIT_KEYS + GRID_KEYS + ("t_max", "paths", "horizon", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _model(cfg: dict) -> tuple[ModelParams, InitialState]:
    try:
        params = ModelParams(**{k: cfg[k] for k in PARAM_KEYS})
        init = InitialState(**{k: cfg[k] for k in INIT_KEYS})
    except (KeyError, TypeError) as exc:
        raise BadInput(f"bad model settings: {exc}") from None
    return params, init


@contextmanager
def _output(path: Optional[str], binary: bool = False):
    if path in (None, "-"):
        yield sys.stdout.buffer if binary else sys.stdout
        return
    mode = "wb" if binary else "w"
    kwargs = {} if binary else {"encoding": "utf-8", "newline": "\n"}
    with open(path, mode, **kwargs) as fh:
        yield fh


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.9g}"


def _write_rows(out, header: str, rows) -> None:
    out.write(header + "\n")
    for row in rows:
        out.write(",".join(_fmt(v) if not isinstance(v, str) else v for v in row) + "\n")


# ------------------------------------------------------------------ commands

def cmd_mean(args) -> int:
    cfg = _settings(args)
    params, init = _model(cfg)
    t_max = int(cfg.get("t_max", 400))
    sol = mean.solve_mean(params, init)
    t = np.arange(t_max + 1)
    e, m = mean.mean_at(sol, params, init, t)
    with _output(args.out) as out:
        _write_rows(out, "t,mean_e,mean_m", zip(t.tolist(), e.tolist(), m.tolist()))
    return 0


def cmd_moments(args) -> int:
    cfg = _settings(args)
    params, init = _model(cfg)
    t_max = int(cfg.get("t_max", 400))
    system = moments.build_moment_system(params, init)
    if args.method == "closed":
        sol = moments.closed_form_moments(system, np.arange(t_max + 1))
    else:
        sol = moments.recurrence_moments(system, t_max)
    with _output(args.out) as out:
        _write_rows(out, "t,mean_e,mean_m,var_e,var_m,cov_em,std_e,std_m",
                    zip(sol.t, sol.mean_e, sol.mean_m, sol.var_e, sol.var_m, sol.cov_em, sol.std_e, sol.std_m))
    return 0


def cmd_ensemble(args) -> int:
    cfg = _settings(args)
    params, init = _model(cfg)
    config = montecarlo.EnsembleConfig(
        n_paths=int(cfg.get("paths", 10_000)), horizon=int(cfg.get("horizon", 40)),
        seed=int(cfg.get("seed", 0)), stop_at_boundary=args.stop, threads=args.threads)
    stats = montecarlo.run_ensemble(params, init, config)
    with _output(args.out) as out:
        _write_rows(out, "t,mean_e,mean_m,std_e,std_m,surviving",
                    zip(stats.t, stats.mean_e, stats.mean_m, stats.std_e, stats.std_m, stats.surviving.astype(float)))
    if args.stop:
        h = montecarlo.empirical_hitting(stats)
        summary = {"median": h.median, "mean": h.mean, "fraction_equity": h.fraction_equity,
                   "fraction_mortgage": h.fraction_mortgage, "fraction_censored": h.fraction_censored}
        summary = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in summary.items()}
        print(json.dumps(summary), file=sys.stderr)
    return 0


def cmd_classify(args) -> int:
    cfg = _settings(args)
    params, init = _model(cfg)
    convention = outcome.NoRecyclingConvention(args.convention)
    try:
        res = outcome.classify(params, init, convention=convention)
        payload = {"kind": res.kind.value, "t_star": res.t_star, "t_equity": res.t_equity,
                   "t_mortgage": res.t_mortgage, "t_no_recycling": res.t_no_recycling,
                   "quadrant": str(res.quadrant)}
    except outcome.Inconclusive as exc:
        payload = {"kind": outcome.OutcomeKind.INCONCLUSIVE.value, "reason": str(exc),
                   "quadrant": str(outcome.quadrant(params))}
    with _output(args.out) as out:
        out.write(json.dumps(payload) + "\n")
    return 0


def _grid(cfg: dict) -> phase.GridSpec:
    params, init = _model(cfg)
    grid_args = {k: cfg[k] for k in GRID_KEYS if k in cfg}
    for k in ("p_steps", "s_steps"):
        if k in grid_args:
            grid_args[k] = int(grid_args[k])
    return phase.GridSpec(base=params, init=init, **grid_args)


def cmd_phase(args) -> int:
    cfg = _settings(args)
    table = phase.sweep(_grid(cfg), threads=args.threads)
    with _output(args.out) as out:
        phase.write_csv(table, out)
    return 0


def cmd_slice(args) -> int:
    cfg = _settings(args)
    params, init = _model(cfg)
    value = args.value if args.value is not None else cfg[args.fixed]
    res = phase.slice_scan(params, init, args.fixed, value, args.lo, args.hi, args.steps)
    with _output(args.out) as out:
        _write_rows(out, f"{res.axis},t_star,outcome,t_no_recycling",
                    ((r.x, r.t_star, r.kind.value, res.t_no_recycling) for r in res.rows))
    for tr in res.transitions:
        print(json.dumps({res.axis: tr.x, "from": tr.before.value, "to": tr.after.value}), file=sys.stderr)
    return 0


def cmd_threshold(args) -> int:
    cfg = _settings(args)
    params, init = _model(cfg)
    x = outcome.threshold(params, init, args.axis, (args.lo, args.hi), args.boundary)
    with _output(args.out) as out:
        out.write(json.dumps({"axis": args.axis, "boundary": args.boundary, "value": x}) + "\n")
    return 0


def cmd_render(args) -> int:
    if args.table:
        try:
            with open(args.table, encoding="utf-8") as fh:
                table = phase.read_csv(fh)
        except OSError as exc:
            raise BadInput(f"cannot read table {args.table}: {exc}") from None
    else:
        table = phase.sweep(_grid(_settings(args)), threads=args.threads)
    data = phase.render(table, scale=args.scale)
    with _output(args.out, binary=True) as out:
        out.write(data)
    return 0


def cmd_validate(args) -> int:
    results = validate.run_checks(args.check or None)
    with _output(args.out) as out:
        for res in results:
            out.write(json.dumps(res.as_dict()) + "\n")
    for res in results:
        print(res.line(), file=sys.stderr)
    return 0 if validate.all_passed(results) else 1


# -------------------------------------------------------------------- parser

def _common(sp: argparse.ArgumentParser, model: bool = True, grid: bool = False) -> None:
    sp.add_argument("--config", help="JSON file with parameter values")
    sp.add_argument("--out", help="output file (default stdout)")
    sp.add_argument("--seed", type=int, help="64-bit seed where randomness is involved")
    if model:
        for key in PARAM_KEYS + INIT_KEYS:
            sp.add_argument(f"--{key.replace('_', '-')}", dest=key, type=float)
    if grid:
        for key in GRID_KEYS:
            sp.add_argument(f"--{key.replace('_', '-')}", dest=key,
                            type=int if key.endswith("steps") else float)
        sp.add_argument("--threads", type=int, help="worker processes (0 = auto)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="debtcycle", description="Debt-recycling model toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("mean", help="mean equity and mortgage trajectories")
    _common(sp)
    sp.add_argument("--t-max", dest="t_max", type=int)
    sp.set_defaults(func=cmd_mean)

    sp = sub.add_parser("moments", help="second-moment trajectories")
    _common(sp)
    sp.add_argument("--t-max", dest="t_max", type=int)
    sp.add_argument("--method", choices=("recurrence", "closed"), default="recurrence")
    sp.set_defaults(func=cmd_moments)

    sp = sub.add_parser("ensemble", help="Monte Carlo ensemble statistics")
    _common(sp)
    sp.add_argument("--paths", type=int)
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--stop", action="store_true", help="freeze paths at their first boundary crossing")
    sp.add_argument("--threads", type=int)
    sp.set_defaults(func=cmd_ensemble)

    sp = sub.add_parser("classify", help="outcome of one parameter point")
    _common(sp)
    sp.add_argument("--convention", choices=[c.value for c in outcome.NoRecyclingConvention], default="mean")
    sp.set_defaults(func=cmd_classify)

    sp = sub.add_parser("phase", help="sweep the (p, s) grid to CSV")
    _common(sp, grid=True)
    sp.set_defaults(func=cmd_phase)

    sp = sub.add_parser("slice", help="1-D scan with refined class changes")
    _common(sp)
    sp.add_argument("--fixed", choices=("p", "s"), required=True)
    sp.add_argument("--value", type=float, help="value of the fixed parameter (default: from config)")
    sp.add_argument("--lo", type=float, required=True)
    sp.add_argument("--hi", type=float, required=True)
    sp.add_argument("--steps", type=int, default=161)
    sp.set_defaults(func=cmd_slice)

    sp = sub.add_parser("threshold", help="bisect for an outcome boundary")
    _common(sp)
    sp.add_argument("--axis", choices=("s", "p"), default="s")
    sp.add_argument("--boundary", choices=sorted(outcome.BOUNDARIES), default="default/success")
    sp.add_argument("--lo", type=float, required=True)
    sp.add_argument("--hi", type=float, required=True)
    sp.set_defaults(func=cmd_threshold)

    sp = sub.add_parser("render", help="PPM image of a phase table")
    _common(sp, grid=True)
    sp.add_argument("--table", help="phase CSV to draw (default: sweep from the config)")
    sp.add_argument("--scale", type=int, default=1, help="pixels per grid cell")
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("validate", help="run every oracle check")
    _common(sp, model=False)
    sp.add_argument("--check", action="append", choices=sorted(validate.CHECKS),
                    help="run only this check (repeatable)")
    sp.set_defaults(func=cmd_validate)
    return ap


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (BadInput, InvalidParameters, DebtCycleError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
