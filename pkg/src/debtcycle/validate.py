"""Self-checks tying the analytic modules to their oracles.

Each check returns a :class:`CheckResult`; :func:`run_checks` runs a
selection and never stops at the first failure.  Functions are looked up
through their modules so a patched implementation is what gets checked.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import mean as mean_mod
from . import moments as moments_mod
from . import montecarlo as mc_mod
from . import outcome as outcome_mod
from . import phase as phase_mod
from .model import BASELINE_INIT, InitialState, ModelParams, baseline_params


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def __post_init__(self) -> None:
        # checks often compute ``passed`` with numpy, which json rejects
        object.__setattr__(self, "passed", bool(self.passed))

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail} ({self.seconds:.2f}s)"

    def as_dict(self) -> dict:
        return {"check": self.name, "passed": self.passed, "detail": self.detail,
                "seconds": round(self.seconds, 3)}


def random_parameter_sets(n: int, seed: int = 1) -> list[tuple[ModelParams, InitialState]]:
    """Draws used by the oracle-equivalence checks.

    ell, mu, p uniform on [0, 1]; s on [-4%, 4%]; q on [0, 10%];
    pi* on [500, 20000]; phi on [0, 3%]; E0 on [1e4, 1e6]; M0 on [1e4, 2e6].
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        params = ModelParams(ell=rng.random(), mu=rng.random(), p=rng.random(),
                             s=rng.uniform(-0.04, 0.04), q=rng.uniform(0.0, 0.1),
                             pi_star=rng.uniform(500.0, 20000.0), phi=rng.uniform(0.0, 0.03))
        init = InitialState(rng.uniform(1e4, 1e6), rng.uniform(1e4, 2e6))
        out.append((params, init))
    return out


def relative_error(value: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """|value - reference| / (|reference| + 1); the +1 keeps zero crossings finite."""
    return np.abs(value - reference) / (np.abs(reference) + 1.0)


# --------------------------------------------------------------------- checks

def check_baseline_root() -> CheckResult:
    out = outcome_mod.classify(baseline_params(), BASELINE_INIT)
    ok = out.t_mortgage is not None and abs(out.t_mortgage - 11.4) <= 0.1
    return CheckResult("baseline_mortgage_root", ok, f"t_M = {out.t_mortgage} (want 11.4 +- 0.1)")


def check_adverse_root() -> CheckResult:
    out = outcome_mod.classify(baseline_params(p=0.2, s=-0.03), BASELINE_INIT)
    ok = out.t_equity is not None and abs(out.t_equity - 3.2) <= 0.1
    return CheckResult("adverse_equity_root", ok, f"t_E = {out.t_equity} (want 3.2 +- 0.1)")


def check_no_recycling() -> CheckResult:
    out = outcome_mod.classify(baseline_params(), BASELINE_INIT)
    ok = abs(out.t_no_recycling - 101.0) <= 0.5 and out.kind is outcome_mod.OutcomeKind.STRONG_SUCCESS
    return CheckResult("no_recycling_time", ok, f"t_nr = {out.t_no_recycling:.4f}, kind = {out.kind}")


def check_thresholds() -> CheckResult:
    params = baseline_params(p=0.4)
    s_ds = outcome_mod.threshold_s(params, BASELINE_INIT, (-0.04, 0.0), "default/success")
    s_sr = outcome_mod.threshold_s(params, BASELINE_INIT, (-0.01, 0.01), "success/remortgage")
    ok = abs(s_ds - (-0.0128)) <= 0.0005 and abs(s_sr) <= 0.0001
    return CheckResult("p04_thresholds", ok, f"default/success s = {s_ds:.5%}, success/remortgage s = {s_sr:.5%}")


CASES = {
    # name: (ell = mu, E0, M0, p, expected s)
    "1a": (0.5, 300_000.0, 300_000.0, 0.49, -0.0228),
    "1b": (0.5, 800_000.0, 800_000.0, 0.49, -0.0067),
    "4a": (0.1, 90_000.0, 900_000.0, 0.6, -0.0051),
    "4b": (0.9, 90_000.0, 900_000.0, 0.6, -0.0199),
}


def case_params(name: str) -> tuple[ModelParams, InitialState, float]:
    """Case studies run at a fixed mean installment of 3000, i.e. q = 0."""
    lm, e0, m0, p, expected = CASES[name]
    return ModelParams(ell=lm, mu=lm, p=p, s=0.0, q=0.0, pi_star=3000.0), InitialState(e0, m0), expected


def check_cases() -> CheckResult:
    found, ok = {}, True
    for name in CASES:
        params, init, expected = case_params(name)
        s = outcome_mod.threshold_s(params, init, (-0.04, 0.0), "default/success")
        found[name] = s
        ok &= abs(s - expected) <= 0.0005
    detail = ", ".join(f"{k}: {v:.4%}" for k, v in found.items())
    return CheckResult("case_thresholds", ok, detail)


def check_mean_oracle(n_sets: int = 1000, t_max: int = 400, tol: float = 1e-10) -> CheckResult:
    worst, used = 0.0, 0
    t = np.arange(t_max + 1)
    for params, init in random_parameter_sets(n_sets):
        sol = mean_mod.solve_mean(params, init)
        if sol.degenerate:
            continue
        used += 1
        ref = mean_mod.recurrence_mean(params, init, t_max)
        e, m = mean_mod.mean_at(sol, params, init, t)
        worst = max(worst, float(relative_error(e, ref[:, 0]).max()), float(relative_error(m, ref[:, 1]).max()))
    return CheckResult("mean_closed_form_vs_recurrence", worst < tol, f"worst rel err {worst:.3g} over {used} sets")


def check_moment_oracle(n_sets: int = 1000, t_max: int = 400, tol: float = 1e-8) -> CheckResult:
    worst, used = 0.0, 0
    t = np.arange(t_max + 1)
    for params, init in random_parameter_sets(n_sets):
        system = moments_mod.build_moment_system(params, init)
        if system.degenerate:
            continue
        used += 1
        ref = moments_mod.recurrence_moments(system, t_max).w
        got = moments_mod.closed_form_moments(system, t).w
        worst = max(worst, float(relative_error(got, ref).max()))
    return CheckResult("moment_closed_form_vs_recurrence", worst < tol, f"worst rel err {worst:.3g} over {used} sets")


def check_monte_carlo(n_paths: int = 100_000, seed: int = 2024) -> CheckResult:
    notes, ok = [], True
    for label, params in (("favorable", baseline_params()), ("adverse", baseline_params(p=0.2, s=-0.03))):
        stats = mc_mod.run_ensemble(params, BASELINE_INIT, mc_mod.EnsembleConfig(n_paths, 12, seed=seed))
        e, m = mean_mod.mean_at(mean_mod.solve_mean(params, BASELINE_INIT), params, BASELINE_INIT, np.arange(13))
        z = max(float(np.max(np.abs(stats.mean_e - e)[1:] / stats.sem_e[1:])),
                float(np.max(np.abs(stats.mean_m - m)[1:] / stats.sem_m[1:])))
        theory = moments_mod.recurrence_moments(moments_mod.build_moment_system(params, BASELINE_INIT), 12)
        rel = max(max(abs(stats.var_e[t] / theory.var_e[t] - 1), abs(stats.var_m[t] / theory.var_m[t] - 1))
                  for t in (4, 8, 12))
        ok &= z < 3.0 and rel < 0.05
        notes.append(f"{label}: max z {z:.2f}, var rel {rel:.3%}")
    return CheckResult("monte_carlo_vs_theory", ok, "; ".join(notes))


def check_mbar(n_samples: int = 1_000_000, n_sets: int = 5, seed: int = 7) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for params, _ in random_parameter_sets(n_sets, seed=seed + 1):
        worst = max(worst, float(moments_mod.mbar_zscores(params, n_samples, rng).max()))
    return CheckResult("mbar_monte_carlo", worst < 5.0, f"max |z| = {worst:.2f} over {n_sets} sets")


def check_flip_scan(steps: int = 51) -> CheckResult:
    scan = outcome_mod.flip_scan(baseline_params(), BASELINE_INIT,
                                 np.linspace(0.0, 1.0, steps), np.linspace(-0.04, 0.04, steps))
    return CheckResult("fluctuation_flip_scan", scan.n_flipped == 0,
                       f"{scan.n_flipped} of {steps * steps} cells flip")


def check_invariants(seed: int = 11) -> CheckResult:
    problems = []
    params = baseline_params()
    e, m, r = mc_mod.simulate_paths(params, BASELINE_INIT, 10_000, 40, seed=seed)
    house = (BASELINE_INIT.e0 + BASELINE_INIT.m0) * np.concatenate(
        [np.ones((len(r), 1)), np.cumprod(1.0 + r, axis=1)], axis=1)
    house_err = float(np.max(np.abs(e + m - house) / np.abs(house)))
    if house_err >= 1e-9:
        problems.append(f"house rel err {house_err:.2g}")
    for prm, init in random_parameter_sets(50, seed=seed):
        sol = mean_mod.solve_mean(prm, init)
        if sol.degenerate:
            continue
        if abs(sum(sol.equity_terms) - 1) > 1e-12 or abs(sum(sol.mortgage_terms) - 1) > 1e-12:
            problems.append("A+B+C or D+E+F differs from 1")
            break
    mom = moments_mod.recurrence_moments(moments_mod.build_moment_system(params, BASELINE_INIT), 5)
    if mom.var_e[0] != 0.0 or mom.var_m[0] != 0.0:
        problems.append("nonzero variance at t = 0")
    det = ModelParams(ell=0.5, mu=0.5, p=1.0, s=0.02, q=0.0, pi_star=3000.0, phi=0.0)
    dmom = moments_mod.recurrence_moments(moments_mod.build_moment_system(det, BASELINE_INIT), 20)
    scale = np.maximum(dmom.mean_e**2, 1.0)
    if np.max(np.abs(dmom.var_e) / scale) > 1e-12 or np.max(np.abs(dmom.var_m) / np.maximum(dmom.mean_m**2, 1.0)) > 1e-12:
        problems.append("deterministic limit has variance")
    cfg1 = mc_mod.EnsembleConfig(5000, 20, seed=seed, threads=1)
    cfgn = mc_mod.EnsembleConfig(5000, 20, seed=seed, threads=4)
    a, b = mc_mod.run_ensemble(params, BASELINE_INIT, cfg1), mc_mod.run_ensemble(params, BASELINE_INIT, cfgn)
    if any(getattr(a, f).tobytes() != getattr(b, f).tobytes() for f in ("mean_e", "mean_m", "var_e", "var_m")):
        problems.append("ensemble differs between 1 and 4 workers")
    return CheckResult("invariants", not problems, "; ".join(problems) or f"house rel err {house_err:.2g}")


def check_sweep_speed(limit: float = 5.0) -> CheckResult:
    start = time.perf_counter()
    table = phase_mod.sweep(phase_mod.GridSpec())
    elapsed = time.perf_counter() - start
    return CheckResult("phase_sweep_speed", elapsed < limit and len(table.cells) == 201 * 161,
                       f"201 x 161 sweep in {elapsed:.2f}s (limit {limit}s)")


CHECKS: dict[str, Callable[[], CheckResult]] = {
    "baseline_mortgage_root": check_baseline_root,
    "adverse_equity_root": check_adverse_root,
    "no_recycling_time": check_no_recycling,
    "p04_thresholds": check_thresholds,
    "case_thresholds": check_cases,
    "mean_closed_form_vs_recurrence": check_mean_oracle,
    "moment_closed_form_vs_recurrence": check_moment_oracle,
    "monte_carlo_vs_theory": check_monte_carlo,
    "mbar_monte_carlo": check_mbar,
    "fluctuation_flip_scan": check_flip_scan,
    "invariants": check_invariants,
    "phase_sweep_speed": check_sweep_speed,
}


def run_checks(names: Optional[list[str]] = None) -> list[CheckResult]:
    results = []
    for name in names or list(CHECKS):
        if name not in CHECKS:
            raise KeyError(f"unknown check {name!r}")
        start = time.perf_counter()
        try:
            res = CHECKS[name]()
        except Exception as exc:  # a crashing check is a failing check
            res = CheckResult(name, False, f"{type(exc).__name__}: {exc}")
        results.append(CheckResult(res.name, res.passed, res.detail, time.perf_counter() - start))
    return results


def all_passed(results: list[CheckResult]) -> bool:
    return bool(results) and all(r.passed for r in results)
