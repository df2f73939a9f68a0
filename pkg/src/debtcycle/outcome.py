"""Hitting times of the mean trajectories and the outcome taxonomy.

A strategy is judged on the average processes: t_E and t_M are the first
zeros of <E_t> and <M_t>, and t* = min(t_E, t_M).  A mortgage root first
means success (strong when it beats paying the installments alone), an
equity root first means default, and no root at all means the household
keeps re-mortgaging forever.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import Inconclusive, SameClassAtBracket
from .mean import DEGENERACY_EPS, MeanSolution, _stable_powers, solve_mean
from .model import InitialState, ModelParams, mean_matrix
from .moments import build_moment_system

T_MAX = 4000.0
ROOT_TOL = 1e-6
TIE_TOL = 1e-6
THRESHOLD_TOL = 1e-5
# roots past T_MAX are still searched for, up to this many quarters
T_LIMIT = 1e12


class OutcomeKind(str, enum.Enum):
    STRONG_SUCCESS = "StrongSuccess"
    WEAK_SUCCESS = "WeakSuccess"
    DEFAULT = "Default"
    PERMANENT_REMORTGAGING = "PermanentRemortgaging"
    # only ever stored in sweep tables; classify() raises instead
    INCONCLUSIVE = "Inconclusive"

    @property
    def is_success(self) -> bool:
        return self in (OutcomeKind.STRONG_SUCCESS, OutcomeKind.WEAK_SUCCESS)

    def __str__(self) -> str:
        return self.value


class NoRecyclingConvention(str, enum.Enum):
    """How the pay-installments-only horizon is computed."""

    MEAN_INSTALLMENT = "mean"  # M0 / <pi>
    SCHEDULED = "scheduled"  # M0 / pi*


@dataclass(frozen=True)
class QuadrantLabel:
    """Position in the (lambda1, lambda2) plane.

    ``label`` follows the sign pattern with values within eps of 1 put on
    the "<= 1" side; ``on_lambda1_boundary`` / ``on_lambda2_boundary`` flag
    those points.
    """

    label: str
    on_lambda1_boundary: bool = False
    on_lambda2_boundary: bool = False

    @property
    def on_boundary(self) -> bool:
        return self.on_lambda1_boundary or self.on_lambda2_boundary

    def __str__(self) -> str:
        marks = [name for name, flag in (("l1=1", self.on_lambda1_boundary),
                                         ("l2=1", self.on_lambda2_boundary)) if flag]
        return f"{self.label}[{','.join(marks)}]" if marks else self.label


_QUADRANTS = {(True, True): "I", (True, False): "II", (False, False): "III", (False, True): "IV"}


def quadrant(params: ModelParams, eps: float = DEGENERACY_EPS) -> QuadrantLabel:
    # compare the rates, not 1 + rate, so tiny rates keep their sign
    r1, r2 = params.s, params.investment_drift
    b1, b2 = abs(r1) < eps, abs(r2) < eps
    label = _QUADRANTS[(r1 > 0 and not b1, r2 > 0 and not b2)]
    return QuadrantLabel(label, b1, b2)


@dataclass(frozen=True)
class Outcome:
    kind: OutcomeKind
    t_star: Optional[float]
    t_no_recycling: float
    quadrant: QuadrantLabel
    t_equity: Optional[float] = None
    t_mortgage: Optional[float] = None

    @property
    def owner(self) -> Optional[str]:
        """Which mean process hits zero at t*."""
        if self.kind.is_success:
            return "mortgage"
        if self.kind is OutcomeKind.DEFAULT:
            return "equity"
        return None


def t_no_recycling(params: ModelParams, init: InitialState,
                   convention: NoRecyclingConvention = NoRecyclingConvention.MEAN_INSTALLMENT) -> float:
    pay = params.mean_installment if convention is NoRecyclingConvention.MEAN_INSTALLMENT else params.pi_star
    return init.m0 / pay if pay > 0 else math.inf


# ---------------------------------------------------------------- generic roots

def _as_vector_fn(evaluator: Callable) -> Callable[[np.ndarray], np.ndarray]:
    def fn(t: np.ndarray) -> np.ndarray:
        try:
            with warnings.catch_warnings():
                # scalar-only callables may squeeze a length-1 array
                warnings.simplefilter("error", DeprecationWarning)
                out = np.asarray(evaluator(t), dtype=float)
            if out.shape == t.shape:
                return out
        except (TypeError, DeprecationWarning):
            pass
        return np.array([float(evaluator(float(x))) for x in t])
    return fn


def first_root(evaluator: Callable, t_max: float, tol: float = ROOT_TOL) -> Optional[float]:
    """First zero of a continuous trajectory on (0, t_max].

    Scans the integer quarters (and t_max itself) for the first value <= 0,
    then bisects the bracketing quarter down to ``tol``.  ``evaluator`` may
    be vectorised or scalar.
    """
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    fn = _as_vector_fn(evaluator)
    grid = np.arange(0.0, math.floor(t_max) + 1.0)
    if grid[-1] < t_max:
        grid = np.append(grid, t_max)
    values = fn(grid)
    if values[0] <= 0.0:
        return 0.0
    hits = np.flatnonzero(values[1:] <= 0.0)
    if hits.size == 0:
        return None
    hi_idx = hits[0] + 1
    lo, hi = grid[hi_idx - 1], grid[hi_idx]
    if values[hi_idx] == 0.0:
        return float(hi)
    f_lo, f_hi = values[hi_idx - 1], values[hi_idx]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f_mid = fn(np.array([mid]))[0]
        if f_mid > 0.0:
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
    # one false-position step inside the final bracket; exact on linear pieces
    return float(lo + (hi - lo) * f_lo / (f_lo - f_hi)) if f_lo != f_hi else float(hi)


# ---------------------------------------------------------- exponential sums

@dataclass(frozen=True)
class ExpSum:
    """f(t) = x0 * (a*lam1^t + b*lam2^t + c) with a + b + c = 1.

    Stored through the rates lam - 1 and evaluated as
    x0 * (a*(lam1^t - lam2^t) + lam2^t - c*(lam2^t - 1)), which avoids the
    cancellation between the large a, b, c near lam2 = 1.
    """

    x0: float
    a: float
    b: float
    c: float
    rate1: float
    rate2: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "_log1", math.log1p(self.rate1))
        object.__setattr__(self, "_log2", math.log1p(self.rate2))
        object.__setattr__(self, "_log_gap", math.log1p((self.rate1 - self.rate2) / (1.0 + self.rate2)))

    def __call__(self, t: float) -> float:
        l2 = t * self._log2
        try:
            p2 = math.exp(l2)
            lg = t * self._log_gap
            # see mean._stable_powers for the switch between the two forms
            gap = p2 * math.expm1(lg) if abs(lg) < 1.0 else math.exp(t * self._log1) - p2
            value = self.x0 * (self.a * gap + p2 - self.c * math.expm1(l2))
        except OverflowError:
            value = math.nan
        return value if math.isfinite(value) else math.copysign(math.inf, self.asymptotic_sign())

    def vector(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        gap, p2, growth2 = _stable_powers(self.rate1, self.rate2, t)
        with np.errstate(over="ignore", invalid="ignore"):
            return self.x0 * (self.a * gap + p2 - self.c * growth2)

    def terms(self) -> list[tuple[float, float]]:
        """(coefficient, log-base) pairs with unit bases folded into the constant."""
        const = self.c
        out = []
        for coef, log_base in ((self.a, self._log1), (self.b, self._log2)):
            if log_base == 0.0:
                const += coef
            else:
                out.append((coef, log_base))
        out.append((const, 0.0))
        return out

    def dominant(self) -> tuple[float, float]:
        """Coefficient governing t -> inf, and the scale to judge it against."""
        terms = self.terms()
        scale = max(1.0, *(abs(c) for c, _ in terms))
        growing = [(lb, c) for c, lb in terms if lb > 0.0]
        if growing:
            return max(growing)[1], scale
        return terms[-1][0], scale

    def asymptotic_sign(self) -> float:
        coef, _ = self.dominant()
        return math.copysign(1.0, coef) if coef != 0.0 else 0.0

    def asymptote_is_marginal(self, eps: float = DEGENERACY_EPS) -> bool:
        coef, scale = self.dominant()
        return abs(coef) <= eps * scale

    def critical_point(self) -> Optional[float]:
        """The single t > 0 where f' = 0, if any.

        f'(t) = x0 (a ln(lam1) lam1^t + b ln(lam2) lam2^t) changes sign at
        most once because the ratio of the two terms is monotone in t.
        """
        u = self.a * self._log1
        v = self.b * self._log2
        if u == 0.0 or v == 0.0 or (u > 0) == (v > 0) or self._log_gap == 0.0:
            return None
        tc = math.log(-v / u) / self._log_gap
        return tc if tc > 0.0 else None

    def first_root(self, t_cap: float = math.inf, tol: float = ROOT_TOL) -> Optional[float]:
        """First zero on (0, t_cap], searching past T_MAX when the tail heads below zero."""
        if self.x0 <= 0.0:
            return 0.0
        tc = self.critical_point()
        knots = [0.0] + ([tc] if tc is not None and tc < t_cap else [])
        for i, lo in enumerate(knots):
            last = i == len(knots) - 1
            hi = t_cap if last else knots[i + 1]
            if math.isinf(hi):
                hi = self._tail_bracket(lo)
                if hi is None:
                    return None
            f_hi = self(hi)
            if f_hi <= 0.0:
                if self(lo) <= 0.0:
                    return lo
                if f_hi == 0.0:
                    return hi
                return float(brentq(self, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps))
        return None

    def _tail_bracket(self, lo: float) -> Optional[float]:
        """Some t > lo with f(t) <= 0 on a monotone tail, or None."""
        if self.asymptotic_sign() > 0.0:
            return None
        t = max(2.0 * lo, T_MAX)
        while t <= T_LIMIT:
            if self(t) <= 0.0:
                return t
            t *= 2.0
        return None


def mean_expsums(params: ModelParams, init: InitialState,
                 sol: Optional[MeanSolution] = None) -> tuple[ExpSum, ExpSum]:
    sol = sol or solve_mean(params, init)
    if sol.degenerate:
        raise ValueError("degenerate spectrum has no exponential-sum form")
    eq = ExpSum(init.e0, sol.coeff_a, sol.coeff_b, sol.coeff_c, sol.rate1, sol.rate2)
    mo = ExpSum(init.m0, sol.coeff_d, sol.coeff_e, sol.coeff_f, sol.rate1, sol.rate2)
    return eq, mo


def iterate_mean(params: ModelParams, init: InitialState, t_max: int,
                 stop_at_crossing: bool = False) -> np.ndarray:
    """Plain float iteration of the mean recurrence, shape (t_max + 1, 2).

    With ``stop_at_crossing`` the path ends at the first quarter where
    either component is <= 0, which already brackets both first roots.
    """
    (a11, a12), (a21, a22) = mean_matrix(params).tolist()
    pi = params.mean_installment
    e, m = float(init.e0), float(init.m0)
    es, ms = [e], [m]
    for _ in range(t_max):
        e, m = a11 * e + a12 * m + pi, a21 * e + a22 * m - pi
        es.append(e)
        ms.append(m)
        if stop_at_crossing and (e <= 0.0 or m <= 0.0):
            break
    return np.column_stack([es, ms])


def _interpolator(values: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    grid = np.arange(len(values), dtype=float)
    return lambda t: np.interp(t, grid, values)


# --------------------------------------------------------------- classification

def _decide(params: ModelParams, init: InitialState, t_e: Optional[float], t_m: Optional[float],
            convention: NoRecyclingConvention) -> Outcome:
    t_nr = t_no_recycling(params, init, convention)
    quad = quadrant(params)
    if t_e is not None and (t_m is None or t_e <= t_m + TIE_TOL):
        return Outcome(OutcomeKind.DEFAULT, t_e, t_nr, quad, t_e, t_m)
    # a root within its own tolerance of t_no_recycling counts as a tie, and ties are weak
    kind = OutcomeKind.STRONG_SUCCESS if t_m < t_nr - ROOT_TOL else OutcomeKind.WEAK_SUCCESS
    return Outcome(kind, t_m, t_nr, quad, t_e, t_m)


def classify(params: ModelParams, init: InitialState, *, t_max: float = T_MAX,
             convention: NoRecyclingConvention = NoRecyclingConvention.MEAN_INSTALLMENT) -> Outcome:
    init.require_positive()
    sol = solve_mean(params, init)
    if sol.degenerate:
        return _classify_degenerate(params, init, t_max, convention)
    eq, mo = mean_expsums(params, init, sol)
    t_m = mo.first_root()
    # the equity search only matters up to the mortgage root (ties go to Default)
    t_e = eq.first_root(math.inf if t_m is None else t_m + TIE_TOL)
    if t_e is None and t_m is None:
        if eq.asymptote_is_marginal() or mo.asymptote_is_marginal():
            raise Inconclusive(f"asymptote within eps of zero at p={params.p}, s={params.s}")
        return Outcome(OutcomeKind.PERMANENT_REMORTGAGING, None,
                       t_no_recycling(params, init, convention), quadrant(params))
    return _decide(params, init, t_e, t_m, convention)


def _classify_degenerate(params, init, t_max, convention) -> Outcome:
    horizon = int(math.ceil(2 * t_max))
    path = iterate_mean(params, init, horizon, stop_at_crossing=True)
    cut = min(int(math.ceil(t_max)), len(path) - 1)
    reach = min(float(t_max), float(cut))
    t_e = first_root(_interpolator(path[: cut + 1, 0]), reach)
    t_m = first_root(_interpolator(path[: cut + 1, 1]), reach)
    if t_e is None and t_m is None:
        if len(path) <= horizon:
            raise Inconclusive("degenerate path crossed zero only after t_max")
        at_max, at_twice = path[cut], path[horizon]
        if np.all(at_max > 0) and np.all(at_twice > 0) and np.all(at_twice >= at_max):
            return Outcome(OutcomeKind.PERMANENT_REMORTGAGING, None,
                           t_no_recycling(params, init, convention), quadrant(params))
        raise Inconclusive(f"degenerate spectrum, no root by t={t_max} and no clear asymptote")
    return _decide(params, init, t_e, t_m, convention)


def classify_kind(params: ModelParams, init: InitialState, **kwargs) -> OutcomeKind:
    """Like :func:`classify` but folds Inconclusive into the kind."""
    try:
        return classify(params, init, **kwargs).kind
    except Inconclusive:
        return OutcomeKind.INCONCLUSIVE


# ------------------------------------------------------------------ thresholds

BOUNDARIES = {
    "default/success": lambda kind: kind is OutcomeKind.DEFAULT,
    "success/remortgage": lambda kind: kind.is_success,
}


def threshold(params: ModelParams, init: InitialState, axis: str, bracket: tuple[float, float],
              boundary="default/success", tol: float = THRESHOLD_TOL, **kwargs) -> float:
    """Bisect ``axis`` ("s" or "p") for a class change.

    ``boundary`` names an entry of BOUNDARIES or is any predicate on
    OutcomeKind; the result is where the predicate flips.
    """
    if axis not in ("s", "p"):
        raise ValueError(f"axis must be 's' or 'p', got {axis!r}")
    if callable(boundary):
        side = boundary
    elif boundary in BOUNDARIES:
        side = BOUNDARIES[boundary]
    else:
        raise ValueError(f"unknown boundary {boundary!r}; expected one of {sorted(BOUNDARIES)}")

    def test(x: float) -> bool:
        return side(classify_kind(params.with_(**{axis: x}), init, **kwargs))

    lo, hi = bracket
    at_lo, at_hi = test(lo), test(hi)
    if at_lo == at_hi:
        raise SameClassAtBracket(f"{boundary}: both ends of [{lo}, {hi}] fall on the same side")
    while abs(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        if test(mid) == at_lo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def threshold_s(params: ModelParams, init: InitialState, bracket: tuple[float, float],
                boundary: str = "default/success", **kwargs) -> float:
    return threshold(params, init, "s", bracket, boundary, **kwargs)


# --------------------------------------------------------- fluctuation flips

@dataclass(frozen=True)
class FlipReport:
    flipped: bool
    owner: Optional[str]
    t_star: Optional[float]
    first_touch: Optional[int] = None  # first quarter where the other band reaches zero
    min_band: Optional[float] = None  # smallest mean - std of the other process on [0, t*]


def _band_checks(owners: Sequence[Optional[str]], t_stars: Sequence[Optional[float]],
                 params_list: Sequence[ModelParams], init: InitialState, horizon: int) -> list[FlipReport]:
    """Batched moment recurrences; each cell only runs up to its own t*."""
    n = len(params_list)
    reports: list[Optional[FlipReport]] = [None] * n
    live = []
    for i, (owner, ts) in enumerate(zip(owners, t_stars)):
        if owner is None or ts is None:
            reports[i] = FlipReport(False, owner, ts)
        else:
            live.append(i)
    if not live:
        return reports
    systems = [build_moment_system(params_list[i], init) for i in live]
    mbar = np.stack([s.mbar for s in systems])
    n_mean = np.stack([s.n_mean for s in systems])
    w = np.stack([s.w0 for s in systems])
    last = np.array([min(int(math.floor(t_stars[i])), horizon) for i in live])
    other = np.array([3 if owners[i] == "equity" else 2 for i in live])  # W index of the other mean
    square = other - 2  # W index of its square
    rows = np.arange(len(live))
    min_band = np.full(len(live), np.inf)
    first_touch = np.full(len(live), -1)
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(0, int(last.max()) + 1):
            if t > 0:
                w = np.einsum("nij,nj->ni", mbar, w) + n_mean
            mean = w[rows, other]
            std = np.sqrt(np.clip(w[rows, square] - mean**2, 0.0, None))
            band = mean - std
            active = t <= last
            min_band = np.where(active, np.minimum(min_band, band), min_band)
            touch = active & (band <= 0.0) & (first_touch < 0)
            first_touch[touch] = t
    for k, i in enumerate(live):
        ft = int(first_touch[k]) if first_touch[k] >= 0 else None
        reports[i] = FlipReport(ft is not None, owners[i], t_stars[i], ft, float(min_band[k]))
    return reports


def fluctuation_flip_check(params: ModelParams, init: InitialState, horizon: int = int(T_MAX)) -> FlipReport:
    """Does the +-1 std band of the process that does not own t* reach zero first?"""
    try:
        out = classify(params, init)
    except Inconclusive:
        return FlipReport(False, None, None)
    return _band_checks([out.owner], [out.t_star], [params], init, horizon)[0]


@dataclass(frozen=True)
class FlipScan:
    p_values: np.ndarray
    s_values: np.ndarray
    reports: list  # row-major over (p, s)

    @property
    def flipped_cells(self) -> list[tuple[float, float]]:
        n_s = len(self.s_values)
        return [(float(self.p_values[k // n_s]), float(self.s_values[k % n_s]))
                for k, r in enumerate(self.reports) if r.flipped]

    @property
    def n_flipped(self) -> int:
        return sum(r.flipped for r in self.reports)


def flip_scan(base: ModelParams, init: InitialState, p_values, s_values,
              horizon: int = int(T_MAX)) -> FlipScan:
    p_values = np.asarray(p_values, dtype=float)
    s_values = np.asarray(s_values, dtype=float)
    params_list, owners, t_stars = [], [], []
    for p in p_values:
        for s in s_values:
            prm = base.with_(p=float(p), s=float(s))
            try:
                out = classify(prm, init)
                owner, ts = out.owner, out.t_star
            except Inconclusive:
                owner, ts = None, None
            params_list.append(prm)
            owners.append(owner)
            t_stars.append(ts)
    return FlipScan(p_values, s_values, _band_checks(owners, t_stars, params_list, init, horizon))
