"""Domain types and the one-step stochastic update of (equity, mortgage).

Time is measured in quarters and every rate is per quarter.  One step maps

    E_t = (1 + l*mu*sigma + r) E_{t-1} + pi + r M_{t-1}
    M_t = M_{t-1} - pi - l*mu*sigma E_{t-1}

with sigma = +/-1 (investment gain/loss), r ~ N(s, phi^2) the house-market
return and pi in {0, pi_star} the installment actually paid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidParameters


def _as_float(name: str, value) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise InvalidParameters(f"{name} must be a real number, got {value!r}") from None


def _check_unit(name: str, value: float, *, closed_top: bool = True) -> None:
    if not math.isfinite(value):
        raise InvalidParameters(f"{name} must be finite, got {value!r}")
    upper_ok = value <= 1.0 if closed_top else value < 1.0
    if value < 0.0 or not upper_ok:
        bracket = "]" if closed_top else ")"
        raise InvalidParameters(f"{name} must lie in [0, 1{bracket}, got {value!r}")


@dataclass(frozen=True)
class ModelParams:
    """Economic parameters of the debt-recycling process.

    ``ell`` is the loan-to-value ratio, ``mu`` the investment risk factor,
    ``p`` the probability of an investment gain, ``s`` the mean quarterly
    house-market return, ``q`` the probability of skipping an installment,
    ``pi_star`` the installment value and ``phi`` the standard deviation of
    the house-market return.
    """

    ell: float
    mu: float
    p: float
    s: float
    q: float = 0.01
    pi_star: float = 3000.0
    phi: float = 0.01

    def __post_init__(self) -> None:
        for name in ("ell", "mu", "p", "s", "q", "pi_star", "phi"):
            object.__setattr__(self, name, _as_float(name, getattr(self, name)))
        _check_unit("ell", self.ell)
        _check_unit("mu", self.mu)
        _check_unit("p", self.p)
        _check_unit("q", self.q, closed_top=False)
        for name in ("s", "pi_star", "phi"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise InvalidParameters(f"{name} must be finite, got {value!r}")
        # s <= -1 would make the mean house value shrink to zero or flip sign
        if self.s <= -1.0:
            raise InvalidParameters(f"s must exceed -1, got {self.s!r}")
        if self.pi_star < 0.0:
            raise InvalidParameters(f"pi_star must be non-negative, got {self.pi_star!r}")
        if self.phi < 0.0:
            raise InvalidParameters(f"phi must be non-negative, got {self.phi!r}")

    @property
    def leverage(self) -> float:
        """Product l*mu; the only way ell and mu enter the dynamics."""
        return self.ell * self.mu

    @property
    def investment_drift(self) -> float:
        """Mean fractional investment return l*mu*(2p - 1)."""
        return self.ell * self.mu * (2.0 * self.p - 1.0)

    @property
    def mean_installment(self) -> float:
        return (1.0 - self.q) * self.pi_star

    @property
    def lambda1(self) -> float:
        return self.s + 1.0

    @property
    def lambda2(self) -> float:
        return self.investment_drift + 1.0

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class InitialState:
    e0: float
    m0: float

    def __post_init__(self) -> None:
        for name in ("e0", "m0"):
            value = _as_float(name, getattr(self, name))
            object.__setattr__(self, name, value)
            if not math.isfinite(value) or value < 0.0:
                raise InvalidParameters(f"{name} must be finite and >= 0, got {value!r}")

    def require_positive(self) -> None:
        """Analysis routines divide by both initial values."""
        if self.e0 <= 0.0 or self.m0 <= 0.0:
            raise InvalidParameters(
                f"analysis needs e0 > 0 and m0 > 0, got e0={self.e0}, m0={self.m0}"
            )

    def scaled(self, factor: float) -> "InitialState":
        return InitialState(self.e0 * factor, self.m0 * factor)


@dataclass(frozen=True)
class State:
    t: int
    e: float
    m: float

    @property
    def house(self) -> float:
        return self.e + self.m


@dataclass(frozen=True)
class ShockDraw:
    sigma: int
    r: float
    pi: float


def draw_shocks(params: ModelParams, rng: np.random.Generator) -> ShockDraw:
    """Draw one independent (sigma, r, pi) triple from the three laws."""
    sigma = 1 if rng.random() < params.p else -1
    r = params.s + params.phi * rng.standard_normal() if params.phi > 0 else params.s
    pi = 0.0 if rng.random() < params.q else params.pi_star
    return ShockDraw(sigma=sigma, r=float(r), pi=pi)


def shock_matrix(shocks: ShockDraw, params: ModelParams) -> np.ndarray:
    """The random 2x2 update matrix A_t for one quarter."""
    invest = params.leverage * shocks.sigma
    return np.array([[1.0 + invest + shocks.r, shocks.r], [-invest, 1.0]])


def step(state: State, shocks: ShockDraw, params: ModelParams) -> State:
    invest = params.leverage * shocks.sigma
    e = (1.0 + invest + shocks.r) * state.e + shocks.pi + shocks.r * state.m
    m = state.m - shocks.pi - invest * state.e
    return State(t=state.t + 1, e=e, m=m)


def step_arrays(e, m, sigma, r, pi, leverage: float):
    """Vectorised :func:`step` over arrays of paths."""
    invest = leverage * sigma
    return (1.0 + invest + r) * e + pi + r * m, m - pi - invest * e


def mean_matrix(params: ModelParams) -> np.ndarray:
    """Expectation of A_t under the three independent laws."""
    k = params.investment_drift
    return np.array([[1.0 + k + params.s, params.s], [-k, 1.0]])


def draw_shock_arrays(params: ModelParams, n: int, rng: np.random.Generator):
    """Draw ``n`` independent shock triples as arrays (sigma, r, pi)."""
    sigma = np.where(rng.random(n) < params.p, 1.0, -1.0)
    r = params.s + params.phi * rng.standard_normal(n)
    pi = np.where(rng.random(n) < params.q, 0.0, params.pi_star)
    return sigma, r, pi


BASELINE_INIT = InitialState(e0=30_000.0, m0=300_000.0)


def baseline_params(p: float = 0.8, s: float = 0.02, **overrides) -> ModelParams:
    """The reference scenario: l = mu = 0.5, q = 1%, pi* = 3000, phi = 1%."""
    fields = dict(ell=0.5, mu=0.5, p=p, s=s, q=0.01, pi_star=3000.0, phi=0.01)
    fields.update(overrides)
    return ModelParams(**fields)
