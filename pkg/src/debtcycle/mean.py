"""Exact mean trajectories <E_t>, <M_t>.

The mean obeys <v_t> = Abar <v_{t-1}> + <pi> (1, -1).  Diagonalising Abar
gives

    <E_t> / E0 = A lam1^t + B lam2^t + C
    <M_t> / M0 = D lam1^t + E lam2^t + F

with lam1 = s + 1 and lam2 = l*mu*(2p-1) + 1.  The closed form breaks down
when lam1 == lam2 (Jordan block) or lam2 == 1 (the geometric sums collapse);
those parameter points fall back to iterating the recurrence directly.
"""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateSpectrum
from .model import InitialState, ModelParams, mean_matrix

DEGENERACY_EPS = 1e-9


@dataclass(frozen=True)
class MeanSolution:
    lambda1: float
    lambda2: float
    c1: float
    c2: float
    c3: float
    c4: float
    degenerate: bool
    coeff_a: Optional[float] = None
    coeff_b: Optional[float] = None
    coeff_c: Optional[float] = None
    coeff_d: Optional[float] = None
    coeff_e: Optional[float] = None
    coeff_f: Optional[float] = None
    # lam - 1 kept unrounded; forming it from lam loses bits when it is small
    rate1: float = 0.0
    rate2: float = 0.0

    @property
    def equity_terms(self) -> tuple[float, float, float]:
        return self.coeff_a, self.coeff_b, self.coeff_c

    @property
    def mortgage_terms(self) -> tuple[float, float, float]:
        return self.coeff_d, self.coeff_e, self.coeff_f


def is_degenerate(lambda1: float, lambda2: float, eps: float = DEGENERACY_EPS) -> bool:
    return abs(lambda1 - lambda2) < eps or abs(lambda2 - 1.0) < eps


def solve_mean(params: ModelParams, init: InitialState) -> MeanSolution:
    init.require_positive()
    l1, l2 = params.lambda1, params.lambda2
    pi_mean = params.mean_installment
    c1 = init.m0 / init.e0
    c2 = pi_mean / init.e0
    c3 = init.e0 / init.m0
    c4 = pi_mean / init.m0
    g1, g2 = params.s, params.investment_drift
    if is_degenerate(l1, l2):
        return MeanSolution(l1, l2, c1, c2, c3, c4, degenerate=True, rate1=g1, rate2=g2)

    gap = g1 - g2
    a = (c1 + 1.0) * g1 / gap
    b = (c2 * g1 - g2 * (c1 * g1 + c2 + g2)) / (gap * g2)
    c = -c2 / g2
    d = -(c3 + 1.0) * g2 / gap
    e = (-c4 * g1 + g2 * (c3 * g2 + c4 + g1)) / (gap * g2)
    f = c4 / g2
    return MeanSolution(l1, l2, c1, c2, c3, c4, False, a, b, c, d, e, f, g1, g2)


def _dyadic(x) -> tuple[int, int]:
    """Write a finite float (or Fraction) as num / 2**shift exactly."""
    num, den = Fraction(x).as_integer_ratio()
    shift = den.bit_length() - 1
    if den != 1 << shift:
        raise ValueError(f"{x!r} is not a dyadic rational")
    return num, shift


def recurrence_mean(params: ModelParams, init: InitialState, t_max: int) -> np.ndarray:
    """Iterate the mean recurrence; returns an array of shape (t_max + 1, 2).

    Every float is a dyadic rational, so the iteration runs exactly on
    integer numerators over a growing power of two and each entry is
    rounded once.  Near a zero crossing the plain float loop loses all
    relative accuracy, which makes it a poor reference.
    """
    if t_max < 0:
        raise ValueError("t_max must be non-negative")
    s, k = Fraction(params.s), Fraction(params.investment_drift)
    entries = [_dyadic(1 + k + s), _dyadic(s), _dyadic(-k), (1, 0)]
    shift = max(sh for _, sh in entries)
    a11, a12, a21, a22 = (num << (shift - sh) for num, sh in entries)
    pi_num, pi_sh = _dyadic(params.mean_installment)
    e_num, e_sh = _dyadic(init.e0)
    m_num, m_sh = _dyadic(init.m0)
    scale = max(pi_sh, e_sh, m_sh)
    e, m = e_num << (scale - e_sh), m_num << (scale - m_sh)
    pi = pi_num << (scale - pi_sh)

    out = np.empty((t_max + 1, 2))
    out[0] = init.e0, init.m0
    for t in range(1, t_max + 1):
        e, m = a11 * e + a12 * m, a21 * e + a22 * m
        pi <<= shift
        scale += shift
        e += pi
        m -= pi
        den = 1 << scale
        out[t] = e / den, m / den
    return out


def _interpolate(path: np.ndarray, t):
    t = np.asarray(t, dtype=float)
    lo = np.floor(t).astype(int)
    hi = np.minimum(lo + 1, len(path) - 1)
    frac = (t - lo)[..., None]
    return path[lo] * (1.0 - frac) + path[hi] * frac


def _stable_powers(rate1: float, rate2: float, t):
    """Return (lam1^t - lam2^t, lam2^t, lam2^t - 1) without cancellation."""
    log1, log2 = np.log1p(rate1), np.log1p(rate2)
    log_gap = np.log1p((rate1 - rate2) / (1.0 + rate2))
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        p2 = np.exp(t * log2)
        # the product form cancels nothing but turns into 0 * inf once the
        # powers drift far apart; there the plain difference is accurate
        close = np.abs(t * log_gap) < 1.0
        gap_pow = np.where(close, p2 * np.expm1(np.where(close, t * log_gap, 0.0)), np.exp(t * log1) - p2)
        return gap_pow, p2, np.expm1(t * log2)


def mean_at(sol: MeanSolution, params: ModelParams, init: InitialState, t):
    """Mean equity and mortgage at (possibly fractional, possibly array) t."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("t must be non-negative")
    if not sol.degenerate:
        gap_pow, p2, growth2 = _stable_powers(sol.rate1, sol.rate2, np.asarray(t, dtype=float))
        # A+B+C = D+E+F = 1 lets the large, cancelling coefficients multiply
        # differences of powers instead of the powers themselves
        with np.errstate(over="ignore", invalid="ignore"):
            mean_e = init.e0 * (sol.coeff_a * gap_pow + p2 - sol.coeff_c * growth2)
            mean_m = init.m0 * (sol.coeff_d * gap_pow + p2 - sol.coeff_f * growth2)
        if np.ndim(t) == 0:
            return float(mean_e), float(mean_m)
        return mean_e, mean_m
    path = recurrence_mean(params, init, int(math.ceil(float(np.max(t)))))
    vals = _interpolate(path, t)
    if np.ndim(t) == 0:
        return float(vals[0]), float(vals[1])
    return vals[..., 0], vals[..., 1]


def eigensystem(params: ModelParams):
    """Return (Lambda, U, U_inv) with Abar = U Lambda U_inv.

    U is the analytic eigenvector matrix; its inverse is computed
    numerically and checked against the analytic inverse.
    """
    l1, l2 = params.lambda1, params.lambda2
    k = params.investment_drift
    if abs(l1 - l2) < DEGENERACY_EPS or abs(k) < DEGENERACY_EPS:
        raise DegenerateSpectrum(f"lambda1={l1!r}, lambda2={l2!r}")
    lam = np.diag([l1, l2])
    u = np.array([[-params.s / k, -1.0], [1.0, 1.0]])
    u_inv = np.linalg.inv(u)
    analytic = analytic_eigvec_inverse(params)
    if not np.allclose(u_inv, analytic, rtol=1e-9, atol=1e-12):
        raise ArithmeticError("numerical eigenvector inverse disagrees with analytic form")
    return lam, u, u_inv


def analytic_eigvec_inverse(params: ModelParams) -> np.ndarray:
    k, s = params.investment_drift, params.s
    w = k / (k - s)
    return np.array([[w, w], [-w, -s / (k - s)]])
