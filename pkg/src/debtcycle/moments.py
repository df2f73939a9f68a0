"""Second moments of (E_t, M_t).

The vector W_t = (E^2, M^2, E, M, E*M) obeys the linear random recurrence
W_t = M_t W_{t-1} + n_t.  Averaging gives <W_t> = Mbar <W_{t-1}> + <n>,
from which Var(E_t) and Var(M_t) follow.  Iterating that recurrence is the
canonical evaluation; the spectral closed form is kept as an independent
check on the averaged matrix and its five eigenvalues.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import mpmath
import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .errors import DegenerateSpectrum
from .mean import DEGENERACY_EPS
from .model import InitialState, ModelParams


@dataclass(frozen=True)
class MomentSystem:
    mbar: np.ndarray
    n_mean: np.ndarray
    w0: np.ndarray
    gamma: np.ndarray
    degenerate: bool
    scale: float = 1.0


@dataclass(frozen=True)
class MomentSolution:
    t: np.ndarray
    w: np.ndarray  # shape (len(t), 5)

    @property
    def mean_e(self) -> np.ndarray:
        return self.w[:, 2]

    @property
    def mean_m(self) -> np.ndarray:
        return self.w[:, 3]

    @property
    def var_e(self) -> np.ndarray:
        return self.w[:, 0] - self.w[:, 2] ** 2

    @property
    def var_m(self) -> np.ndarray:
        return self.w[:, 1] - self.w[:, 3] ** 2

    @property
    def cov_em(self) -> np.ndarray:
        return self.w[:, 4] - self.w[:, 2] * self.w[:, 3]

    @property
    def std_e(self) -> np.ndarray:
        return np.sqrt(np.clip(self.var_e, 0.0, None))

    @property
    def std_m(self) -> np.ndarray:
        return np.sqrt(np.clip(self.var_m, 0.0, None))


def gamma_spectrum(params: ModelParams) -> np.ndarray:
    lm, p, s, phi = params.leverage, params.p, params.s, params.phi
    k = params.investment_drift
    return np.array([
        s + 1.0,
        k + 1.0,
        (s + 1.0) * (k + 1.0),
        lm * (lm + 4.0 * p - 2.0) + 1.0,
        (s + 1.0) ** 2 + phi**2,
    ])


def spectrum_is_degenerate(gamma: np.ndarray, eps: float = DEGENERACY_EPS) -> bool:
    if np.any(np.abs(gamma - 1.0) < eps):
        return True
    gaps = np.abs(gamma[:, None] - gamma[None, :])
    np.fill_diagonal(gaps, np.inf)
    return bool(np.any(gaps < eps))


def averaged_update_matrix(params: ModelParams) -> np.ndarray:
    """The averaged 5x5 update matrix, entry by entry."""
    lm, s, phi = params.leverage, params.s, params.phi
    k = params.investment_drift
    pi = params.mean_installment
    r2 = s * s + phi * phi
    return np.array([
        [1 + phi**2 + s**2 + lm**2 + 2 * k * (1 + s) + 2 * s, r2, 2 * pi * (1 + k + s), 2 * pi * s,
         2 * (s + k * s + r2)],
        [lm**2, 1.0, 2 * pi * k, -2 * pi, -2 * k],
        [0.0, 0.0, 1 + k + s, s, 0.0],
        [0.0, 0.0, -k, 1.0, 0.0],
        [-k * (1 + s) - lm**2, s, -pi * (1 + 2 * k + s), pi * (1 - s), 1 + k * (1 - s) + s],
    ])


def build_moment_system(params: ModelParams, init: InitialState) -> MomentSystem:
    pi2 = (1.0 - params.q) * params.pi_star**2
    pi1 = params.mean_installment
    n_mean = np.array([pi2, pi2, pi1, -pi1, -pi2])
    w0 = np.array([init.e0**2, init.m0**2, init.e0, init.m0, init.e0 * init.m0])
    gamma = gamma_spectrum(params)
    scale = max(init.e0 + init.m0, params.pi_star, 1.0)
    return MomentSystem(
        mbar=averaged_update_matrix(params),
        n_mean=n_mean,
        w0=w0,
        gamma=gamma,
        degenerate=spectrum_is_degenerate(gamma),
        scale=scale,
    )


def sample_update_maps(sigma, r, pi, params: ModelParams) -> np.ndarray:
    """Per-sample 5x5 update maps, shape (n, 5, 5), from squaring the step."""
    sigma, r, pi = (np.asarray(x, dtype=float) for x in (sigma, r, pi))
    a11 = 1.0 + params.leverage * sigma + r
    a12 = r
    a21 = -params.leverage * sigma
    a22 = np.ones_like(a11)
    zero = np.zeros_like(a11)
    rows = [
        [a11**2, a12**2, 2 * a11 * pi, 2 * a12 * pi, 2 * a11 * a12],
        [a21**2, a22**2, -2 * a21 * pi, -2 * a22 * pi, 2 * a21 * a22],
        [zero, zero, a11, a12, zero],
        [zero, zero, a21, a22, zero],
        [a11 * a21, a12 * a22, pi * (a21 - a11), pi * (a22 - a12), a11 * a22 + a12 * a21],
    ]
    return np.stack([np.stack(row, axis=-1) for row in rows], axis=-2)


def expected_update_map(params: ModelParams) -> np.ndarray:
    """Exact expectation of the per-sample map.

    sigma and pi are two-point laws; the map is quadratic in r, so a
    three-node Gauss-Hermite rule integrates the normal law exactly.
    """
    nodes, weights = hermegauss(3)
    weights = weights / weights.sum()
    total = np.zeros((5, 5))
    for sigma, ps in ((1.0, params.p), (-1.0, 1.0 - params.p)):
        for pi, pp in ((0.0, params.q), (params.pi_star, 1.0 - params.q)):
            r = params.s + params.phi * nodes
            maps = sample_update_maps(np.full(3, sigma), r, np.full(3, pi), params)
            total += ps * pp * np.tensordot(weights, maps, axes=1)
    return total


def sample_mean_update_map(params: ModelParams, n_samples: int, rng: np.random.Generator,
                           chunk: int = 100_000):
    """Monte Carlo mean of the update map and its element-wise standard error."""
    total = np.zeros((5, 5))
    total_sq = np.zeros((5, 5))
    done = 0
    while done < n_samples:
        size = min(chunk, n_samples - done)
        sigma = np.where(rng.random(size) < params.p, 1.0, -1.0)
        r = params.s + params.phi * rng.standard_normal(size)
        pi = np.where(rng.random(size) < params.q, 0.0, params.pi_star)
        maps = sample_update_maps(sigma, r, pi, params)
        total += maps.sum(axis=0)
        total_sq += (maps**2).sum(axis=0)
        done += size
    mean = total / n_samples
    var = np.clip(total_sq / n_samples - mean**2, 0.0, None) * n_samples / max(n_samples - 1, 1)
    return mean, np.sqrt(var / n_samples)


def validate_mbar(params: ModelParams, n_samples: int, rng: np.random.Generator,
                  mbar: np.ndarray | None = None) -> float:
    """Largest absolute gap between the sampled average map and ``mbar``."""
    if n_samples < 100_000:
        raise ValueError("validate_mbar needs at least 1e5 samples")
    if mbar is None:
        mbar = averaged_update_matrix(params)
    mean, _ = sample_mean_update_map(params, n_samples, rng)
    return float(np.max(np.abs(mean - mbar)))


def mbar_zscores(params: ModelParams, n_samples: int, rng: np.random.Generator,
                 mbar: np.ndarray | None = None) -> np.ndarray:
    """Element-wise |sampled - mbar| in standard errors.

    Entries with no sampling noise must match to round-off; they get an
    infinite score on any mismatch beyond 1e-12 relative.
    """
    if mbar is None:
        mbar = averaged_update_matrix(params)
    mean, se = sample_mean_update_map(params, n_samples, rng)
    dev = np.abs(mean - mbar)
    tol = 1e-12 * np.maximum(np.abs(mbar), 1.0)
    exact = se <= tol
    z = np.where(exact, np.where(dev <= tol, 0.0, np.inf), dev / np.where(exact, 1.0, se))
    return z


def recurrence_moments(system: MomentSystem, t_max: int) -> MomentSolution:
    if t_max < 0:
        raise ValueError("t_max must be non-negative")
    w = np.empty((t_max + 1, 5))
    w[0] = system.w0
    mbar, n = system.mbar, system.n_mean
    for t in range(1, t_max + 1):
        w[t] = mbar @ w[t - 1] + n
    return MomentSolution(t=np.arange(t_max + 1, dtype=float), w=w)


@dataclass(frozen=True)
class MomentClosedForm:
    """<W_t>_k = sum_j coefficients[k, j] gamma_j^t + constants[k].

    Row 0 holds the equity-square coefficients (G..K, L) and row 1 the
    mortgage-square ones (M..Q, R).  Float evaluation loses relative
    accuracy where the terms cancel: when the eigenvector matrix is badly
    conditioned, and near zero crossings of a component.  An mpmath copy of
    (gamma, coefficients, constants) is built on first need and the
    affected times are re-evaluated at that precision.
    """

    gamma: np.ndarray
    coefficients: np.ndarray
    constants: np.ndarray
    condition: float = 1.0
    precise: tuple | None = None
    builder: Callable[[], tuple] | None = field(default=None, repr=False, compare=False)

    def _precise_parts(self) -> tuple:
        if self.precise is None:
            object.__setattr__(self, "precise", self.builder())
        return self.precise

    def evaluate(self, t) -> np.ndarray:
        tt = np.atleast_1d(np.asarray(t, dtype=float))
        if self.precise is None and self.condition <= CONDITION_LIMIT:
            powers = np.power(self.gamma[None, :], tt[:, None])
            out = powers @ self.coefficients.T + self.constants[None, :]
            if self.builder is None:
                return out
            magnitude = np.abs(powers) @ np.abs(self.coefficients.T) + np.abs(self.constants[None, :])
            bound = ROUNDOFF * self.condition * magnitude
            risky = np.any(bound > ACCURACY_TARGET * (np.abs(out) + 1.0), axis=1)
            if risky.any():
                out[risky] = self._evaluate_precise(tt[risky])
            return out
        return self._evaluate_precise(tt)

    def _evaluate_precise(self, tt: np.ndarray) -> np.ndarray:
        if np.all(tt >= 0) and np.all(tt == np.floor(tt)):
            return self._evaluate_fixed_point(tt.astype(np.int64))
        gamma, coef, const, scale = self._precise_parts()
        out = np.empty((len(tt), 5))
        with mpmath.workdps(PRECISE_DPS):
            for i, ti in enumerate(tt):
                powers = [g ** mpmath.mpf(float(ti)) for g in gamma]
                for k in range(5):
                    out[i, k] = float(mpmath.fdot(coef[k], powers) + const[k]) * scale[k]
        return out

    def _evaluate_fixed_point(self, tt: np.ndarray) -> np.ndarray:
        """Integer times on Python integers scaled by 2**FIXED_BITS."""
        gamma, coef, const, scale = self._precise_parts()
        one = 1 << FIXED_BITS
        with mpmath.workdps(PRECISE_DPS):
            g_fx = [int(mpmath.nint(g * one)) for g in gamma]
            c_fx = [[int(mpmath.nint(c * one)) for c in row] for row in coef]
            k_fx = [int(mpmath.nint(c * one)) for c in const]
        out = np.empty((len(tt), 5))
        order = np.argsort(tt, kind="stable")
        powers, current = [one] * 5, 0
        for idx in order:
            target = int(tt[idx])
            while current < target:
                powers = [(p * g) >> FIXED_BITS for p, g in zip(powers, g_fx)]
                current += 1
            for k in range(5):
                total = sum(c * p for c, p in zip(c_fx[k], powers)) + (k_fx[k] << FIXED_BITS)
                out[idx, k] = (total / (one * one)) * scale[k]
        return out


def _scaling(system: MomentSystem) -> np.ndarray:
    s = system.scale
    return np.array([s * s, s * s, s, s, s * s])


def match_eigenvalues(numeric: np.ndarray, analytic: np.ndarray, eps: float = DEGENERACY_EPS):
    """Pair numeric eigenvalues with the analytic list by nearest value."""
    order = []
    free = list(range(len(numeric)))
    for g in analytic:
        best = min(free, key=lambda i: abs(numeric[i] - g))
        if abs(numeric[best] - g) > 1e-6 * max(1.0, abs(g)):
            raise ArithmeticError(f"no numerical eigenvalue near analytic {g!r}")
        others = [i for i in free if i != best and abs(numeric[i] - g) < eps]
        if others:
            raise DegenerateSpectrum(f"eigenvalue {g!r} is not isolated")
        order.append(best)
        free.remove(best)
    return np.array(order)


# block order: quadratic components first, then the two means
_QUAD = (0, 1, 4)
_LIN = (2, 3)
_ORDER = _QUAD + _LIN
# eigen-index of each block column: the quadratic block carries gamma_3..5
_EIGEN_ORDER = (2, 3, 4, 0, 1)
CONDITION_LIMIT = 100.0
PRECISE_DPS = 40
FIXED_BITS = 192
# float round-off per unit of summed term magnitude, and the relative
# accuracy the float path must reach before precise evaluation takes over
ROUNDOFF = 1e-14
ACCURACY_TARGET = 1e-10


def _det2(a):
    return a[0][0] * a[1][1] - a[0][1] * a[1][0]


def _det3(a):
    return (a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]))


def _adj3(a):
    """Adjugate, so that a @ adj = det(a) I."""
    c = [[None] * 3 for _ in range(3)]
    for i in range(3):
        for j in range(3):
            r = [x for x in range(3) if x != i]
            s = [x for x in range(3) if x != j]
            minor = a[r[0]][s[0]] * a[r[1]][s[1]] - a[r[0]][s[1]] * a[r[1]][s[0]]
            c[j][i] = minor if (i + j) % 2 == 0 else -minor
    return c


def _matvec(a, x):
    return [sum((a[i][j] * x[j] for j in range(len(x))), 0 * x[0]) for i in range(len(a))]


def _solve3(a, b):
    det = _det3(a)
    return [v / det for v in _matvec(_adj3(a), b)]


def _null3(a):
    """Null vector of a (numerically) singular 3x3 matrix.

    Cross products of row pairs all span the null space; the largest one
    is the best conditioned.
    """
    best, best_norm = None, -1.0
    for i, j in ((0, 1), (0, 2), (1, 2)):
        u, v = a[i], a[j]
        w = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]]
        norm = float(abs(w[0]) + abs(w[1]) + abs(w[2]))
        if norm > best_norm:
            best, best_norm = w, norm
    return [x / best_norm for x in best]


def _block_decomposition(mbar, n, w0, gamma, one):
    """Spectral coefficients using the block-triangular shape of Mbar.

    Entries are generic scalars (float or mpf); ``one`` fixes the type.
    Returns (coefficients, constants, V) in block order.
    """
    q = [[mbar[i][j] for j in _QUAD] for i in _QUAD]
    r = [[mbar[i][j] for j in _LIN] for i in _QUAD]
    a = [[mbar[i][j] for j in _LIN] for i in _LIN]
    nq = [n[i] for i in _QUAD]
    nl = [n[i] for i in _LIN]
    g_quad = [gamma[2], gamma[3], gamma[4]]
    g_lin = [gamma[0], gamma[1]]
    eye3 = [[one if i == j else 0 * one for j in range(3)] for i in range(3)]

    # second row of (A - g I) x = 0; a[1][0] = -k is nonzero off degeneracy
    u_cols = [[g - a[1][1], a[1][0]] for g in g_lin]
    cols = []
    for g in g_quad:
        cols.append(_null3([[q[i][j] - g * eye3[i][j] for j in range(3)] for i in range(3)]) + [0 * one, 0 * one])
    for g, u in zip(g_lin, u_cols):
        rhs = [-v for v in _matvec(r, u)]
        x = _solve3([[q[i][j] - g * eye3[i][j] for j in range(3)] for i in range(3)], rhs)
        cols.append(x + u)
    v = [[cols[j][i] for j in range(5)] for i in range(5)]

    # fixed point w* = (I - Mbar)^-1 n, solved block by block
    i_minus_a = [[(one if i == j else 0 * one) - a[i][j] for j in range(2)] for i in range(2)]
    det_a = _det2(i_minus_a)
    lin_star = [(i_minus_a[1][1] * nl[0] - i_minus_a[0][1] * nl[1]) / det_a,
                (i_minus_a[0][0] * nl[1] - i_minus_a[1][0] * nl[0]) / det_a]
    rq = _matvec(r, lin_star)
    quad_star = _solve3([[eye3[i][j] - q[i][j] for j in range(3)] for i in range(3)],
                        [nq[i] + rq[i] for i in range(3)])
    w_star = quad_star + lin_star

    # V is block upper triangular: [[X, Y], [0, U]]
    x_blk = [[v[i][j] for j in range(3)] for i in range(3)]
    y_blk = [[v[i][j] for j in range(3, 5)] for i in range(3)]
    u_blk = [[v[i][j] for j in range(3, 5)] for i in range(3, 5)]
    w0b = [w0[i] for i in _ORDER]
    dev = [w0b[i] - w_star[i] for i in range(5)]
    det_u = _det2(u_blk)
    z_lin = [(u_blk[1][1] * dev[3] - u_blk[0][1] * dev[4]) / det_u,
             (u_blk[0][0] * dev[4] - u_blk[1][0] * dev[3]) / det_u]
    y_z = _matvec(y_blk, z_lin)
    z_quad = _solve3(x_blk, [dev[i] - y_z[i] for i in range(3)])
    z = z_quad + z_lin
    coef = [[v[k][j] * z[j] for j in range(5)] for k in range(5)]
    return coef, w_star, v


def _char_poly_roots(block: list) -> list:
    """Real parts of the roots of det(B - g I) for a 2x2 or 3x3 block."""
    if len(block) == 2:
        coeffs = [1, -(block[0][0] + block[1][1]), _det2(block)]
    else:
        trace = block[0][0] + block[1][1] + block[2][2]
        minors = sum(block[i][i] * block[j][j] - block[i][j] * block[j][i]
                     for i, j in ((0, 1), (0, 2), (1, 2)))
        coeffs = [1, -trace, minors, -_det3(block)]
    return [mpmath.re(x) for x in mpmath.polyroots(coeffs, maxsteps=200, extraprec=2 * PRECISE_DPS)]


def _precise_eigenvalues(m_mp, gamma: np.ndarray) -> list:
    """Eigenvalues of both diagonal blocks at working precision, in the order of ``gamma``."""
    found = []
    for idx in (_QUAD, _LIN):
        found.extend(_char_poly_roots([[m_mp[i][j] for j in idx] for i in idx]))
    order = match_eigenvalues(np.array([float(x) for x in found]), gamma)
    return [found[i] for i in order]


def moment_closed_form(system: MomentSystem) -> MomentClosedForm:
    if system.degenerate:
        raise DegenerateSpectrum(f"gamma = {system.gamma}")
    d = _scaling(system)
    # diagonal similarity keeps the spectrum and brings all entries to O(1)
    scaled = system.mbar * d[None, :] / d[:, None]
    n = system.n_mean / d
    w0 = system.w0 / d
    vals = np.linalg.eigvals(scaled)
    gamma = np.asarray(vals[match_eigenvalues(vals.real, system.gamma)].real)

    coef_b, const_b, v = _block_decomposition(scaled.tolist(), n.tolist(), w0.tolist(), gamma.tolist(), 1.0)
    cond = float(np.linalg.cond(np.array(v)))
    inverse = np.argsort(_ORDER)
    columns = np.argsort(_EIGEN_ORDER)
    coef = np.array(coef_b)[np.ix_(inverse, columns)] * d[:, None]
    const = np.array(const_b)[inverse] * d

    def build() -> tuple:
        with mpmath.workdps(PRECISE_DPS):
            mp = mpmath.mpf
            d_mp = [mp(x) for x in d]
            m_mp = [[mp(system.mbar[i, j]) * d_mp[j] / d_mp[i] for j in range(5)] for i in range(5)]
            g_mp = _precise_eigenvalues(m_mp, gamma)
            n_mp = [mp(system.n_mean[i]) / d_mp[i] for i in range(5)]
            w_mp = [mp(system.w0[i]) / d_mp[i] for i in range(5)]
            coef_p, const_p, _ = _block_decomposition(m_mp, n_mp, w_mp, g_mp, mp(1))
            order = [int(i) for i in inverse]
            coef_p = [[coef_p[order[k]][int(j)] for j in columns] for k in range(5)]
            const_p = [const_p[order[k]] for k in range(5)]
        return g_mp, coef_p, const_p, d

    return MomentClosedForm(gamma=gamma, coefficients=coef, constants=const, condition=cond, builder=build)


def closed_form_moments(system: MomentSystem, t) -> MomentSolution:
    form = moment_closed_form(system)
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    return MomentSolution(t=tt, w=form.evaluate(tt))
