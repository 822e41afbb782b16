"""Lorentz quasi-norms of simple functions and the mixed space-time norm.

Every function on a finite measure space is simple, so the defining
integral of the (r, r1) quasi-norm collapses to a finite sum over the
distinct levels of |f|.  Sums use math.fsum so equalities can be asserted
at 1e-12 on large graphs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

INF = math.inf


def _levels(f, mu):
    """Distinct positive levels of |f| (descending) with cumulative measures."""
    a = np.abs(np.asarray(f, dtype=float)).ravel()
    mu = np.broadcast_to(np.asarray(mu, dtype=float), a.shape).ravel()
    keep = (a > 0) & (mu > 0)  # null nodes never change the distribution function
    a, w = a[keep], mu[keep]
    if a.size == 0:
        return np.zeros(0), np.zeros(0)
    order = np.argsort(-a, kind="stable")
    a, w = a[order], w[order]
    v, start = np.unique(-a, return_index=True)
    v = -v
    seg = np.add.reduceat(w, start)
    return v, np.cumsum(seg)


def distribution(f, mu, s: float) -> float:
    """mu(|f| >= s)."""
    a = np.abs(np.asarray(f, dtype=float))
    return math.fsum(np.broadcast_to(mu, a.shape)[a >= s])


def lorentz_norm(f, mu, r: float, r1: float) -> float:
    """Exact (r, r1) Lorentz quasi-norm of f with respect to node weights mu."""
    if not r > 0 or not r1 > 0:
        raise ValueError("Lorentz exponents must be positive")
    v, M = _levels(f, mu)
    if v.size == 0:
        return 0.0
    # homogeneity: work with levels in (0, 1] so high powers neither overflow nor underflow
    top = v[0]
    scaled = v / top
    if math.isinf(r1):
        return top * float(np.max(scaled * M ** (1.0 / r)))
    if r1 == r:
        # level-wise L^r mass, avoids the telescoping cancellation
        seg = np.diff(np.concatenate(([0.0], M)))
        return top * math.fsum(seg * scaled**r) ** (1.0 / r)
    # log-sum-exp over M^(r1/r) (v^r1 - next^r1): large r1/r overflows the direct powers
    # logs of the unscaled levels; log1p of the exact difference for close neighbours
    log_v = np.log(v)
    ratio = v[1:] / v[:-1]
    close = ratio > 0.5
    log_step = log_v[1:] - log_v[:-1]
    log_step[close] = np.log1p((v[1:][close] - v[:-1][close]) / v[:-1][close])
    lv = log_v - log_v[0]
    # log(1 - (next/v)^r1) via expm1, accurate for nearly equal neighbouring levels
    gaps = np.append(-np.expm1(r1 * log_step), 1.0)
    logs = (r1 / r) * np.log(M) + r1 * lv + np.log(gaps)
    hi = float(np.max(logs))
    return top * math.exp((hi + math.log(math.fsum(np.exp(logs - hi)))) / r1)


def quasi_triangle_constant(r: float, r1: float) -> float:
    inv1 = 0.0 if math.isinf(r1) else 1.0 / r1
    return 2.0 ** (1.0 / r + max(0.0, inv1 - 1.0) + 1.0)


@dataclass(frozen=True)
class LawCheck:
    holds: bool
    lhs: float
    rhs: float


def check_power_law(f, mu, sigma: float, r: float, r1: float, rtol: float = 1e-12) -> LawCheck:
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    f = np.abs(np.asarray(f, dtype=float))
    lhs = lorentz_norm(f**sigma, mu, r, r1) ** (1.0 / sigma)
    rhs = lorentz_norm(f, mu, sigma * r, sigma * r1)
    return LawCheck(bool(abs(lhs - rhs) <= rtol * max(abs(rhs), 1e-300)), lhs, rhs)


def check_monotonicity(f, mu, r: float, r1: float, r2: float) -> LawCheck:
    if r1 > r2:
        raise ValueError("need r1 <= r2")
    lhs = lorentz_norm(f, mu, r, r2)
    rhs = 2.0 ** (2.0 / r1) * lorentz_norm(f, mu, r, r1)
    return LawCheck(bool(lhs <= rhs * (1 + 1e-12)), lhs, rhs)


def _inv(x: float) -> float:
    return 0.0 if math.isinf(x) else 1.0 / x


@dataclass(frozen=True)
class HoelderCheck:
    holds: bool  # with factor 1
    lhs: float
    rhs: float
    interpolation: LawCheck | None
    factor: float = 1.0  # constant provable for this normalization
    holds_with_factor: bool = True


def _xlogx_inv(x: float, w: float = 1.0) -> float:
    """w log(x) / x, zero at x = inf."""
    return 0.0 if math.isinf(x) else w * math.log(x) / x


def hoelder_factor(r, r1, a, a1, b, b1) -> float:
    """2^(1/r) (r1/r)^(1/r1) (a/a1)^(1/a1) (b/b1)^(1/b1).

    The layer-cake norm is (r1/r)^(1/r1) times the rearrangement form, for
    which (fg)*(t) <= f*(t/2) g*(t/2) and Hoelder in dt/t give 2^(1/r).
    """
    log_k = (math.log(2.0) * _inv(r) + _xlogx_inv(r1) - math.log(r) * _inv(r1)
             - _xlogx_inv(a1) + math.log(a) * _inv(a1) - _xlogx_inv(b1) + math.log(b) * _inv(b1))
    return math.exp(log_k)


def interpolation_factor(r1, a1, b1, sigma) -> float:
    """r1^(1/r1) / (a1^(sigma/a1) b1^((1-sigma)/b1)), from Hoelder in ds/s on the layer cake."""
    return math.exp(_xlogx_inv(r1) - _xlogx_inv(a1, sigma) - _xlogx_inv(b1, 1 - sigma))


def check_lorentz_hoelder(f, g, mu, split, r: float, r1: float, sigma: float | None = None,
                          rtol: float = 1e-12) -> HoelderCheck:
    """Product bound for fg and, given sigma, the interpolation bound for f.

    split = (a, a1, b, b1) with 1/r = 1/a + 1/b and 1/r1 = 1/a1 + 1/b1.  For
    the interpolation variant sigma weights the two exponent pairs:
    1/r = sigma/a + (1-sigma)/b, and likewise for the second indices.
    """
    a, a1, b, b1 = split
    if sigma is None:
        if abs(_inv(r) - _inv(a) - _inv(b)) > 1e-12 or abs(_inv(r1) - _inv(a1) - _inv(b1)) > 1e-12:
            raise ValueError("exponent split does not satisfy the Hoelder relations")
    f = np.asarray(f, dtype=float)
    if sigma is not None:
        if not 0 <= sigma <= 1:
            raise ValueError("sigma must lie in [0, 1]")
        if (abs(_inv(r) - sigma * _inv(a) - (1 - sigma) * _inv(b)) > 1e-12
                or abs(_inv(r1) - sigma * _inv(a1) - (1 - sigma) * _inv(b1)) > 1e-12):
            raise ValueError("exponents do not interpolate with this sigma")
        il = lorentz_norm(f, mu, r, r1)
        ir = lorentz_norm(f, mu, a, a1) ** sigma * lorentz_norm(f, mu, b, b1) ** (1 - sigma)
        interp = LawCheck(bool(il <= ir * (1 + rtol)), il, ir)
        k = interpolation_factor(r1, a1, b1, sigma)
        return HoelderCheck(interp.holds, il, ir, interp, k, bool(il <= k * ir * (1 + rtol)))
    g = np.asarray(g, dtype=float)
    lhs = lorentz_norm(f * g, mu, r, r1)
    rhs = lorentz_norm(f, mu, a, a1) * lorentz_norm(g, mu, b, b1)
    k = hoelder_factor(r, r1, a, a1, b, b1)
    return HoelderCheck(bool(lhs <= rhs * (1 + rtol)), lhs, rhs, None, k,
                        bool(lhs <= k * rhs * (1 + rtol)))


@dataclass(frozen=True)
class ExponentPair:
    r: float
    q: float
    gamma: float
    nu: float

    @property
    def r_prime(self) -> float:
        return INF if self.r == 1 else self.r / (self.r - 1)

    @property
    def q_prime(self) -> float:
        if math.isinf(self.q):
            return 1.0
        return INF if self.q == 1 else self.q / (self.q - 1)

    @property
    def r_dprime(self) -> float:
        d = 0.5 - _inv(self.r)
        return INF if d == 0 else 1.0 / d

    def slack(self) -> float:
        return 1.0 - _inv(self.q) - self.nu / (2.0 * self.r)

    def admissible(self, tol: float = 1e-12) -> bool:
        return self.slack() >= self.gamma - tol and self.r >= 1.0 / (1.0 - self.gamma) - tol


def boundary_pairs(gamma: float, nu: float, grid_size: int = 65, r_max: float | None = None):
    """Exponent pairs on the tight curve 1/q = 1 - gamma - nu/(2r), plus the r -> inf limit.

    Returned as arrays (r_prime, q_prime).  The smallest r on the curve is
    nu / (2(1-gamma)) where q becomes infinite; below it the curve leaves
    the admissible region.
    """
    if not 0 <= gamma < 1 or not nu > 2:
        raise ValueError("need gamma in [0,1) and nu > 2")
    r_min = max(nu / (2.0 * (1.0 - gamma)), 1.0 / (1.0 - gamma))
    r_max = 64.0 / (1.0 - gamma) if r_max is None else r_max
    # union of the grids of size n, n//2, n//4, ... so doubling n only adds points
    sizes, m = [], max(int(grid_size), 1)
    while m >= 1:
        sizes.append(m)
        m //= 2
    frac = np.concatenate([np.linspace(0.0, 1.0, m) if m > 1 else [0.0] for m in sizes])
    lo, hi = np.log(r_min), np.log(max(r_max, r_min))
    r = np.exp(lo + frac * (hi - lo))
    inv_q = np.clip(1.0 - gamma - nu / (2.0 * r), 0.0, 1.0)
    rp = r / (r - 1.0)
    qp = 1.0 / (1.0 - inv_q)
    # r -> inf: r' = 1, 1/q -> 1 - gamma, q' = 1/gamma (infinite when gamma = 0)
    rp = np.append(rp, 1.0)
    qp = np.append(qp, INF if gamma == 0 else 1.0 / gamma)
    r = np.append(r, INF)
    return r, rp, qp


def trapezoid_weights(times) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    if t.size == 1:
        return np.zeros(1)
    w = np.zeros_like(t)
    dt = np.diff(t)
    w[:-1] += dt / 2
    w[1:] += dt / 2
    return w


def _slice_norms(values, mu, s: float, s1: float) -> np.ndarray:
    return np.array([lorentz_norm(row, mu, s, s1) for row in values])


def _lorentz_rows_vectorized(values: np.ndarray, mu: np.ndarray, exps: np.ndarray) -> np.ndarray:
    """||u(t)||_{e, 2} for every time row and every exponent e; shape (len(exps), T)."""
    T, n = values.shape
    out = np.zeros((exps.size, T))
    for ti in range(T):
        v, M = _levels(values[ti], mu)
        if v.size == 0:
            continue
        nxt = np.append(v[1:], 0.0)
        dv = v**2 - nxt**2
        out[:, ti] = np.sqrt(np.sum(M[None, :] ** (2.0 / exps[:, None]) * dv[None, :], axis=1))
    return out


@dataclass(frozen=True)
class TripleNorm:
    value: float
    r: float
    q_prime: float
    r_prime: float
    per_pair: np.ndarray  # (r', q', value)


def triple_norm(values, times, mu, gamma: float, nu: float, mask=None, grid_size: int = 65,
                r_max: float | None = None) -> TripleNorm:
    """Sampled sup over the tight exponent curve of (int_I ||u||_{2r',2}^{2q'} dt)^{1/(2q')}."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    mu = np.asarray(mu, dtype=float)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        values, mu = values[:, mask], mu[mask]
    if values.shape[1] == 0 or values.shape[0] == 0:
        raise ValueError("empty space-time domain")
    r, rp, qp = boundary_pairs(gamma, nu, grid_size, r_max)
    norms = _lorentz_rows_vectorized(values, mu, 2.0 * rp)
    wt = trapezoid_weights(times)
    vals = np.empty(rp.size)
    for i in range(rp.size):
        nrm = norms[i]
        if math.isinf(qp[i]):
            vals[i] = float(np.max(nrm))
            continue
        top = float(np.max(nrm))
        if top == 0:
            vals[i] = 0.0
            continue
        # factor out the max to keep high powers finite
        integral = math.fsum(wt * (nrm / top) ** (2 * qp[i]))
        vals[i] = top * integral ** (1.0 / (2 * qp[i]))
    j = int(np.argmax(vals))
    return TripleNorm(float(vals[j]), float(r[j]), float(qp[j]), float(rp[j]),
                      np.column_stack([rp, qp, vals]))


@dataclass(frozen=True)
class InterpolationBound:
    lhs: float
    rhs: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs * (1 + 1e-12) + 1e-300


def space_time_interpolation(values, times, mu, pair: ExponentPair, mask=None) -> InterpolationBound:
    """Both sides of the interpolation bound for ||w||_{L^{2q'}(I -> L^{2r',2})}^2."""
    if not pair.admissible():
        raise ValueError("exponent pair is not admissible")
    values = np.atleast_2d(np.asarray(values, dtype=float))
    mu = np.asarray(mu, dtype=float)
    if mask is not None:
        values, mu = values[:, mask], mu[np.asarray(mask, dtype=bool)]
    nu, r = pair.nu, pair.r
    wt = trapezoid_weights(times)
    span = float(np.asarray(times)[-1] - np.asarray(times)[0])
    qp = pair.q_prime
    n2 = _slice_norms(values, mu, 2 * pair.r_prime, 2)
    if math.isinf(qp):
        lhs = float(np.max(n2)) ** 2
    else:
        lhs = math.fsum(wt * n2 ** (2 * qp)) ** (1.0 / qp)
    sob = _slice_norms(values, mu, 2 * nu / (nu - 2), 2)
    l2 = np.array([math.fsum(mu * row**2) for row in values])
    gamma = pair.slack()
    theta = nu / (2 * r)
    rhs = span**gamma * math.fsum(wt * sob**2) ** theta * float(np.max(l2)) ** (1 - theta)
    return InterpolationBound(lhs, rhs)
