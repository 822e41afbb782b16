"""Independent reference computations used only by the tests."""

import math

import numpy as np
from scipy import integrate, linalg


def dist_fn(f, mu, s):
    """mu(|f| >= s) by direct scan."""
    a = np.abs(np.asarray(f, dtype=float))
    return float(np.sum(np.asarray(mu, dtype=float)[a >= s]))


def lorentz_by_quadrature(f, mu, r, r1):
    """Adaptive quadrature of the defining layer-cake integral.

    The distribution function is constant between consecutive levels, so
    the integral is split at every level and each piece handed to quad.
    """
    a = np.abs(np.asarray(f, dtype=float))
    levels = np.unique(np.concatenate(([0.0], a)))
    if math.isinf(r1):
        # sup of s * mu(|f| >= s)^(1/r): on each piece the distribution is
        # constant and s is largest at the right end
        return max(hi * dist_fn(a, mu, hi) ** (1 / r) for hi in levels[1:]) if levels.size > 1 else 0.0
    total = 0.0
    for lo, hi in zip(levels[:-1], levels[1:]):
        m = dist_fn(a, mu, hi)
        val, _ = integrate.quad(lambda s: (s**r * m) ** (r1 / r) / s, lo, hi,
                                epsabs=0.0, epsrel=1e-13, limit=200)
        total += val
    return (r1 * total) ** (1 / r1)


def heat_expm(space, u0, times):
    """Dense matrix-exponential solution of mu du/dt = -L u."""
    L = space.laplacian().toarray()
    A = -L / space.mu[:, None]
    return np.array([linalg.expm(A * t) @ u0 for t in times])


def bombieri_brute(A, k1, k2, gamma, delta_star, n_terms=1_000_000):
    """Direct sum of (3/4)^j A / gap_j^(k2 + 2 k1/gamma), gap_j = (1-d*)/((1+j)(2+j))."""
    j = np.arange(n_terms, dtype=float)
    gap = (1 - delta_star) / ((1 + j) * (2 + j))
    e = k2 + 2 * k1 / gamma
    logs = j * math.log(0.75) - e * np.log(gap)
    top = logs.max()
    return math.log(A) + top + math.log(math.fsum(np.exp(logs - top)))
