import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from moserlab import lorentz as lz
from oracles import lorentz_by_quadrature

# magnitudes are 0 or >= 1e-6 so every power taken below stays a normal double
entries = st.one_of(st.just(0.0), st.floats(1e-6, 5.0), st.floats(-5.0, -1e-6))
fields = arrays(np.float64, st.integers(1, 40), elements=entries)
exps = st.sampled_from([0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 7.5])


def _mu(n, seed=0):
    return np.random.default_rng(seed).uniform(0.2, 2.0, n)


@given(fields, exps)
def test_diagonal_index_is_plain_lp(f, r):
    mu = _mu(f.size)
    direct = math.fsum(mu * np.abs(f) ** r) ** (1 / r)
    assert lz.lorentz_norm(f, mu, r, r) == pytest.approx(direct, rel=1e-12, abs=1e-300)


@given(st.integers(1, 30), exps, st.sampled_from([0.5, 1.0, 2.0, 5.0, math.inf]))
def test_indicator_norm_is_measure_power(n, r, r1):
    mu = _mu(2 * n)
    ind = np.zeros(2 * n)
    ind[:n] = 1.0
    assert lz.lorentz_norm(ind, mu, r, r1) == pytest.approx(mu[:n].sum() ** (1 / r), rel=1e-12)


def test_closed_form_matches_quadrature(rng):
    for _ in range(50):
        n = rng.integers(2, 60)
        f = rng.choice(rng.normal(size=8), n) * rng.integers(0, 2, n)
        mu = rng.uniform(0.1, 3, n)
        got = lz.lorentz_norm(f, mu, 3, 2)
        ref = lorentz_by_quadrature(f, mu, 3, 2)
        assert got == pytest.approx(ref, rel=1e-10)


@given(fields, exps, st.sampled_from([1.0, 2.0, math.inf]), st.floats(-50, 50))
def test_absolute_homogeneity(f, r, r1, lam):
    mu = _mu(f.size)
    assert lz.lorentz_norm(lam * f, mu, r, r1) == pytest.approx(abs(lam) * lz.lorentz_norm(f, mu, r, r1),
                                                                rel=1e-12, abs=1e-300)


@given(fields, fields, exps, st.sampled_from([0.5, 1.0, 2.0, math.inf]))
def test_quasi_triangle_constant(f, g, r, r1):
    n = min(f.size, g.size)
    f, g, mu = f[:n], g[:n], _mu(n)
    K = lz.quasi_triangle_constant(r, r1)
    lhs = lz.lorentz_norm(f + g, mu, r, r1)
    assert lhs <= K * (lz.lorentz_norm(f, mu, r, r1) + lz.lorentz_norm(g, mu, r, r1)) * (1 + 1e-12) + 1e-300


def test_rejects_nonpositive_exponent():
    with pytest.raises(ValueError):
        lz.lorentz_norm(np.ones(3), np.ones(3), 0.0, 1.0)


@given(fields, st.floats(0.1, 4.0), exps, st.sampled_from([1.0, 2.0, 3.0, math.inf]))
def test_power_law(f, sigma, r, r1):
    assert lz.check_power_law(f, _mu(f.size), sigma, r, r1).holds


def test_power_law_indicator():
    mu = np.array([0.5, 0.25, 1.0])
    f = np.array([1.0, 1.0, 0.0])
    chk = lz.check_power_law(f, mu, 2.0, 2.0, 2.0)
    assert chk.lhs == pytest.approx(0.75**0.25, rel=1e-14) and chk.holds


@given(fields, exps, st.floats(0.2, 5.0), st.floats(0.0, 5.0))
def test_monotonicity_in_second_index(f, r, r1, extra):
    assert lz.check_monotonicity(f, _mu(f.size), r, r1, r1 + extra).holds
    assert lz.check_monotonicity(f, _mu(f.size), r, r1, math.inf).holds


def test_monotonicity_rejects_reversed_indices():
    with pytest.raises(ValueError):
        lz.check_monotonicity(np.ones(2), np.ones(2), 2, 3, 1)


def test_monotonicity_two_level():
    f, mu = np.array([2.0, 1.0]), np.array([1.0, 1.0])
    chk = lz.check_monotonicity(f, mu, 2, 1, math.inf)
    # weak norm: max(2 * 1, 1 * sqrt 2); (2,1) norm: 1 * (2 - 1) + sqrt 2 * (1 - 0)
    assert chk.lhs == pytest.approx(2.0, rel=1e-14)
    assert chk.rhs == pytest.approx(4.0 * (1 + math.sqrt(2)), rel=1e-14)
    assert chk.holds


@given(fields, fields)
def test_hoelder_equal_split(f, g):
    n = min(f.size, g.size)
    chk = lz.check_lorentz_hoelder(f[:n], g[:n], _mu(n), (4, 4, 4, 4), 2, 2)
    assert chk.holds


@given(fields, st.floats(0.0, 1.0))
def test_interpolation(f, sigma):
    a, b = 2.0, 6.0
    r = 1 / (sigma / a + (1 - sigma) / b)
    chk = lz.check_lorentz_hoelder(f, None, _mu(f.size), (a, a, b, b), r, r, sigma=sigma)
    assert chk.holds


def test_hoelder_indicator_algebra():
    mu = np.array([0.3, 0.4, 2.0])
    f = np.array([1.0, 1.0, 0.0])
    chk = lz.check_lorentz_hoelder(f, f, mu, (4, 2, 4, 2), 2, 1)
    assert chk.lhs == pytest.approx(0.7**0.5) and chk.rhs == pytest.approx(0.7**0.5)


def test_hoelder_rejects_bad_split():
    with pytest.raises(ValueError):
        lz.check_lorentz_hoelder(np.ones(2), np.ones(2), np.ones(2), (3, 3, 3, 3), 2, 2)


# ---------------------------------------------------------------- exponent pairs and |||.|||

@given(st.floats(0.0, 0.9), st.floats(2.1, 8.0))
def test_boundary_pairs_are_tight_and_admissible(gamma, nu):
    r, rp, qp = lz.boundary_pairs(gamma, nu, 17)
    for ri, qpi in zip(r[:-1], qp[:-1]):
        q = 1 / (1 - 1 / qpi) if qpi > 1 else math.inf
        pair = lz.ExponentPair(ri, q, gamma, nu)
        assert pair.admissible(1e-9)
        if not math.isinf(q):
            assert pair.slack() == pytest.approx(gamma, abs=1e-9)


def test_conjugates():
    pair = lz.ExponentPair(4.0, 4.0, 0.25, 4.0)
    assert pair.r_prime == pytest.approx(4 / 3)
    assert pair.r_dprime == pytest.approx(4.0)
    assert pair.slack() == pytest.approx(0.25)


def test_triple_norm_zero():
    assert lz.triple_norm(np.zeros((5, 4)), np.linspace(0, 1, 5), np.ones(4), 0.3, 4.0).value == 0.0


def test_triple_norm_constant_against_fine_grid():
    times = np.linspace(0, 0.5, 9)
    mu = np.full(4, 0.5)  # total measure 2
    tn = lz.triple_norm(np.ones((9, 4)), times, mu, 0.25, 3.0)
    # log of each candidate is linear in 1/r, so the sup sits at an end of the curve
    gamma, nu = 0.25, 3.0
    inv_r = np.linspace(0, 1 / max(nu / (2 * (1 - gamma)), 1 / (1 - gamma)), 100001)
    inv_qp = gamma + nu / 2 * inv_r
    vals = 0.5 ** (inv_qp / 2) * 2.0 ** ((1 - inv_r) / 2)
    assert tn.value == pytest.approx(vals.max(), rel=1e-6)


@given(st.integers(2, 40))
def test_triple_norm_refinement_never_decreases(n):
    rng = np.random.default_rng(n)
    vals, times, mu = rng.uniform(0, 2, (6, 9)), np.linspace(0, 1, 6), rng.uniform(0.5, 1.5, 9)
    a = lz.triple_norm(vals, times, mu, 0.2, 4.0, grid_size=n).value
    b = lz.triple_norm(vals, times, mu, 0.2, 4.0, grid_size=2 * n).value
    assert b >= a * (1 - 1e-14)


def test_triple_norm_domain_monotone(rng):
    vals, times, mu = rng.uniform(0, 2, (6, 9)), np.linspace(0, 1, 6), rng.uniform(0.5, 1.5, 9)
    small = np.zeros(9, bool)
    small[:5] = True
    assert (lz.triple_norm(vals, times, mu, 0.2, 4.0, mask=small).value
            <= lz.triple_norm(vals, times, mu, 0.2, 4.0).value * (1 + 1e-14))


def test_triple_norm_rejects_empty():
    with pytest.raises(ValueError):
        lz.triple_norm(np.ones((3, 2)), [0, 1, 2], np.ones(2), 0.2, 4.0, mask=np.zeros(2, bool))


def test_space_time_interpolation_zero_and_unit():
    pair = lz.ExponentPair(4.0, 4.0, 0.25, 4.0)
    z = lz.space_time_interpolation(np.zeros((4, 3)), np.linspace(0, 1, 4), np.ones(3) / 3, pair)
    assert z.lhs == 0 and z.rhs == 0 and z.holds
    one = lz.space_time_interpolation(np.ones((4, 3)), np.linspace(0, 1, 4), np.ones(3) / 3, pair)
    assert one.lhs == pytest.approx(1.0, rel=1e-12) and one.rhs == pytest.approx(1.0, rel=1e-12)


def test_space_time_interpolation_random(rng):
    pair = lz.ExponentPair(4.0, 4.0, 0.25, 4.0)
    for _ in range(20):
        w = rng.normal(size=(16, 16))
        assert lz.space_time_interpolation(w, np.linspace(0, 1, 16), np.ones(16), pair).holds


def test_space_time_interpolation_rejects_inadmissible():
    with pytest.raises(ValueError):
        lz.space_time_interpolation(np.ones((2, 2)), [0, 1], np.ones(2), lz.ExponentPair(1.5, 1.5, 0.25, 4.0))


# ---------------------------------------------------------------- constants for general second indices

def test_interpolation_factor_one_fails_off_diagonal():
    # found by random search and confirmed against the quadrature oracle
    f = np.array([2.425, 2.778, 0.872, 1.663, 1.384, 2.8])
    mu = np.array([0.531, 2.921, 2.681, 2.485, 1.492, 0.774])
    a, a1, b, b1, sigma = 0.804, 5.108, 5.99, 0.713, 0.719
    r = 1 / (sigma / a + (1 - sigma) / b)
    r1 = 1 / (sigma / a1 + (1 - sigma) / b1)
    chk = lz.check_lorentz_hoelder(f, None, mu, (a, a1, b, b1), r, r1, sigma=sigma)
    ref = lorentz_by_quadrature(f, mu, r, r1) / (lorentz_by_quadrature(f, mu, a, a1) ** sigma
                                                 * lorentz_by_quadrature(f, mu, b, b1) ** (1 - sigma))
    assert chk.lhs / chk.rhs == pytest.approx(ref, rel=1e-10) and ref > 1.1
    assert not chk.holds and chk.holds_with_factor


@given(st.floats(0.2, 10.0), st.floats(0.2, 10.0), st.floats(0.0, 1.0))
def test_interpolation_factor_at_least_one(a1, b1, sigma):
    r1 = 1 / (sigma / a1 + (1 - sigma) / b1)
    assert lz.interpolation_factor(r1, a1, b1, sigma) >= 1 - 1e-12
    assert lz.interpolation_factor(a1, a1, a1, sigma) == pytest.approx(1.0, rel=1e-12)


def test_hoelder_factor_weak_times_strong():
    # (r, inf) x (r'', 2) -> (2, 2): 2^(1/2) (r''/2)^(1/2)
    r = 4.0
    rdd = 1 / (0.5 - 1 / r)
    assert lz.hoelder_factor(2, 2, r, math.inf, rdd, 2) == pytest.approx(math.sqrt(rdd), rel=1e-14)


@given(fields, fields, st.floats(0.5, 8), st.floats(0.5, 8),
       st.sampled_from([0.5, 1.0, 3.0, math.inf]), st.sampled_from([0.5, 2.0, 6.0, math.inf]))
def test_hoelder_with_derived_factor(f, g, a, b, a1, b1):
    n = min(f.size, g.size)
    r = 1 / (1 / a + 1 / b)
    inv1 = (0 if math.isinf(a1) else 1 / a1) + (0 if math.isinf(b1) else 1 / b1)
    r1 = math.inf if inv1 == 0 else 1 / inv1
    assert lz.check_lorentz_hoelder(f[:n], g[:n], _mu(n), (a, a1, b, b1), r, r1).holds_with_factor
