import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moserlab import forms as fm
from moserlab import mdspace as md
from moserlab import moser as mo
from moserlab import solver as so
from oracles import bombieri_brute

UNIT = dict(a=1.0, a_bar=1.0, C1=1.0, C2=1.0, C3=1.0, C_SI=1.0, C_SI0=1.0, C_wPI=1.0, nu=4.0,
            gamma=0.5, k=0.0, beta=1.0, eta=0.1, kappa=0.0, D_sum=1.0)
GEOM = mo.HarnackGeometry(0.0, (0.25, 0.5, 0.75, 1.0), 0.5)


def unit_ledger(**over):
    L = mo.ConstantLedger()
    for n, v in {**UNIT, **over}.items():
        L.hyp(n, v)
    return L


@pytest.fixture
def setting(grid8):
    space, fam = grid8
    return mo.Setting(fm.heat_form(space), fam, grid_size=17)


# ---------------------------------------------------------------- rules and ledger

def test_slab_length_example():
    L = mo.rule_suptime_L(a=1.0, gap=0.5, k=0.0, C1=1.0, C_SI=1.0, gamma=0.5, I_len=1.0)
    assert L == pytest.approx(1 / 2304, rel=1e-15)


def test_slab_length_single_slab_when_gamma_zero():
    assert mo.rule_suptime_L(a=1.0, gap=0.5, k=0.0, C1=1.0, C_SI=1.0, gamma=0.0, I_len=0.7) == 0.7


def test_moser_radii_and_theta():
    r = mo.moser_radii(0.75, 1.0, 40)
    steps = -np.diff(r)
    assert steps[0] == pytest.approx(0.125) and steps[1] == pytest.approx(0.0625)
    assert r[0] - r[-1] == pytest.approx(0.25, rel=1e-9)
    # theta = (nu + 2)/nu enters the level factors
    assert mo.moser_level_factor(1, 1.5, 1.0, 0.0) == pytest.approx(3 * 1.5**2)


def test_log_C_prime_tail():
    coarse = mo.rule_log_C_prime(4.0, 1.0, 2.0, tol=1e-3)
    fine = mo.rule_log_C_prime(4.0, 1.0, 2.0, tol=1e-12)
    assert abs(fine - coarse) <= 1e-3 * max(1.0, abs(fine))
    theta = 1.5
    # log(3 theta^(j(beta+1)) 4^(k(j+1))) written out, beta = 1, k = 2
    direct = math.fsum(theta**-j * (math.log(3) + 2 * j * math.log(theta) + 2 * (j + 1) * math.log(4))
                       for j in range(400))
    assert fine == pytest.approx(direct, rel=1e-9)


def test_supersolution_A0_bounded_as_p_to_zero():
    vals = [mo.rule_A0_free_sup(1.0, 0.5, 1.0, -p, 1.0, 1.0, 0.1, 1.0, 1.0, 1.0, 1.0)
            for p in (1e-1, 1e-3, 1e-6)]
    limit = mo.rule_A0_free_sup(1.0, 0.5, 1.0, 0.0, 1.0, 1.0, 0.1, 1.0, 1.0, 1.0, 1.0)
    assert vals[-1] == pytest.approx(limit, rel=1e-5) and max(vals) < 2 * limit


def test_ledger_replay_and_roundtrip():
    L = unit_ledger()
    L.derive("k1", "k1", k="k", nu="nu")
    L.derive("log_C_prime", "log_C_prime", nu="nu", beta="beta", k="k")
    assert L.replay() == {}
    M = mo.ConstantLedger.from_dict(L.to_dict())
    assert M.replay() == {} and M["log_C_prime"] == L["log_C_prime"]
    L.entries["k1"].value += 1
    assert "k1" in L.replay()


def test_ledger_unknown_constant():
    with pytest.raises(mo.LedgerError):
        unit_ledger()["nope"]


# ---------------------------------------------------------------- Bombieri

def test_bombieri_gaps():
    g = mo.bombieri_gaps(0.5, np.arange(3))
    assert g[0] == pytest.approx(0.25) and g[1] == pytest.approx(1 / 12)
    deltas = 1 - 0.5 / (1 + np.arange(4))
    assert np.allclose(np.diff(deltas), mo.bombieri_gaps(0.5, np.arange(3)))


def test_bombieri_geometric_case():
    res = mo.bombieri_constant(3.0, 0.0, 2.0, 0.0, 0.5, 0.1, 0.5)
    assert res.log_A3 == pytest.approx(math.log(4) + res.log_A, rel=1e-13)


def test_bombieri_brute_force_example():
    res = mo.bombieri_constant(2.0, 1.0, 2.0, 1.0, 0.5, 0.1, 0.5)
    ref = bombieri_brute(math.exp(res.log_A), 1.0, 1.0, 0.5, 0.5)
    assert res.log_A3 == pytest.approx(ref, rel=1e-12)


def test_bombieri_rejects_gamma_zero():
    with pytest.raises(mo.LedgerError):
        mo.bombieri_constant(2.0, 1.0, 2.0, 1.0, 0.0, 0.1, 0.5)


@given(st.floats(1.0, 50.0), st.floats(1.0, 50.0), st.floats(0.05, 0.95), st.floats(-5, 60))
def test_bombieri_binding_case_dominates(A1, A2, gamma, log_phi):
    res = mo.bombieri_constant(A1, 1.0, A2, 1.0, gamma, 0.1, 0.5, log_phi=log_phi)
    b = res.cases["bounds_at_phi"]
    assert all(b[res.cases["binding"]] >= v for v in b.values())


def test_upper_root():
    for m in (3.0, 10.0, 1e4):
        y = mo.upper_root(m)
        assert y == pytest.approx(m * math.log(y), rel=1e-12) and y > m


# ---------------------------------------------------------------- Harnack constant

def test_unit_harnack_constant_replays():
    L = unit_ledger()
    llc = mo.harnack_constant(L, GEOM, 1.0)
    # log C_PHI = A3 + A3' with both Bombieri sums >= 1, so C_PHI >= e^2 > 1
    assert math.isfinite(llc) and L["log_A3[early]"] >= 0 and L["log_A3[late]"] >= 0
    assert L.replay() == {}
    again = mo.ConstantLedger.from_dict(L.to_dict()).recompute()["loglog_C_PHI"]
    assert again == pytest.approx(llc, rel=1e-12)


def test_harnack_constant_names_missing_item():
    L = unit_ledger()
    del L.entries["C_wPI"]
    with pytest.raises(mo.LedgerError, match="C_wPI"):
        mo.harnack_constant(L, GEOM, 1.0)


def test_harnack_constant_monotone_in_C1():
    L = unit_ledger()
    mo.harnack_constant(L, GEOM, 1.0)
    base = L["loglog_C_PHI"]
    assert L.recompute({"C1": 2.0})["loglog_C_PHI"] > base


def test_monotonicity_audit_unit():
    L = unit_ledger()
    mo.harnack_constant(L, GEOM, 1.0)
    audit = mo.monotonicity_audit(L)
    assert set(audit) == {"C1", "C2", "C3", "C_SI", "C_SI0", "C_wPI", "1/a"}
    assert all(ok for _, _, ok in audit.values())


@settings(max_examples=25, deadline=None)
@given(st.dictionaries(st.sampled_from(["C1", "C2", "C3", "C_SI", "C_SI0", "C_wPI", "D_sum"]),
                       st.floats(0.0, 20.0), max_size=7))
def test_monotonicity_random_ledgers(over):
    L = unit_ledger(**over)
    mo.harnack_constant(L, GEOM, 1.0)
    assert all(ok for _, _, ok in mo.monotonicity_audit(L).values())


# ---------------------------------------------------------------- estimate checks, trivial cases

def _field(values, t=(0.0, 0.5, 1.0, 1.5)):
    return so.SpaceTimeField(np.array(t), np.tile(values, (len(t), 1)))


def test_cacciopoli_zero_field(setting):
    rep = mo.cacciopoli_subsol(_field(np.zeros(64)), setting, unit_ledger(k=2.0), 2.0, 0.5, 1.0)
    assert rep.lhs == 0 and rep.rhs == 0 and rep.passed


def test_cacciopoli_rejects_excluded_band(setting):
    with pytest.raises(mo.LedgerError):
        mo.cacciopoli_subsol(_field(np.ones(64)), setting, unit_ledger(), 1.05, 0.5, 1.0)
    with pytest.raises(mo.LedgerError):
        mo.cacciopoli_supsol(_field(np.ones(64)), setting, unit_ledger(), 0.95, 1e-3, 0.5, 1.0)


def test_suptime_zero_field(setting):
    res = mo.suptime_energy(_field(np.zeros(64)), setting, unit_ledger(k=2.0), 0.5, 1.0)
    assert res.sup_l2 == 0 and res.energy == 0 and res.rhs == 0


def test_mve_supsol_constant(setting):
    rep, trace = mo.mve_supsol(_field(np.full(64, 2.0)), setting, unit_ledger(k=2.0), -1.0, 1e-3, 0.5, 1.0)
    assert rep.passed and all(lv.bound_ok is not False for lv in trace)


def test_log_lemma_constant_field(setting):
    reps, c = mo.log_lemma(_field(np.full(64, 3.0)), setting, unit_ledger(k=2.0), 1e-3, 0.5,
                           [0.5, 1, 2, 4], mo.HarnackGeometry(0.25, (0.25, 0.5, 0.75, 1.0), 0.5), "+")
    assert c == pytest.approx(math.log(3.0 + 1e-3)) and all(r.lhs == 0 for r in reps)


def test_harnack_constant_field(grid8):
    _, fam = grid8
    L = unit_ledger()
    mo.harnack_constant(L, GEOM, 1.0)
    res = mo.harnack_verify(_field(np.full(64, 2.0), t=np.linspace(0, 1, 5)), fam, L, GEOM, 0.5)
    assert res.ratio == 1.0 and res.passed


def test_harnack_uncertified_has_no_verdict(grid8):
    _, fam = grid8
    L = unit_ledger()
    mo.harnack_constant(L, GEOM, 1.0)
    res = mo.harnack_verify(_field(np.full(64, 2.0), t=np.linspace(0, 1, 5)), fam, L, GEOM, 0.5,
                            unverified=("H2",))
    assert res.passed is None and "H2" in res.report.status


def test_maximum_principle_nonpositive_start(grid8, rng):
    space, fam = grid8
    U = fam.ball(1.0)
    u = so.integrate(fm.heat_form(space), -rng.uniform(0, 1, 64), (0, 1),
                     boundary="zero-outside-U", interior=U)
    L = unit_ledger(k=2.0)
    rep = mo.maximum_principle_check(u, L, 0.0, ((0.0, 1.0), U), "zero-outside-U", 0, 0, 0, 0,
                                     float(space.mu[U].sum()))
    assert rep.lhs <= 0 and rep.rhs == 0 and rep.passed
    with pytest.raises(mo.LedgerError):
        mo.maximum_principle_check(u, L, 0.0, ((0.0, 1.0), U), "full-space", 0, 0, 0, 0, 1.0)


def test_kappa_shift_formula():
    assert mo.rule_kappa_shift(b_norm=0.5, d_norm=1.5, M=-1.0, w1_norm=0.25, w2_norm=0.5) == 2.75


def test_pointwise_trivial_and_monotone(grid8):
    U = _field(np.full(64, 2.0), t=np.linspace(0, 1, 11))
    rep = mo.pointwise_estimate(U, [0, 0], (0.5, 0.5 + 1e-9), 1.0, 3.0, 1.5, 0.0)
    assert rep.inputs["raw_lhs"] == pytest.approx(0.0, abs=1e-12) and rep.passed
    b = [mo.pointwise_estimate(U, [0, 1], (0.5, 1.0), 1.0, 3.0, 1.5, d).inputs["bracket"] for d in (0, 1, 2)]
    assert b[0] < b[1] < b[2]
    with pytest.raises(mo.LedgerError):
        mo.pointwise_estimate(U, [0, 1], (0.5, 1.0), 1.0, 3.0, 1.5, 1.0, certified_links=[False])
