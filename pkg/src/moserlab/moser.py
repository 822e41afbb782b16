"""Constant tracking for the Moser iteration and the Harnack chain.

Every derived constant is produced by a named rule function and stored in a
ConstantLedger together with its inputs, so a ledger can be replayed from
its hypothesis constants alone.  Harnack constants are astronomically large
(exp of exp of a few hundred), so the Bombieri sum is kept as a logarithm and
the Harnack constant as log(log C).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import lambertw

from . import lorentz
from .forms import Report, quadrature_budget
from .lorentz import trapezoid_weights, triple_norm
from .mdspace import build_cutoff, energy_measure

EstimateReport = Report


class LedgerError(ValueError):
    pass


# ---------------------------------------------------------------- rules

def _log_slab(a, gap, k, C1, C_SI, gamma):
    if C1 == 0:
        return math.inf
    return (math.log(a * gap**k) - math.log(48 * C1 * C_SI)) / gamma


def _safe_exp(x: float) -> float:
    return math.inf if x > 709 else math.exp(x)


def rule_suptime_L(a, gap, k, C1, C_SI, gamma, I_len):
    if gamma == 0:
        return I_len  # single slab
    return _safe_exp(_log_slab(a, gap, k, C1, C_SI, gamma))


def rule_suptime_log_C(a, C_SI, C_SI0, beta, C2, C3, gap, k, kappa_ind, L, I_len):
    """log of (2^(1+|I|/L) + (2/a) 2^(2+|I|/L)) * K; the slab count makes C huge when C1 > 0."""
    kcoef = a * C_SI0 / (4 * C_SI) + (2 ** (beta + 1) * C2 + 2 * C3) / gap**k + 2 * kappa_ind / L
    growth = I_len / L
    return (1 + growth) * math.log(2) + math.log1p(4 / a) + math.log(kcoef)


def rule_A0_free_sub(I_len, gamma, C_SI, p, beta, a, C1, kappa_ind, C_SI0, C2, C3):
    return 4 * I_len ** (gamma + 1) * C_SI * p ** (beta + 1) / a * (
        (C1 + kappa_ind) / I_len + a * C_SI0 / C_SI + C2 + C3)


def rule_A0_free_sup(I_len, gamma, C_SI, p, beta, a, eta, C1, C_SI0, C2, C3):
    return 4 * I_len ** (gamma + 1) * C_SI * (1 + abs(p)) ** (beta + 1) / (a * eta) * (
        C1 / I_len + a * eta * C_SI0 / C_SI + C2 + C3)


def moser_level_factor(j: int, theta: float, beta: float, k: float) -> float:
    """Per-level constant of the iteration (needs C_SI >= 1, a < 1, gaps <= 1)."""
    return 3.0 * theta ** (j * (beta + 1)) * 4.0 ** (k * (j + 1))


def rule_log_C_prime(nu, beta, k, tol=1e-9):
    """log of prod_j C_j^{theta^-j}, accumulated until the tail factor is below 1 + tol."""
    theta = (nu + 2) / nu
    total, j = 0.0, 0
    while True:
        term = theta ** (-j) * math.log(moser_level_factor(j, theta, beta, k))
        total += term
        # tail of sum_{i>j} theta^-i (a + b i) bounded by a geometric series
        a0 = math.log(3.0) + k * math.log(4.0)
        b0 = (beta + 1) * math.log(theta) + k * math.log(4.0)
        q = 1 / theta
        i = j + 1
        tail = q**i * (a0 + b0 * i) / (1 - q) + b0 * q ** (i + 1) / (1 - q) ** 2
        if tail < math.log1p(tol):
            return total
        j += 1


def rule_A1(log_C_prime, A0_free, nu, I_len, mu_B1, gamma):
    """C' A0^{(nu+2)/2}, rescaled to a unit-measure cylinder, floored at 1."""
    val = math.exp(log_C_prime) * A0_free ** ((nu + 2) / 2) * (I_len * mu_B1) ** (gamma / 2)
    return max(1.0, val)


def rule_k1(k, nu):
    return 2 * k * (nu + 2)


def rule_A2(C_wPI, a, I_len, D_sum, gamma, C2, mu_B1):
    val = 3 * max(1.0, mu_B1) * I_len * (
        C_wPI / (a * I_len) + D_sum * max(I_len**gamma, I_len) + C2 * I_len) / (I_len * mu_B1)
    return max(1.0, val)


def rule_loglog_C_PHI(log_A3, log_A3_prime):
    return float(np.logaddexp(log_A3, log_A3_prime))


def rule_maxprinciple_log_C(log_C_prime, nu, I_len, gamma, C_SI, C_SI0, C1, kappa_ind, a, mu_B1):
    A0 = 32 * I_len**gamma * C_SI * (C1 + kappa_ind) / a
    log_L = _log_slab(a, 1.0, 0.0, C1, C_SI, gamma)
    g = 0.0 if log_L == math.inf else I_len * _safe_exp(-log_L)
    # C_SI (2/a) 2^(2+g) + 2^(1+g) = 2^(1+g) (4 C_SI/a + 1)
    log_inner = (1 + g) * math.log(2) + math.log1p(4 * C_SI / a)
    base = math.log1p(a * C_SI0 / (4 * C_SI))
    log_inner += base if log_L == math.inf else float(np.logaddexp(base, math.log(2) - log_L))
    log_sq = (math.log(2) + log_C_prime + (nu + 2) / 2 * math.log(A0) + gamma * math.log(I_len)
              + log_inner + math.log(I_len * mu_B1))
    return 0.5 * log_sq


def rule_kappa_shift(b_norm, d_norm, M, w1_norm, w2_norm):
    return (b_norm + d_norm) * abs(M) + w1_norm + w2_norm


RULES: dict[str, Callable] = {
    "suptime_L": rule_suptime_L,
    "suptime_log_C": rule_suptime_log_C,
    "A0_free_sub": rule_A0_free_sub,
    "A0_free_sup": rule_A0_free_sup,
    "log_C_prime": rule_log_C_prime,
    "A1": rule_A1,
    "k1": rule_k1,
    "A2": rule_A2,
    "loglog_C_PHI": rule_loglog_C_PHI,
    "maxprinciple_log_C": rule_maxprinciple_log_C,
    "kappa_shift": rule_kappa_shift,
}

FORMULAS = {
    "suptime_L": "(a*gap^k/(48*C1*C_SI))^(1/gamma)",
    "suptime_log_C": "log of (2^(1+|I|/L) + (2/a)*2^(2+|I|/L)) * (a*C_SI0/(4*C_SI) + (2^(beta+1)*C2 + 2*C3)/gap^k + 2*1[kappa>0]/L)",
    "A0_free_sub": "4*|I|^(gamma+1)*C_SI*p^(beta+1)/a * ((C1+1[kappa>0])/|I| + a*C_SI0/C_SI + C2 + C3)",
    "A0_free_sup": "4*|I|^(gamma+1)*C_SI*(1+|p|)^(beta+1)/(a*eta) * (C1/|I| + a*eta*C_SI0/C_SI + C2 + C3)",
    "log_C_prime": "sum_j theta^-j * log(3*theta^(j(beta+1))*4^(k(j+1))), theta=(nu+2)/nu",
    "A1": "max(1, C' * A0^((nu+2)/2) * (|I|*mu(B1))^(gamma/2))",
    "k1": "2*k*(nu+2)",
    "A2": "max(1, 3*(1 v mu(B1))*|I|*(C_wPI/(a|I|) + sum D*(|I|^gamma v |I|) + C2*|I|) / (|I|*mu(B1)))",
    "loglog_C_PHI": "log(A3 + A3')",
    "bombieri_log_A3": "log sum_j (3/4)^j A/(delta_{j+1}-delta_j)^(k2+2k1/gamma), A = max(case bounds)",
    "maxprinciple_log_C": "log of sqrt(2 C' A0^((nu+2)/2) |I|^gamma (C_SI(2/a)2^(2+|I|/L) + 2^(1+|I|/L))(1 + a C_SI0/(4 C_SI) + 2/L) |I| mu(B1))",
    "kappa_shift": "(|b|+|d|)*|M| + |w1| + |w2|",
}


@dataclass
class LedgerEntry:
    value: float
    formula: str
    inputs: dict
    rule: str | None = None  # None for hypothesis constants


@dataclass
class ConstantLedger:
    entries: dict = field(default_factory=dict)

    def hyp(self, name: str, value: float, source: str = "hypothesis") -> float:
        self.entries[name] = LedgerEntry(float(value), source, {}, None)
        return float(value)

    def __getitem__(self, name: str) -> float:
        try:
            return self.entries[name].value
        except KeyError:
            raise LedgerError(f"ledger has no constant {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def derive(self, name: str, rule: str, **inputs) -> float:
        """Evaluate a rule; string inputs name other ledger entries."""
        args = {k: (self[v] if isinstance(v, str) else v) for k, v in inputs.items()}
        value = float(RULES[rule](**args))
        self.entries[name] = LedgerEntry(value, FORMULAS.get(rule, rule), dict(inputs), rule)
        return value

    def recompute(self, overrides: dict | None = None) -> dict:
        """Re-evaluate every derived entry from the hypotheses, dependencies first."""
        vals = {}
        overrides = overrides or {}

        def ev(name, stack=()):
            if name in vals:
                return vals[name]
            if name in stack:
                raise LedgerError(f"cyclic ledger dependency through {name!r}")
            if name not in self.entries:
                raise LedgerError(f"ledger has no constant {name!r}")
            e = self.entries[name]
            if e.rule is None:
                vals[name] = float(overrides.get(name, e.value))
            else:
                args = {k: (ev(v, stack + (name,)) if isinstance(v, str) else v)
                        for k, v in e.inputs.items()}
                vals[name] = float(RULES[e.rule](**args))
            return vals[name]

        for name in self.entries:
            ev(name)
        return vals

    def replay(self, rtol: float = 1e-12) -> dict:
        """Names whose replayed value differs from the stored one (empty when consistent)."""
        vals = self.recompute()
        bad = {}
        for name, e in self.entries.items():
            v, w = e.value, vals[name]
            if not (v == w or abs(v - w) <= rtol * max(abs(v), abs(w))):
                bad[name] = (v, w)
        return bad

    def to_dict(self) -> dict:
        return {n: {"value": e.value, "formula": e.formula, "inputs": e.inputs, "rule": e.rule}
                for n, e in self.entries.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ConstantLedger":
        led = cls()
        for n, e in d.items():
            # JSON carries non-finite literals as "inf"/"-inf"; anything else is a reference
            inputs = {k: (float(v) if isinstance(v, str) and v not in d and v in ("inf", "-inf") else v)
                      for k, v in e["inputs"].items()}
            value = math.nan if e["value"] is None else float(e["value"])
            led.entries[n] = LedgerEntry(value, e["formula"], inputs, e["rule"])
        return led


# Bombieri rules are registered after their helpers are defined (below).


# ---------------------------------------------------------------- helpers

@dataclass(frozen=True)
class Setting:
    """Objects a check needs besides the ledger: form, domain family, exponents."""

    form: object
    family: object
    grid_size: int = 65

    @property
    def space(self):
        return self.form.ref

    @property
    def mu(self):
        return self.form.space.mu

    def cutoff(self, dp, d):
        return build_cutoff(self.form.ref, self.family, dp, d)


def _window(u, lo, hi):
    return u.window(max(lo, float(u.times[0])), min(hi, float(u.times[-1])))


def _tn(values, times, mu, gamma, nu, mask, grid):
    return triple_norm(values, times, mu, gamma, nu, mask=mask, grid_size=grid).value


def _budget(rel, scale, *quads):
    items = {"relative": rel * scale}
    for i, q in enumerate(quads):
        items[f"quadrature_{i}"] = float(q)
    return sum(items.values()), items


def _gap(delta_prime, delta):
    g = abs(delta - delta_prime)
    if g <= 0:
        raise LedgerError("need delta' < delta")
    return g


def _check_p(p, eta, allowed):
    if allowed == "sub" and not (p >= 2 or 1 + eta < p < 2):
        raise LedgerError(f"p = {p} is outside the subsolution range")
    if allowed == "sup" and not (p < 0 or 0 < p < 1 - eta):
        raise LedgerError(f"p = {p} is outside the supersolution range")


# ---------------------------------------------------------------- Cacciopoli

def cacciopoli_subsol(u, setting: Setting, ledger: ConstantLedger, p: float, delta_prime: float,
                      delta: float, rel: float = 1e-8) -> Report:
    L = ledger
    _check_p(p, L["eta"], "sub")
    fam, mu = setting.family, setting.mu
    psi = setting.cutoff(delta_prime, delta).values
    kap, a = L["kappa"], L["a"]
    inner = _window(u, *fam.I_minus(delta_prime))
    outer = _window(u, *fam.I_minus(delta))
    ub_in = np.maximum(inner.values, 0) + kap
    ub_out = np.maximum(outer.values, 0) + kap
    sup_term = 0.5 * float(np.max(np.sum(ub_in**p * psi**2 * mu, axis=1)))
    gam = energy_measure(setting.space, inner.values)
    en = np.sum(ub_in ** (p - 2) * psi**2 * gam, axis=1)
    wt_in = trapezoid_weights(inner.times)
    lhs = sup_term + a * p**2 / 4 * math.fsum(wt_in * en)
    g = _gap(delta_prime, delta)
    Bd = fam.ball(delta)
    tn = _tn(ub_out ** (p / 2) * psi, outer.times, mu, L["gamma"], L["nu"], Bd, setting.grid_size)
    mass = np.sum(ub_out**p * psi * mu, axis=1)
    wt_out = trapezoid_weights(outer.times)
    rhs = (p**2 * L["C1"] * tn**2
           + (p ** (L["beta"] + 1) * L["C2"] + 2 * L["C3"]) * g ** (-L["k"]) * math.fsum(wt_out * mass)
           + (p - 1) * math.fsum(kap**p * psi**2 * mu))
    budget, items = _budget(rel, lhs + rhs, a * p**2 / 4 * quadrature_budget(en, inner.times),
                            quadrature_budget(mass, outer.times) * p ** (L["beta"] + 1) * L["C2"] * g ** (-L["k"]))
    return Report("cacciopoli_subsol", lhs, rhs, budget, p=p, n=None,
                  inputs={"delta_prime": delta_prime, "delta": delta}, budget_items=items)


def cacciopoli_supsol(u, setting: Setting, ledger: ConstantLedger, p: float, epsilon: float,
                      delta_prime: float, delta: float, rel: float = 1e-8) -> Report:
    L = ledger
    _check_p(p, L["eta"], "sup")
    fam, mu = setting.family, setting.mu
    interval = fam.I_minus if p < 0 else fam.I_plus
    psi = setting.cutoff(delta_prime, delta).values
    kap, a, eta = L["kappa"], L["a"], L["eta"]
    inner = _window(u, *interval(delta_prime))
    outer = _window(u, *interval(delta))
    ue_in = np.maximum(inner.values, 0) + kap + epsilon
    ue_out = np.maximum(outer.values, 0) + kap + epsilon
    sup_term = float(np.max(np.sum(ue_in**p * psi**2 * mu, axis=1)))
    gam = energy_measure(setting.space, inner.values)
    en = np.sum(ue_in ** (p - 2) * psi**2 * gam, axis=1)
    lhs = sup_term + a * eta * p**2 / 4 * math.fsum(trapezoid_weights(inner.times) * en)
    g = _gap(delta_prime, delta)
    tn = _tn(ue_out ** (p / 2), outer.times, mu, L["gamma"], L["nu"], fam.ball(delta), setting.grid_size)
    mass = np.sum(ue_out**p * psi * mu, axis=1)
    rhs = ((1 + p**2) * L["C1"] * tn**2
           + ((1 + abs(p) ** (L["beta"] + 1)) * L["C2"] + 2 * L["C3"]) * g ** (-L["k"])
           * math.fsum(trapezoid_weights(outer.times) * mass))
    budget, items = _budget(rel, lhs + rhs, quadrature_budget(en, inner.times),
                            quadrature_budget(mass, outer.times))
    return Report("cacciopoli_supsol", lhs, rhs, budget, p=p,
                  inputs={"epsilon": epsilon, "delta_prime": delta_prime, "delta": delta},
                  budget_items=items)


# ---------------------------------------------------------------- sup in time

@dataclass(frozen=True)
class SupTimeResult:
    sup_l2: float
    energy: float
    rhs: float
    C: float
    L: float
    report: Report


def suptime_energy(u, setting: Setting, ledger: ConstantLedger, delta_prime: float, delta: float,
                   rel: float = 1e-8) -> SupTimeResult:
    L = ledger
    fam, mu = setting.family, setting.mu
    psi = setting.cutoff(delta_prime, delta).values
    kap = L["kappa"]
    g = _gap(delta_prime, delta)
    I_len = fam.I_minus(delta)[1] - fam.I_minus(delta)[0]
    slab = ledger.derive("L_slab", "suptime_L", a="a", gap=g, k="k", C1="C1", C_SI="C_SI",
                         gamma="gamma", I_len=I_len)
    log_C = ledger.derive("log_C_suptime", "suptime_log_C", a="a", C_SI="C_SI", C_SI0="C_SI0", beta="beta",
                      C2="C2", C3="C3", gap=g, k="k", kappa_ind=float(kap > 0), L=slab, I_len=I_len)
    inner = _window(u, *fam.I_minus(delta_prime))
    outer = _window(u, *fam.I_minus(delta))
    ub_in = np.maximum(inner.values, 0) + kap
    sup_l2 = float(np.max(np.sum((ub_in * psi) ** 2 * mu, axis=1)))
    en_t = np.sum(psi**2 * energy_measure(setting.space, inner.values), axis=1)
    energy = math.fsum(trapezoid_weights(inner.times) * en_t)
    Bd = fam.ball(delta)
    ub_out = np.maximum(outer.values, 0) + kap
    mass = np.sum(np.where(Bd, ub_out**2 * mu, 0.0), axis=1)
    total = math.fsum(trapezoid_weights(outer.times) * mass)
    C = _safe_exp(log_C)
    rhs = 0.0 if total == 0 else _safe_exp(log_C + math.log(total))
    quad = quadrature_budget(mass, outer.times)
    budget, items = _budget(rel, sup_l2 + energy + (rhs if math.isfinite(rhs) else 0.0),
                            quadrature_budget(en_t, inner.times),
                            0.0 if quad == 0 else _safe_exp(log_C + math.log(quad)))
    rep = Report("suptime_energy", sup_l2 + energy, rhs, budget,
                 inputs={"delta_prime": delta_prime, "delta": delta, "L": slab, "log_C": log_C},
                 budget_items=items)
    return SupTimeResult(sup_l2, energy, rhs, C, slab, rep)


# ---------------------------------------------------------------- mean value estimates

@dataclass
class MoserLevel:
    level: int
    delta: float
    exponent: float
    norm: float
    bound_ok: bool | None = None


def moser_radii(delta_prime: float, delta: float, levels: int) -> list[float]:
    """delta_0 = delta, delta_{i+1} = delta_i - (delta - delta') 2^{-i-1}."""
    out = [delta]
    for i in range(levels):
        out.append(out[-1] - (delta - delta_prime) * 2.0 ** (-i - 1))
    return out


def _mve(u, setting, ledger, p, epsilon, delta_prime, delta, kind, interval, levels, rel):
    L = ledger
    fam, mu = setting.family, setting.mu
    kap = L["kappa"]
    shift = kap + (epsilon or 0.0)
    g = _gap(delta_prime, delta)
    nu, gamma, k, beta = L["nu"], L["gamma"], L["k"], L["beta"]
    span = interval(delta)
    I_len = span[1] - span[0]
    tag = f"{kind}_p{p:g}_{delta_prime:g}_{delta:g}"
    if kind == "sub":
        A0_free = ledger.derive(f"A0_free[{tag}]", "A0_free_sub", I_len=I_len, gamma="gamma",
                                C_SI="C_SI", p=p, beta="beta", a="a", C1="C1",
                                kappa_ind=float(kap > 0), C_SI0="C_SI0", C2="C2", C3="C3")
    else:
        A0_free = ledger.derive(f"A0_free[{tag}]", "A0_free_sup", I_len=I_len, gamma="gamma",
                                C_SI="C_SI", p=p, beta="beta", a="a", eta="eta", C1="C1",
                                C_SI0="C_SI0", C2="C2", C3="C3")
    log_cp = ledger["log_C_prime"] if "log_C_prime" in ledger else ledger.derive(
        "log_C_prime", "log_C_prime", nu="nu", beta="beta", k="k")
    A0 = A0_free * g ** (-2 * k)
    q = (nu + 2) / 2

    inner = _window(u, *interval(delta_prime))
    ub_in = np.maximum(inner.values, 0) + shift
    Bp = fam.ball(delta_prime)
    lhs = float(np.max(ub_in[:, Bp] ** p))

    outer = _window(u, *span)
    ub_out = np.maximum(outer.values, 0) + shift
    base = _tn(ub_out ** (p / 2), outer.times, mu, gamma, nu, fam.ball(delta), setting.grid_size)
    log_rhs = log_cp + q * math.log(A0) - k * (nu + 2) * math.log(g) + 2 * math.log(base) if base > 0 else -math.inf
    rhs = math.exp(min(log_rhs, 700.0)) if log_rhs > -math.inf else 0.0

    theta = (nu + 2) / nu
    radii = moser_radii(delta_prime, delta, levels)
    trace = []
    prev = None
    for i, r_i in enumerate(radii):
        w = _window(u, *interval(r_i))
        ub = np.maximum(w.values, 0) + shift
        e_i = p * theta**i
        nrm = _tn(ub ** (e_i / 2), w.times, mu, gamma, nu, fam.ball(r_i), setting.grid_size)
        ok = None
        if prev is not None:
            # |||f^{theta}|||^{2/theta} <= C_{i-1} A0_free g^{-2k} |||f|||^2
            lhs_i = 2 / theta * math.log(nrm) if nrm > 0 else -math.inf
            rhs_i = (math.log(moser_level_factor(i - 1, theta, beta, k)) + math.log(A0_free)
                     - 2 * k * math.log(g) + 2 * math.log(prev)) if prev > 0 else math.inf
            ok = bool(lhs_i <= rhs_i + 1e-9)
        trace.append(MoserLevel(i, r_i, e_i, nrm, ok))
        prev = nrm
    failed = [lv.level for lv in trace if lv.bound_ok is False]
    rep = Report(f"mve_{kind}sol", lhs, rhs, rel * (lhs + rhs), p=p,
                 inputs={"delta_prime": delta_prime, "delta": delta, "epsilon": epsilon,
                         "log_rhs": log_rhs, "A0": A0, "log_C_prime": log_cp,
                         "failed_levels": failed},
                 budget_items={"relative": rel * (lhs + rhs)})
    if log_rhs > 700:
        rep.inputs["rhs_clipped"] = True
    if failed:
        rep.status = f"iteration bound violated at level {failed[0]}"
    return rep, trace


def mve_subsol(u, setting: Setting, ledger: ConstantLedger, p: float, delta_prime: float,
               delta: float, levels: int = 5, rel: float = 1e-8):
    _check_p(p, ledger["eta"], "sub")
    return _mve(u, setting, ledger, p, None, delta_prime, delta, "sub", setting.family.I_minus,
                levels, rel)


def mve_supsol(u, setting: Setting, ledger: ConstantLedger, p: float, epsilon: float,
               delta_prime: float, delta: float, levels: int = 5, rel: float = 1e-8):
    _check_p(p, ledger["eta"], "sup")
    if np.any(np.asarray(u.values) < -1e-12):
        raise LedgerError("supersolution estimates need a nonnegative field")
    interval = setting.family.I_minus if p < 0 else setting.family.I_plus
    return _mve(u, setting, ledger, p, epsilon, delta_prime, delta, "sup", interval, levels, rel)


# ---------------------------------------------------------------- Bombieri

def bombieri_gaps(delta_star: float, j):
    j = np.asarray(j, dtype=float)
    return (1 - delta_star) / ((1 + j) * (2 + j))


def upper_root(m: float) -> float:
    """Larger solution of y = m log y (1 when m <= e, where y/log y >= e > m for y > 1)."""
    if m <= math.e:
        return 1.0
    return float(np.real(-m * lambertw(-1 / m, -1)))


@dataclass
class BombieriResult:
    log_A3: float
    log_A: float
    exponent: float
    n_terms: int
    log_terms: np.ndarray
    cases: dict


def bombieri_case_bounds(A1, A2, gamma, eta, K):
    """Constants of the two non-contracting cases, as multiples of gap^-(k2 + 2 k1/gamma)."""
    A_fail = 2 * A2 * (2 * K * A1) ** (2 / gamma)
    m = gamma / ((1 - eta) * A2)
    A_small = 2 * A2 * upper_root(m)
    return {"fails_2212": A_fail, "below_threshold": A_small}


def bombieri_constant(A1: float, k1: float, A2: float, k2: float, gamma: float, eta: float,
                      delta_star: float, quasi_K: float | None = None,
                      log_phi: float | None = None, gap: float | None = None,
                      rtol: float = 1e-13, max_terms: int = 10**7) -> BombieriResult:
    if not 0 < gamma < 1:
        raise LedgerError("the Bombieri constant needs 0 < gamma < 1 (the exponent 2 k1/gamma)")
    if not 0 < delta_star < 1:
        raise LedgerError("delta_star must lie in (0, 1)")
    A1, A2 = max(A1, 1.0), max(A2, 1.0)
    K = lorentz.quasi_triangle_constant(2 / gamma, 2) if quasi_K is None else quasi_K
    cases = bombieri_case_bounds(A1, A2, gamma, eta, K)
    log_A = math.log(max(cases.values()))
    e = k2 + 2 * k1 / gamma
    # log terms: j log(3/4) + log A - e log gap_j
    log34 = math.log(0.75)
    c = math.log(1 - delta_star)
    acc = -math.inf
    terms = []
    j = 0
    while j < max_terms:
        t = j * log34 + log_A - e * (c - math.log1p(j) - math.log(2 + j))
        terms.append(t)
        acc = float(np.logaddexp(acc, t))
        ratio = 0.75 * ((j + 3) / (j + 1)) ** e
        if ratio < 1:
            # later ratios are smaller, so the tail is dominated by a geometric series
            log_tail = t + math.log(ratio) - math.log1p(-ratio)
            if log_tail - acc < math.log(rtol):
                break
        j += 1
    # one compensated sum for the value; the running logaddexp only drives the stopping rule
    arr = np.array(terms)
    hi = float(arr.max())
    acc = hi + math.log(math.fsum(np.exp(arr - hi)))
    trace = dict(cases)
    trace["K"] = K
    if log_phi is not None:
        g = 1 - delta_star if gap is None else gap
        y = log_phi
        bounds = {"contraction": 0.75 * y,
                  "fails_2212": cases["fails_2212"] / g**e,
                  "below_threshold": cases["below_threshold"] / g**e}
        trace["log_phi"] = y
        trace["bounds_at_phi"] = bounds
        trace["binding"] = max(bounds, key=bounds.get)
    return BombieriResult(acc, log_A, e, len(terms), np.array(terms), trace)


def rule_bombieri_log_A3(A1, k1, A2, k2, gamma, eta, delta_star):
    return bombieri_constant(A1, k1, A2, k2, gamma, eta, delta_star).log_A3


RULES["bombieri_log_A3"] = rule_bombieri_log_A3


# ---------------------------------------------------------------- Harnack

@dataclass(frozen=True)
class HarnackGeometry:
    """Two Harnack cylinders (a+tau1, a+tau2) x B_delta and (a+tau3, a+tau4) x B_delta.

    The Bombieri families shrink linearly in the level s in [delta*, 1]: the
    early window from (a, a+tau2) to (a+tau1, a+tau2), the late one from
    (a+tau2, a+tau4) to (a+tau3, a+tau4).
    """

    a: float
    tau: tuple
    delta_star: float

    def early(self, s: float) -> tuple[float, float]:
        t1, t2 = self.tau[0], self.tau[1]
        frac = (1 - s) / (1 - self.delta_star)
        return (self.a + t1 * frac, self.a + t2)

    def late(self, s: float) -> tuple[float, float]:
        t2, t3, t4 = self.tau[1], self.tau[2], self.tau[3]
        frac = (1 - s) / (1 - self.delta_star)
        return (self.a + t2 + (t3 - t2) * frac, self.a + t4)

    @property
    def anchor(self) -> float:
        return self.a + self.tau[1]

    def C3(self) -> float:
        t1, t2, t3 = self.tau[0], self.tau[1], self.tau[2]
        return (1 - self.delta_star) / min(t1, t3 - t2)


def harnack_constant(ledger: ConstantLedger, geom: HarnackGeometry, mu_B1: float,
                     required: Sequence[str] = ("a", "C1", "C2", "C3", "C_SI", "C_SI0", "C_wPI",
                                                "nu", "gamma", "k", "beta", "eta", "D_sum")) -> float:
    """log(log C_PHI) with C_PHI = exp(A3 + A3') from the two Bombieri branches."""
    for name in required:
        if name not in ledger:
            raise LedgerError(f"cannot assemble the Harnack constant: {name} is not certified")
    if ledger["gamma"] <= 0:
        raise LedgerError("the Harnack pipeline needs gamma > 0")
    L = ledger
    if "mu_B1" not in L:
        L.hyp("mu_B1", mu_B1, "measure of B_1")
    if "log_C_prime" not in L:
        L.derive("log_C_prime", "log_C_prime", nu="nu", beta="beta", k="k")
    L.derive("k1", "k1", k="k", nu="nu")
    p_max = 1 - L["eta"]
    logs = []
    for branch, span in (("early", geom.early(1.0)), ("late", geom.late(1.0))):
        I_len = span[1] - span[0]
        L.derive(f"A0[{branch}]", "A0_free_sup", I_len=I_len, gamma="gamma", C_SI="C_SI",
                      p=p_max, beta="beta", a="a", eta="eta", C1="C1", C_SI0="C_SI0",
                      C2="C2", C3="C3")
        L.derive(f"A1[{branch}]", "A1", log_C_prime="log_C_prime", A0_free=f"A0[{branch}]",
                 nu="nu", I_len=I_len, mu_B1="mu_B1", gamma="gamma")
        L.derive(f"A2[{branch}]", "A2", C_wPI="C_wPI", a="a", I_len=I_len, D_sum="D_sum",
                 gamma="gamma", C2="C2", mu_B1="mu_B1")
        logs.append(L.derive(f"log_A3[{branch}]", "bombieri_log_A3", A1=f"A1[{branch}]", k1="k1",
                             A2=f"A2[{branch}]", k2="k", gamma="gamma", eta="eta",
                             delta_star=geom.delta_star))
    return L.derive("loglog_C_PHI", "loglog_C_PHI", log_A3="log_A3[early]",
                    log_A3_prime="log_A3[late]")


def monotonicity_audit(ledger: ConstantLedger, names=("C1", "C2", "C3", "C_SI", "C_SI0", "C_wPI"),
                       step: float = 0.05) -> dict:
    """Finite-difference probes of loglog C_PHI: up in each constant, down in a."""
    base = ledger.recompute()["loglog_C_PHI"]
    out = {}
    for n in names:
        v = ledger[n]
        up = ledger.recompute({n: v * (1 + step) + (step if v == 0 else 0.0)})["loglog_C_PHI"]
        out[n] = (base, up, bool(up >= base))
    a = ledger["a"]
    down = ledger.recompute({"a": a * (1 - step)})["loglog_C_PHI"]
    out["1/a"] = (base, down, bool(down >= base))
    return out


@dataclass(frozen=True)
class HarnackResult:
    sup_minus: float
    inf_plus: float
    ratio: float
    loglog_C_PHI: float
    passed: bool | None
    report: Report


def _loglog(x: float) -> float:
    if x <= 1:
        return -math.inf
    return math.log(math.log(x))


def harnack_verify(u, family, ledger: ConstantLedger, geom: HarnackGeometry, delta: float,
                   kappa: float = 0.0, unverified: Sequence[str] = ()) -> HarnackResult:
    B = family.ball(delta)
    lo = _window(u, geom.a + geom.tau[0], geom.a + geom.tau[1])
    hi = _window(u, geom.a + geom.tau[2], geom.a + geom.tau[3])
    sup_m = float(np.max(np.maximum(lo.values[:, B], 0) + kappa))
    inf_p = float(np.min(np.maximum(hi.values[:, B], 0) + kappa))
    if inf_p <= 0:
        ratio = math.inf if sup_m > 0 else 1.0
    else:
        ratio = sup_m / inf_p
    llc = ledger["loglog_C_PHI"] if "loglog_C_PHI" in ledger else math.nan
    lhs = _loglog(ratio)
    rep = Report("harnack", max(lhs, -1e300), llc, 0.0,
                 inputs={"sup_minus": sup_m, "inf_plus": inf_p, "ratio": ratio, "delta": delta,
                         "scale": "log(log(.))"})
    passed = None if unverified else bool(lhs <= llc)
    if unverified:
        rep.status = "not certified: " + ", ".join(unverified)
    if math.isinf(ratio):
        rep.status = (rep.status or "") + " violation candidate: inf over Q+ is 0"
    return HarnackResult(sup_m, inf_p, ratio, llc, passed, rep)


# ---------------------------------------------------------------- log lemma

def log_lemma(u, setting: Setting, ledger: ConstantLedger, epsilon: float, delta: float,
              lambdas: Sequence[float], geom: HarnackGeometry, branch: str,
              C_wPI: float | None = None) -> tuple[list[Report], float]:
    """Space-time measure of {+-(log u_eps - c) < -lambda} on a branch cylinder vs the bound.

    The anchor c is the psi^2-weighted mean of log u_eps at the split time
    a + tau2, with psi the cutoff of B_delta in B_1.  The later branch tests
    small values (log u_eps - c < -lambda), the earlier one large values.
    """
    if branch not in ("+", "-"):
        raise LedgerError("branch is '+' (later cylinder) or '-' (earlier cylinder)")
    vals = np.asarray(u.values)
    if np.any(vals < -1e-12):
        raise LedgerError("log lemma needs a nonnegative field")
    L = ledger
    fam, mu = setting.family, setting.mu
    kap, a = L["kappa"], L["a"]
    psi = setting.cutoff(delta, 1.0).values
    w2 = psi**2 * mu
    anchor = u.at(geom.anchor)
    c = math.fsum(np.log(np.maximum(anchor, 0) + kap + epsilon) * w2) / math.fsum(w2)
    span = geom.late(delta) if branch == "+" else geom.early(delta)
    w = _window(u, *span)
    I_len = span[1] - span[0]
    B = fam.ball(delta)
    logu = np.log(np.maximum(w.values, 0) + kap + epsilon) - c
    sgn = 1.0 if branch == "+" else -1.0
    wt = trapezoid_weights(w.times)
    mu_B1 = float(np.sum(mu[fam.ball(1.0)]))
    Cw = L["C_wPI"] if C_wPI is None else C_wPI
    D = L["D_sum"]
    base = (3 * max(1.0, mu_B1) * I_len
            * (Cw / (a * I_len) + D * max(I_len ** L["gamma"], I_len)
               + L["C2"] * I_len / abs(1 - delta) ** L["k"]))
    reports = []
    for lam in lambdas:
        inside = (sgn * logu < -lam) & B
        meas = math.fsum(wt * np.sum(np.where(inside, mu, 0.0), axis=1))
        reports.append(Report("log_lemma", meas, base / lam, 1e-12 * base / lam,
                              inputs={"lambda": lam, "branch": branch, "anchor": c, "delta": delta,
                                      "epsilon": epsilon}))
    return reports, c


# ---------------------------------------------------------------- maximum principle

def maximum_principle_check(u, ledger: ConstantLedger, M: float, cylinder, boundary: str,
                            b_norm: float, d_norm: float, w1_norm: float, w2_norm: float,
                            mu_U: float) -> Report:
    """max u <= M + C((|b|+|d|)|M| + kappa), kappa = |w1| + |w2| (shifted by M as kappa^M)."""
    if boundary != "zero-outside-U":
        raise LedgerError("the maximum principle check needs the zero-outside-U boundary mode")
    t0, t1 = cylinder[0]
    U = np.asarray(cylinder[1], dtype=bool)
    L = ledger
    I_len = t1 - t0
    kappa = w1_norm + w2_norm
    kM = L.derive(f"kappa_M[{M:g}]", "kappa_shift", b_norm=b_norm, d_norm=d_norm, M=M,
                  w1_norm=w1_norm, w2_norm=w2_norm)
    if "log_C_prime" not in L:
        L.derive("log_C_prime", "log_C_prime", nu="nu", beta="beta", k="k")
    log_C = L.derive(f"log_C_max[{M:g}]", "maxprinciple_log_C", log_C_prime="log_C_prime", nu="nu",
                 I_len=I_len, gamma="gamma", C_SI="C_SI", C_SI0="C_SI0", C1="C1",
                 kappa_ind=float(kM > 0), a="a", mu_B1=mu_U)
    w = _window(u, t0, t1)
    lhs = float(np.max(w.values[:, U]))
    X = (b_norm + d_norm) * abs(M) + kappa
    rhs = M if X == 0 else M + _safe_exp(log_C + math.log(X))
    return Report("max_principle", lhs, rhs, 1e-10 * (abs(lhs) + abs(M)),
                  inputs={"M": M, "kappa": kappa, "kappa_M": kM, "log_C": log_C})


# ---------------------------------------------------------------- pointwise estimate

def pointwise_estimate(u, path: Sequence[int], times: tuple[float, float], loglog_C_PHI: float,
                       R: float, delta: float, length: float, kappa: float = 0.0,
                       certified_links: Sequence[bool] | None = None) -> Report:
    """log((u(s,x)+k)/(u(t,y)+k)) <= n log C_PHI (1 + (t-s)/R^2 + (t-s)/s + (t-s)/delta^2 + d^2/(t-s)).

    Compared on a log scale: log(lhs) against log(n) + log(log C_PHI) + log(bracket).
    """
    s, t = times
    if not 0 < s < t:
        raise LedgerError("need 0 < s < t")
    links = len(path) - 1
    if certified_links is not None and not all(certified_links):
        raise LedgerError("a chain link lacks Harnack certification")
    x, y = path[0], path[-1]
    lhs = math.log((u.at(s)[x] + kappa) / (u.at(t)[y] + kappa))
    dt = t - s
    bracket = 1 + dt / R**2 + dt / s + dt / delta**2 + length**2 / dt
    log_rhs = math.log(max(links, 1)) + loglog_C_PHI + math.log(bracket)
    log_lhs = math.log(lhs) if lhs > 0 else -1e300
    return Report("pointwise", log_lhs, log_rhs, 0.0,
                  inputs={"raw_lhs": lhs, "links": links, "bracket": bracket, "s": s, "t": t,
                          "scale": "log"})
