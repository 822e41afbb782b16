"""Quasilinear forms on a graph and checkers for the structural hypotheses.

A form is given by two callables:

* ``flux(t, u)`` returns one value per edge; the divergence pairing is
  sum_e F_e(u) (g(i) - g(j)).
* ``density(t, u)`` returns one value per node; the lower-order pairing is
  sum_x B(u)(x) g(x) mu(x).

Both accept stacks of node fields (node index last), which lets the
checkers evaluate a whole time series at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import lorentz
from .lorentz import ExponentPair, trapezoid_weights, triple_norm
from .mdspace import DirichletSpace, energy_measure


class FormError(ValueError):
    pass


@dataclass(frozen=True)
class FormValue:
    A_part: float
    B_part: float

    @property
    def total(self) -> float:
        return self.A_part + self.B_part


@dataclass(frozen=True, eq=False)
class QuasilinearForm:
    space: DirichletSpace
    flux: Callable[[float, np.ndarray], np.ndarray]
    density: Callable[[float, np.ndarray], np.ndarray] | None = None
    reference: DirichletSpace | None = None
    name: str = "form"
    a: float = 1.0
    a_bar: float = 1.0
    # dense generator L with mu du/dt = -L u + s, when the form is affine
    linear_part: np.ndarray | None = field(default=None, repr=False)
    linear_source: np.ndarray | None = field(default=None, repr=False)

    @property
    def ref(self) -> DirichletSpace:
        return self.reference if self.reference is not None else self.space

    def pairing(self, t: float, u: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """A- and B-parts of E_t(u, g); works on stacked u and g."""
        F = np.asarray(self.flux(t, u), dtype=float)
        dg = self.space.edge_diff(g)
        A = np.sum(F * dg, axis=-1)
        if self.density is None:
            B = np.zeros_like(A)
        else:
            Bd = np.asarray(self.density(t, u), dtype=float)
            B = np.sum(Bd * np.asarray(g) * self.space.mu, axis=-1)
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            bad = np.argwhere(~np.isfinite(np.atleast_1d(A + B)))
            raise FormError(f"{self.name}: non-finite form value at sample {bad[0].tolist()}")
        return A, B

    def a_measure(self, t: float, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Nodewise dA_t(u, v)(x) = 1/2 sum_y F_xy(u) (v(x) - v(y))."""
        F = np.asarray(self.flux(t, u), dtype=float)
        w = 0.5 * F * self.space.edge_diff(v)
        out = np.zeros(np.shape(w)[:-1] + (self.space.n_nodes,))
        np.add.at(out, (..., self.space.edges[:, 0]), w)
        np.add.at(out, (..., self.space.edges[:, 1]), w)
        return out

    def b_measure(self, t: float, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        if self.density is None:
            return np.zeros(np.shape(v))
        return np.asarray(self.density(t, u)) * np.asarray(v) * self.space.mu

    def rate(self, t: float, u: np.ndarray) -> np.ndarray:
        """du/dt for the evolution mu du/dt = -(D^T F(u) + mu B(u))."""
        F = np.asarray(self.flux(t, u), dtype=float)
        div = np.zeros_like(u, dtype=float)
        np.add.at(div, self.space.edges[:, 0], F)
        np.add.at(div, self.space.edges[:, 1], -F)
        out = -div / self.space.mu
        if self.density is not None:
            out = out - np.asarray(self.density(t, u), dtype=float)
        return out


def evaluate_form(form: QuasilinearForm, t: float, u, g) -> FormValue:
    A, B = form.pairing(t, np.asarray(u, dtype=float), np.asarray(g, dtype=float))
    return FormValue(float(A), float(B))


def heat_form(space: DirichletSpace) -> QuasilinearForm:
    """The reference Dirichlet form as a (linear) quasilinear form."""
    c = space.conductance
    L = space.laplacian().toarray() if space.n_nodes <= 2000 else None
    return QuasilinearForm(space, lambda t, u: c * space.edge_diff(u), None, None,
                           "heat", 1.0, 1.0, L, None)


# ---------------------------------------------------------------- coefficients

COEFFICIENT_NAMES = ("b", "c", "d", "e", "w1", "w2", "w3")
# coefficients paired with the r'' norm need (r/2, q) admissible, the others (r, q)
_HALF_EXPONENT = {"b", "c", "e", "w1", "w3"}


@dataclass(frozen=True)
class AdaptedCoefficients:
    """Static nonnegative coefficient fields with weak-L^r norms over a ball."""

    a: float
    a_bar: float
    fields: dict
    exponents: dict
    norms: dict
    gamma: float
    nu: float

    @property
    def kappa(self) -> float:
        return self.norms.get("w1", 0.0) + self.norms.get("w2", 0.0) + self.norms.get("w3", 0.0)

    def norm(self, name: str) -> float:
        return self.norms.get(name, 0.0)

    def pair(self, name: str) -> ExponentPair:
        r = self.exponents[name]
        return ExponentPair(r / 2 if name in _HALF_EXPONENT else r, math.inf, self.gamma, self.nu)


def certify_coefficients(space: DirichletSpace, a: float, a_bar: float, fields: dict,
                         exponents: dict, gamma: float, nu: float, mask=None) -> AdaptedCoefficients:
    if not 0 < a <= a_bar:
        raise FormError("need 0 < a <= a_bar")
    unknown = set(fields) - set(COEFFICIENT_NAMES)
    if unknown:
        raise FormError(f"unknown coefficient fields: {sorted(unknown)}")
    mu = space.mu if mask is None else space.mu[np.asarray(mask, dtype=bool)]
    norms, flds = {}, {}
    for name, arr in fields.items():
        arr = np.broadcast_to(np.asarray(arr, dtype=float), (space.n_nodes,)).copy()
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise FormError(f"coefficient {name} must be nonnegative and finite")
        if name not in exponents:
            raise FormError(f"coefficient {name} needs an exponent r")
        vals = arr if mask is None else arr[np.asarray(mask, dtype=bool)]
        norms[name] = lorentz.lorentz_norm(vals, mu, exponents[name], math.inf)
        flds[name] = arr
    coeffs = AdaptedCoefficients(a, a_bar, flds, dict(exponents), norms, gamma, nu)
    for name in flds:
        if norms[name] > 0 and not coeffs.pair(name).admissible():
            raise FormError(f"exponent pair for {name} (r={exponents[name]}) is not admissible "
                            f"for gamma={gamma}, nu={nu}")
    return coeffs


def build_aronson_serrin_form(space: DirichletSpace, coeffs: AdaptedCoefficients,
                              alpha: Callable[[float, np.ndarray], np.ndarray],
                              probe_values: Sequence[float] | None = None) -> QuasilinearForm:
    """Flux alpha(t, edge mean of u) * c * grad u; density c|grad u| + d u - w2.

    Only the multiplier alpha and the fields c, d, w2 are realized in the
    dynamics.  The A-part perturbations b, e, w1, w3 are accepted as
    norm data for the constants but must vanish as fields here.
    """
    for name in ("b", "e", "w1", "w3"):
        if name in coeffs.fields and np.any(coeffs.fields[name] != 0):
            raise FormError(f"coefficient {name} is not realized by this discretization")
    grid = np.linspace(-50, 50, 20001) if probe_values is None else np.asarray(probe_values)
    al = np.asarray(alpha(0.0, grid))
    if np.any(al < coeffs.a - 1e-15) or np.any(al > coeffs.a_bar + 1e-15):
        raise FormError("multiplier leaves [a, a_bar]")
    cond = space.conductance
    e0, e1 = space.edges[:, 0], space.edges[:, 1]
    cf = coeffs.fields.get("c")
    df = coeffs.fields.get("d")
    w2 = coeffs.fields.get("w2")

    def flux(t, u):
        u = np.asarray(u, dtype=float)
        mid = 0.5 * (u[..., e0] + u[..., e1])
        return cond * alpha(t, mid) * (u[..., e0] - u[..., e1])

    density = None
    if cf is not None or df is not None or w2 is not None:
        def density(t, u):
            u = np.asarray(u, dtype=float)
            out = np.zeros_like(u)
            if cf is not None:
                out = out + cf * np.sqrt(energy_measure(space, u) / space.mu)
            if df is not None:
                out = out + df * u
            if w2 is not None:
                out = out - w2
            return out

    linear = None
    src = None
    if cf is None and _alpha_is_constant(alpha):
        linear = np.asarray(alpha(0.0, np.zeros(1)))[0] * space.laplacian().toarray()
        if df is not None:
            linear = linear + np.diag(df * space.mu)
        if w2 is not None:
            src = w2 * space.mu
    return QuasilinearForm(space, flux, density, None, "aronson_serrin", coeffs.a, coeffs.a_bar,
                           linear, src)


def _alpha_is_constant(alpha) -> bool:
    probe = np.asarray(alpha(0.0, np.linspace(-3, 3, 13)))
    return bool(np.all(probe == probe[0]))


# ---------------------------------------------------------------- reports

@dataclass
class Report:
    check: str
    lhs: float
    rhs: float
    budget: float = 0.0
    p: float | None = None
    n: float | None = None
    inputs: dict = field(default_factory=dict)
    budget_items: dict = field(default_factory=dict)
    status: str | None = None  # "unverified" overrides pass/fail for non-asserted checks

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool | None:
        if math.isnan(self.lhs) or math.isnan(self.rhs):
            return None  # no verdict, e.g. an uncertified Harnack ratio
        return bool(self.margin >= -self.budget)

    def to_record(self) -> dict:
        rec = {
            "check": self.check,
            "p": self.p,
            "n": self.n,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "margin": self.margin,
            "budget": self.budget,
            "budget_items": self.budget_items,
            "pass": self.passed,
            "inputs": self.inputs,
        }
        if self.status is not None:
            rec["status"] = self.status
        return rec


def quadrature_budget(samples: np.ndarray, times: np.ndarray) -> float:
    """Trapezoid error bound for one integrand on a possibly uneven grid.

    The larger of the Richardson estimate |T_h - T_2h| / 3 and the absolute
    Euler-Maclaurin leading term sum h_i^2/12 |g'(t_i+1) - g'(t_i)|, with g'
    from second-order differences.  Richardson alone undershoots when solver
    steps and output times interleave.
    """
    samples = np.asarray(samples, dtype=float)
    times = np.asarray(times, dtype=float)
    if times.size < 3:
        return 0.0
    fine = math.fsum(trapezoid_weights(times) * samples)
    coarse_idx = np.arange(0, times.size, 2)
    if coarse_idx[-1] != times.size - 1:
        coarse_idx = np.append(coarse_idx, times.size - 1)
    coarse = math.fsum(trapezoid_weights(times[coarse_idx]) * samples[coarse_idx])
    h = np.diff(times)
    em = math.fsum(h**2 / 12 * np.abs(np.diff(np.gradient(samples, times))))
    return max(abs(fine - coarse) / 3.0, em)


# ---------------------------------------------------------------- H-functions

@dataclass(frozen=True)
class HFunction:
    p: float
    kappa: float = 0.0
    n: float | None = None
    epsilon: float = 0.0

    def bar(self, v):
        return np.maximum(np.asarray(v, dtype=float), 0.0) + self.kappa + self.epsilon


def h_eval(hf: HFunction, v):
    """Return (H(v), H'(v)) for the power / logarithmic family."""
    vb = hf.bar(v)
    p, kap = hf.p, hf.kappa
    if p >= 2:
        vn = vb if hf.n is None else np.minimum(vb, hf.n)
        H = 0.5 * vb**2 * vn ** (p - 2) + (1 / p - 0.5) * vn**p - vb * kap ** (p - 1) + (p - 1) / p * kap**p
        Hp = vb * vn ** (p - 2) - kap ** (p - 1)
        return H, Hp
    if np.any(vb <= 0) and p <= 0:
        raise FormError("H-function with p <= 0 needs a positive shifted argument")
    if p == 0:
        return np.log(vb), 1.0 / vb
    return vb**p / p, vb ** (p - 1)


def h_limit(p: float, kappa: float, v):
    """Limit of p * H_n(v) as n -> infinity."""
    vb = np.maximum(np.asarray(v, dtype=float), 0.0) + kappa
    return vb**p - p * vb * kappa ** (p - 1) + (p - 1) * kappa**p


# ---------------------------------------------------------------- H.1 constants

@dataclass(frozen=True)
class H1Constants:
    C1: float
    C2: float
    beta: float
    a_eff: float
    kappa: float
    k: float
    D_fields: tuple  # ((D value, ExponentPair), ...)
    trace: dict
    C2_log: float | None = None  # cutoff constant of the logarithmic case (p = 0)


def derive_h1_constants(coeffs: AdaptedCoefficients, c_cut: float, R: float, eta: float = 0.1,
                        extra_C2: float = 0.0) -> H1Constants:
    """Constants of H.1a/H.1b/H.2 from the coefficient norms and the cutoff bound.

    The cutoff energy is at most c_cut / ((delta - delta') R)^2 per unit
    measure, so the Gamma(psi) term contributes C2 / |delta - delta'|^2.
    """
    kappa = coeffs.kappa
    nrm = coeffs.norm
    w = {k: nrm(k) for k in ("w1", "w2", "w3")}
    if kappa == 0 and any(v > 0 for v in w.values()):
        raise FormError("kappa = 0 with nonzero w-fields")
    wk = {k: (v / kappa if kappa > 0 else 0.0) for k, v in w.items()}
    a, ab = coeffs.a, coeffs.a_bar
    bw = nrm("b") ** 2 + wk["w1"] ** 2
    ew = nrm("e") ** 2 + wk["w3"] ** 2
    dw = nrm("d") + wk["w2"]
    c2 = nrm("c") ** 2

    C1_sub = bw + (4 / a) * c2 + ew + 2 * dw
    C1_sup = 2 * bw + ew + c2 / (eta * a) + dw
    cut = c_cut / R**2
    C2_sub = 4 * (4 * ab**2 / a + 1) * cut
    C2_sup = (4 * ab**2 / (a * eta) + 1) * cut
    C1 = max(C1_sub, C1_sup)
    C2 = max(C2_sub, C2_sup) + extra_C2
    # p = 0 needs no eta, and a drift correction has no logarithmic analogue
    C2_log = (4 * ab**2 / a + 1) * cut
    d_pair = coeffs.pair("d") if "d" in coeffs.exponents else None
    D = []
    if dw > 0:
        D.append((dw, d_pair))
    rest = [n for n in ("b", "c", "e", "w1", "w3") if nrm(n) > 0]
    if rest:
        D.append((2 * bw + ew + c2 / (eta * a), coeffs.pair(rest[0])))
    trace = {
        "C1_sub": C1_sub, "C1_sup": C1_sup, "C2_sub": C2_sub, "C2_sup": C2_sup,
        "C2_log": C2_log, "a_bar": ab, "extra_C2": extra_C2, "norms": dict(coeffs.norms), "c_cut": c_cut,
        "R": R,
    }
    return H1Constants(C1, C2, 1.0, min(a, 0.5), kappa, 2.0, tuple(D), trace, C2_log)


# ---------------------------------------------------------------- adaptedness

def verify_adaptedness(form: QuasilinearForm, coeffs: AdaptedCoefficients, probes) -> list[Report]:
    """Evaluate the coercivity and both sector conditions on (t, u, v, f, g) probes."""
    sp = form.ref
    mu = sp.mu
    nrm = coeffs.norm

    def rr(name):
        return coeffs.exponents.get(name, 2 * coeffs.nu)

    def lz(f, r, r1):
        return lorentz.lorentz_norm(f, mu, r, r1)

    def rdd(name):
        return ExponentPair(rr(name), math.inf, coeffs.gamma, coeffs.nu).r_dprime

    def rp2(name):
        return 2 * ExponentPair(rr(name), math.inf, coeffs.gamma, coeffs.nu).r_prime

    out = []
    fl = coeffs.fields
    zero = np.zeros(sp.n_nodes)
    for i, (t, u, v, f, g) in enumerate(probes):
        u, v, f, g = (np.asarray(x, dtype=float) for x in (u, v, f, g))
        gu = energy_measure(sp, u)
        gv = energy_measure(sp, v)
        dA = form.a_measure(t, u, u)
        low = -(fl.get("b", zero) ** 2 * u**2 + fl.get("w1", zero) ** 2) * mu
        slack = dA - (coeffs.a * gu + low)
        scale = float(np.max(np.abs(dA)) + np.max(np.abs(coeffs.a * gu)) + 1e-300)
        out.append(Report("coercivity", 0.0, float(np.min(slack)), 1e-10 * scale, inputs={"probe": i}))

        lhs = abs(math.fsum(f * g * form.a_measure(t, u, v)))
        rhs = (coeffs.a_bar * math.sqrt(math.fsum(f**2 * gu))
               + nrm("e") * lz(f * u, rdd("e"), 2) + nrm("w3") * lz(f, rdd("w3"), 2)) \
            * math.sqrt(math.fsum(g**2 * gv))
        out.append(Report("sector_A", lhs, rhs, 1e-10 * max(lhs, rhs), inputs={"probe": i}))

        lhs = abs(math.fsum(f * g * form.b_measure(t, u, v)))
        gvv = g * v
        rhs = (nrm("c") * math.sqrt(math.fsum(f**2 * gu)) * lz(gvv, rdd("c"), 2)
               + nrm("d") * lz(f * u, rp2("d"), 2) * lz(gvv, rp2("d"), 2)
               + nrm("w2") * lz(f, rp2("w2"), 2) * lz(gvv, rp2("w2"), 2))
        out.append(Report("sector_B", lhs, rhs, 1e-10 * max(lhs, rhs, 1e-300), inputs={"probe": i}))
    return out


# ---------------------------------------------------------------- H.1 / H.2 checks

def _field_arrays(u, window=None):
    times = np.asarray(u.times, dtype=float)
    values = np.asarray(u.values, dtype=float)
    if window is not None:
        lo, hi = window
        if times[0] > lo + 1e-12 or times[-1] < hi - 1e-12:
            raise FormError(f"field covers [{times[0]}, {times[-1]}], need [{lo}, {hi}]")
        sub = u.window(lo, hi)
        times, values = np.asarray(sub.times), np.asarray(sub.values)
    return times, values


def check_H1a(u, form: QuasilinearForm, family, p: float, n: float | None, delta_prime: float,
              delta: float, consts: H1Constants, psi: np.ndarray, gamma: float, nu: float,
              chi: Callable[[np.ndarray], np.ndarray] | None = None, window=None,
              rel_budget: float = 1e-8) -> Report:
    if p < 2:
        raise FormError("H.1a needs p >= 2")
    times, vals = _field_arrays(u, window)
    kap, a = consts.kappa, consts.a_eff
    hf = HFunction(p, kap, n)
    ub = hf.bar(vals)
    un = ub if n is None else np.minimum(ub, n)
    ch = np.ones_like(times) if chi is None else np.asarray(chi(times), dtype=float)
    _, Hp = h_eval(hf, vals)
    A, B = form.pairing(0.0, vals, Hp * psi**2) if _autonomous(form) else _pair_series(form, times, vals, Hp * psi**2)
    gu = energy_measure(form.ref, vals)
    w = un ** (p - 2) * psi**2
    inside = ub <= (np.inf if n is None else n)
    integrand = (-(A + B) + 0.5 * a * np.sum(w * gu, axis=1)
                 + (p - 2) / 4 * a * np.sum(np.where(inside, w, 0.0) * gu, axis=1)) * ch
    wt = trapezoid_weights(times)
    lhs = math.fsum(wt * integrand)
    B1 = family.ball(1.0)
    tn = triple_norm(ub * un ** ((p - 2) / 2) * psi * np.sqrt(ch)[:, None], times, form.space.mu,
                     gamma, nu, mask=B1).value
    mass = np.sum(ub**2 * un ** (p - 2) * psi * form.space.mu, axis=1) * ch
    gap = abs(delta - delta_prime) ** (-consts.k)
    rhs = p * consts.C1 * tn**2 + p**consts.beta * consts.C2 * gap * math.fsum(wt * mass)
    quad = quadrature_budget(integrand, times)
    scale = math.fsum(wt * np.abs(integrand)) + abs(rhs)
    items = {"quadrature": quad, "relative": rel_budget * scale}
    return Report("H1a", lhs, rhs, sum(items.values()), p=p, n=n,
                  inputs={"delta_prime": delta_prime, "delta": delta}, budget_items=items)


def _autonomous(form) -> bool:
    return getattr(form, "autonomous", True)


def _pair_series(form, times, vals, g):
    A = np.empty(times.size)
    B = np.empty(times.size)
    for i, t in enumerate(times):
        A[i], B[i] = form.pairing(t, vals[i], g[i])
    return A, B


def check_H1b(u, form: QuasilinearForm, family, p: float, epsilon: float, delta_prime: float,
              delta: float, consts: H1Constants, psi: np.ndarray, gamma: float, nu: float,
              eta: float = 0.1, chi=None, window=None, rel_budget: float = 1e-8) -> Report:
    if not (p < 0 or 0 < p < 1 - eta or 1 + eta < p < 2):
        raise FormError(f"p = {p} lies in an excluded band for eta = {eta}")
    if not 0 < epsilon < 1:
        raise FormError("epsilon must lie in (0, 1)")
    times, vals = _field_arrays(u, window)
    if np.any(vals < -1e-12):
        raise FormError("H.1b needs a nonnegative field")
    kap, a = consts.kappa, consts.a_eff
    hf = HFunction(p, kap, None, epsilon)
    ube = hf.bar(vals)
    _, Hp = h_eval(hf, vals)
    ch = np.ones_like(times) if chi is None else np.asarray(chi(times), dtype=float)
    A, B = form.pairing(0.0, vals, Hp * psi**2) if _autonomous(form) else _pair_series(form, times, vals, Hp * psi**2)
    gu = energy_measure(form.ref, vals)
    sgn = (1 - p) / abs(1 - p)
    integrand = (sgn * (A + B) + abs(p - 1) / 4 * a * np.sum(ube ** (p - 2) * psi**2 * gu, axis=1)) * ch
    wt = trapezoid_weights(times)
    lhs = math.fsum(wt * integrand)
    B1 = family.ball(1.0)
    tn = triple_norm(ube ** (p / 2) * psi, times, form.space.mu, gamma, nu, mask=B1).value
    mass = np.sum(ube**p * psi * form.space.mu, axis=1)
    gap = abs(delta - delta_prime) ** (-consts.k)
    rhs = max(1.0, abs(p)) * consts.C1 * tn**2 + max(1.0, abs(p) ** consts.beta) * consts.C2 * gap * math.fsum(wt * mass)
    quad = quadrature_budget(integrand, times)
    scale = math.fsum(wt * np.abs(integrand)) + abs(rhs)
    items = {"quadrature": quad, "relative": rel_budget * scale}
    return Report("H1b", lhs, rhs, sum(items.values()), p=p,
                  inputs={"epsilon": epsilon, "delta_prime": delta_prime, "delta": delta},
                  budget_items=items)


def check_H2(u, form: QuasilinearForm, family, epsilon: float, consts: H1Constants,
             psi: np.ndarray, delta_star: float, window=None, rel_budget: float = 1e-8) -> list[Report]:
    """Per-time check of H.2 (logarithmic case).

    The energy term enters with a plus sign, matching the p = 0 instance of
    the lower-order estimate; see the notes in the README.
    """
    times, vals = _field_arrays(u, window)
    if np.any(vals < -1e-12):
        raise FormError("H.2 needs a nonnegative field")
    kap, a = consts.kappa, consts.a_eff
    hf = HFunction(0.0, kap, None, epsilon)
    ube = hf.bar(vals)
    _, Hp = h_eval(hf, vals)
    A, B = form.pairing(0.0, vals, Hp * psi**2) if _autonomous(form) else _pair_series(form, times, vals, Hp * psi**2)
    gu = energy_measure(form.ref, vals)
    lhs = (A + B) + a * np.sum(ube**-2.0 * psi**2 * gu, axis=1)
    mu = form.space.mu
    C2 = consts.C2 if consts.C2_log is None else consts.C2_log
    rhs = C2 * abs(1 - delta_star) ** (-consts.k) * math.fsum(psi * mu)
    for D, pair in consts.D_fields:
        rhs += D * lorentz.lorentz_norm(psi, mu, 2 * pair.r_prime, 2) ** 2
    out = []
    for i, t in enumerate(times):
        out.append(Report("H2", float(lhs[i]), float(rhs),
                          rel_budget * (abs(float(lhs[i])) + abs(rhs)),
                          p=0.0, inputs={"t": float(t), "epsilon": epsilon}))
    return out
