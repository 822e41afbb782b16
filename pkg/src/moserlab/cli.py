"""Scenario runner: build a space and a form, certify, integrate, check, write a bundle.

A bundle directory holds

    config.json       resolved configuration (defaults merged in)
    reports.jsonl     one estimate report per line
    ledger.json       constant ledger with formulas and inputs
    trace.json        Moser level traces, Lorentz exponent grids, Bombieri traces
    field.txt         the integrated field
    summary.json      exit status, failures and unverified items
    metadata.json     timestamp and interpreter (excluded from replay comparison)
"""

from __future__ import annotations

import argparse
import copy
import csv
import datetime
import filecmp
import json
import math
import platform
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import forms as fm
from . import lorentz as lz
from . import mdspace as md
from . import moser as mo
from . import solver as so

SCHEMA_VERSION = 1
SCENARIOS = ("S1", "S2", "S3", "S4", "S5")
TABLE_KINDS = ("margins", "ledger", "iteration_trace", "lorentz_grid")
BUNDLE_FILES = ("config.json", "reports.jsonl", "ledger.json", "trace.json", "field.txt",
                "summary.json")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- configuration

_BASE = {
    "schema_version": SCHEMA_VERSION,
    "scenario": "S1",
    "seed": 0,
    "space": {"dims": [16, 16], "spacing": 0.125, "origin": [0.0, 0.0]},
    "initial": {"width": 0.3},
    "coefficients": {},
    "geometry": {
        "centers": [[8, 8]],
        "R": 0.75,
        "delta_star": 0.5,
        "delta": 0.5,
        "tau": [0.25, 0.5, 0.75, 1.0],
        "harnack_start": 0.25,
        "time_anchors": [0.3, 0.5, 0.8, 1.0],
        "schedule_slope": 0.2,
    },
    "exponents": {"nu": 2.5, "gamma": 0.25, "eta": 0.1, "beta": 1.0, "k": 2.0},
    "solver": {"t_end": 1.5, "rtol": 1e-10, "atol": 1e-12, "max_dt": 1e-3, "n_out": 301},
    "checks": {
        "cacciopoli_p": [2.0, 3.0, 4.0],
        "mve_sub_p": [2.0, 4.0],
        "mve_sup_p": [-1.0, 0.405],
        "h1b_p": [-1.0, 0.405, 1.5],
        "epsilon": 1e-3,
        "lambdas": [0.5, 1.0, 2.0, 4.0],
        "mve_levels": 5,
        "grid_size": 65,
        "n_probes": 20,
        "witness_widths": [0.3, 0.5, 0.8, 1.2, 2.0],
        "n_random_witnesses": 4,
        "n_snapshots": 9,
    },
    "ledger_overrides": {},
}

_SCENARIO_DEFAULTS = {
    "S1": {},
    "S2": {
        "coefficients": {"alpha_amplitude": 0.5, "d0": 0.5, "d_exponent": 4.0,
                         "singular_offset": [0.0625, 0.0625]},
    },
    "S3": {
        "space": {"dims": [12, 12], "spacing": 0.125, "origin": [-0.6875, -0.6875]},
        "initial": {"width": 0.2},
        "geometry": {"centers": [[6, 6]], "R": 0.5},
        "coefficients": {"drift": [[0.0, 0.0], [1.0, 0.0]], "probe_offsets": [0.0, 8.0, 32.0, 64.0],
                         "probe_slopes": [1.0, 4.0, -4.0, 16.0, -16.0]},
    },
    "S4": {
        "geometry": {"R": 1.5, "delta_star": 0.5},
        "coefficients": {"d0": 1.0, "w2": 0.5, "d_exponent": 4.0, "w2_exponent": 4.0,
                         "M": [0.0, 1.0]},
    },
    "S5": {
        "geometry": {"centers": [[8, 8], [9, 8], [10, 8]]},
        "coefficients": {"chain_times": [0.5, 1.0]},
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def default_config(scenario: str) -> dict:
    if scenario not in SCENARIOS:
        raise ConfigError(f"scenario: unknown id {scenario!r}, expected one of {SCENARIOS}")
    cfg = _merge(_BASE, _SCENARIO_DEFAULTS[scenario])
    cfg["scenario"] = scenario
    return cfg


def _check_types(user, ref, path: str) -> None:
    if isinstance(ref, dict):
        if not isinstance(user, dict):
            raise ConfigError(f"{path or 'config'}: expected an object")
        for k, v in user.items():
            where = f"{path}.{k}" if path else k
            if k not in ref:
                raise ConfigError(f"{where}: unknown field")
            _check_types(v, ref[k], where)
    elif isinstance(ref, list):
        if not isinstance(user, list):
            raise ConfigError(f"{path}: expected a list")
    elif isinstance(ref, bool) or isinstance(ref, str):
        if type(user) is not type(ref):
            raise ConfigError(f"{path}: expected {type(ref).__name__}")
    elif isinstance(ref, (int, float)):
        if isinstance(user, bool) or not isinstance(user, (int, float)):
            raise ConfigError(f"{path}: expected a number")


def resolve_config(user: dict) -> dict:
    """Validate a user config against the scenario defaults and merge them in."""
    if not isinstance(user, dict):
        raise ConfigError("config: expected an object")
    if "schema_version" not in user:
        raise ConfigError("schema_version: missing")
    if user["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: unsupported value {user['schema_version']!r}")
    if "scenario" not in user:
        raise ConfigError("scenario: missing")
    ref = default_config(user["scenario"])
    over = dict(user)
    overrides = over.pop("ledger_overrides", {})
    if not isinstance(overrides, dict) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in overrides.values()):
        raise ConfigError("ledger_overrides: expected an object of numbers")
    _check_types(over, ref, "")
    cfg = _merge(ref, over)
    cfg["ledger_overrides"] = dict(overrides)
    g = cfg["geometry"]
    if len(g["tau"]) != 4 or len(g["time_anchors"]) != 4:
        raise ConfigError("geometry.tau: need four values" if len(g["tau"]) != 4
                          else "geometry.time_anchors: need four values")
    if not 0 < cfg["exponents"]["gamma"] < 1:
        raise ConfigError("exponents.gamma: the Harnack pipeline needs 0 < gamma < 1")
    return cfg


def load_config(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: not valid JSON ({exc})") from None
    return resolve_config(data)


# ---------------------------------------------------------------- bundle state

@dataclass
class Run:
    cfg: dict
    reports: list = field(default_factory=list)
    ledger: mo.ConstantLedger = field(default_factory=mo.ConstantLedger)
    traces: dict = field(default_factory=lambda: {"iteration": [], "lorentz_grid": [], "bombieri": []})
    unverified: list = field(default_factory=list)
    solution: so.SpaceTimeField | None = None

    def add(self, rep: fm.Report, asserted: bool = True, scope: str = "") -> fm.Report:
        rec = rep.to_record()
        rec["asserted"] = bool(asserted)
        if scope:
            rec["scope"] = scope
        self.reports.append(rec)
        return rep

    def failures(self) -> list:
        return [r for r in self.reports if r["asserted"] and not r["pass"]]


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return x


def _dump(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=1) + "\n"


# ---------------------------------------------------------------- shared pieces

def _space(cfg) -> md.DirichletSpace:
    s = cfg["space"]
    return md.build_grid_space(tuple(s["dims"]), spacing=s["spacing"], origin=tuple(s["origin"]))


def _family(space, cfg, center) -> md.NestedFamily:
    g = cfg["geometry"]
    idx = md.lattice_index(tuple(cfg["space"]["dims"]), tuple(center))
    return md.nested_family(space, idx, g["R"], g["delta_star"], g["time_anchors"],
                            g["schedule_slope"])


def _gaussian(space, center_node, width):
    x = space.coords
    return np.exp(-np.sum((x - x[center_node]) ** 2, axis=1) / (2 * width**2))


def _times(cfg):
    s = cfg["solver"]
    return np.linspace(0.0, s["t_end"], int(s["n_out"]))


def _integrate(form, u0, cfg, **kw):
    s = cfg["solver"]
    return so.integrate(form, u0, (0.0, s["t_end"]), rtol=s["rtol"], atol=s["atol"],
                        max_dt=s["max_dt"], out_times=_times(cfg), **kw)


def _probes(space, fam, rng, n, times, interior=None):
    """Nonnegative tent functions in B_1 and random output-time pairs."""
    nodes = np.flatnonzero(fam.ball(1.0) if interior is None else interior)
    probes, pairs = [], []
    for i in range(n):
        c = int(rng.choice(nodes))
        r = float(rng.uniform(0.2, 0.5))
        d = np.sqrt(np.sum((space.coords - space.coords[c]) ** 2, axis=1))
        phi = np.clip(1 - d / r, 0.0, 1.0)
        if interior is not None:
            phi = np.where(interior, phi, 0.0)
        probes.append(phi)
        ta, tb = np.sort(rng.choice(times.size, 2, replace=False))
        pairs.append((i, (float(times[ta]), float(times[tb]))))
    return probes, pairs


def _certify_weak(run, u, form, probes, pairs, interior=None, scope=""):
    cert = so.certify_weak(u, form, probes, pairs, "solution", 1e-8, interior)
    worst = int(np.argmax(np.abs(cert.residuals) - cert.budgets))
    run.add(fm.Report("weak_solution", float(np.max(np.abs(cert.residuals) - cert.budgets)), 0.0, 0.0,
                      inputs={"n_probes": len(pairs), "worst_probe": worst,
                              "max_residual": float(np.max(np.abs(cert.residuals))),
                              "max_budget": cert.budget}), scope=scope)
    return cert


def _exponents_used(cfg) -> list:
    """Every p whose power enters a Sobolev step, including the Moser ladder p theta^i."""
    ex, ch = cfg["exponents"], cfg["checks"]
    theta = (ex["nu"] + 2) / ex["nu"]
    ps = set(float(p) for p in ch["cacciopoli_p"])
    for p in list(ch["mve_sub_p"]) + list(ch["mve_sup_p"]):
        for i in range(int(ch["mve_levels"]) + 1):
            ps.add(float(p) * theta**i)
    return sorted(ps)


def _radius_pairs(cfg) -> list:
    g, ch = cfg["geometry"], cfg["checks"]
    ds = g["delta_star"]
    radii = mo.moser_radii(ds, 1.0, int(ch["mve_levels"]))
    pairs = {(ds, 1.0)}
    pairs.update(zip(radii[1:], radii[:-1]))
    return sorted(pairs)


def _witnesses(space, fam, cfg, rng, snapshots, shift):
    """Declared positive witnesses plus the run's own snapshots (shifted by kappa/epsilon)."""
    ch = cfg["checks"]
    out = [np.ones(space.n_nodes)]
    out += [_gaussian(space, fam.center, w) for w in ch["witness_widths"]]
    out += [rng.uniform(0.5, 1.5, space.n_nodes) for _ in range(int(ch["n_random_witnesses"]))]
    out += [np.maximum(s, 0.0) + shift for s in snapshots]
    return out


def _snapshots(u, cfg):
    n = int(cfg["checks"]["n_snapshots"])
    return [u.at(t) for t in np.linspace(u.times[0], u.times[-1], n)]


# ---------------------------------------------------------------- Harnack-type scenarios

def _certify_geometry(run, space_ref, fam, cfg, rng, u, kappa, scope):
    """wSI on every radius pair used and wPI for log of the shifted field."""
    ex, ch = cfg["exponents"], cfg["checks"]
    eps = ch["epsilon"]
    snaps = _snapshots(u, cfg)
    wit_sub = _witnesses(space_ref, fam, cfg, rng, snaps, kappa)
    wit_sup = [w + eps for w in wit_sub[-len(snaps):]]
    ps = _exponents_used(cfg)
    pos = [p for p in ps if p >= 2]
    pairs = _radius_pairs(cfg)
    wset = [(w, ps) for w in wit_sub if np.all(w > 0)] + [(w, pos) for w in wit_sub if not np.all(w > 0)]
    wset += [(w, ps) for w in wit_sup]
    first, *rest = pairs
    cert = md.certify_sobolev(space_ref, fam, first[0], first[1], ex["nu"], wset, k=ex["k"],
                              extra_pairs=rest)
    run.add(fm.Report("wSI_certificate", 0.0, 1.0 if cert.recheck() else -1.0,
                      inputs={"C_SI": cert.C_SI, "C_SI0": cert.C_SI0, "rows": len(cert.rows),
                              "pairs": pairs}), scope=scope)
    delta = cfg["geometry"]["delta"]
    pos_w = [w + eps for w in wit_sub if np.all(w + eps > 0)]
    C_wPI = md.certify_poincare(space_ref, fam, delta, 1.0, pos_w)
    run.add(fm.Report("wPI_certificate", 0.0, 1.0, inputs={"C_wPI": C_wPI, "witnesses": len(pos_w)}),
            scope=scope)
    c_cut = max(md.build_cutoff(space_ref, fam, a, b).c_cut for a, b in pairs + [(delta, 1.0)])
    return cert, C_wPI, c_cut


def _fill_ledger(run, cfg, h1, cert_C_SI, cert_C_SI0, C_wPI, fam, C3):
    L, ex, g = run.ledger, cfg["exponents"], cfg["geometry"]
    vals = {
        "a": h1.a_eff, "a_bar": h1.trace["a_bar"],
        "C1": h1.C1, "C2": h1.C2, "C3": C3,
        "C_SI_certified": cert_C_SI, "C_SI": max(cert_C_SI, 1.0), "C_SI0": cert_C_SI0,
        "C_wPI": C_wPI, "nu": ex["nu"], "gamma": ex["gamma"], "k": ex["k"], "beta": ex["beta"],
        "eta": ex["eta"], "kappa": h1.kappa, "D_sum": float(sum(d for d, _ in h1.D_fields)),
        "R": fam.R, "delta_star": g["delta_star"],
    }
    for i, t in enumerate(g["tau"], 1):
        vals[f"tau{i}"] = t
    for name, v in vals.items():
        v = run.cfg["ledger_overrides"].get(name, v)
        L.hyp(name, v, "override" if name in run.cfg["ledger_overrides"] else "certified")


def _h_checks(run, u, form, fam, h1, cfg, psi, scope="", h2_asserted=True):
    ex, ch = cfg["exponents"], cfg["checks"]
    ds = cfg["geometry"]["delta_star"]
    for p in ch["cacciopoli_p"]:
        run.add(fm.check_H1a(u, form, fam, p, None, ds, 1.0, h1, psi, ex["gamma"], ex["nu"]),
                scope=scope)
    if np.all(u.values >= -1e-12):
        for p in ch["h1b_p"]:
            run.add(fm.check_H1b(u, form, fam, p, ch["epsilon"], ds, 1.0, h1, psi, ex["gamma"],
                                 ex["nu"], ex["eta"]), scope=scope)
        h2 = fm.check_H2(u, form, fam, ch["epsilon"], h1, psi, ds)
        worst = min(h2, key=lambda r: r.margin + r.budget)
        worst.inputs["n_times"] = len(h2)
        worst.inputs["n_negative"] = sum(not r.passed for r in h2)
        run.add(worst, asserted=h2_asserted, scope=scope)
        return worst
    return None


def _moser_checks(run, u, setting, cfg, scope=""):
    L, ch, ex = run.ledger, cfg["checks"], cfg["exponents"]
    ds = cfg["geometry"]["delta_star"]
    eps = ch["epsilon"]
    for p in ch["cacciopoli_p"]:
        run.add(mo.cacciopoli_subsol(u, setting, L, p, ds, 1.0), scope=scope)
    for p in ch["mve_sup_p"]:
        run.add(mo.cacciopoli_supsol(u, setting, L, p, eps, ds, 1.0), scope=scope)
    run.add(mo.suptime_energy(u, setting, L, ds, 1.0).report, scope=scope)
    levels = int(ch["mve_levels"])
    for kind, plist in (("sub", ch["mve_sub_p"]), ("sup", ch["mve_sup_p"])):
        for p in plist:
            if kind == "sub":
                rep, trace = mo.mve_subsol(u, setting, L, p, ds, 1.0, levels)
                interval = setting.family.I_minus
                shift = L["kappa"]
            else:
                rep, trace = mo.mve_supsol(u, setting, L, p, eps, ds, 1.0, levels)
                interval = setting.family.I_minus if p < 0 else setting.family.I_plus
                shift = L["kappa"] + eps
            run.add(rep, scope=scope)
            idx = len(run.reports) - 1
            for lv in trace:
                run.traces["iteration"].append({
                    "report": idx, "check": rep.check, "p": p, "level": lv.level, "delta": lv.delta,
                    "exponent": lv.exponent, "norm": lv.norm, "bound_ok": lv.bound_ok})
            w = u.window(*interval(1.0))
            vals = (np.maximum(w.values, 0) + shift) ** (p / 2)
            tn = lz.triple_norm(vals, w.times, setting.mu, ex["gamma"], ex["nu"],
                                mask=setting.family.ball(1.0), grid_size=setting.grid_size)
            for rp, qp, v in tn.per_pair:
                run.traces["lorentz_grid"].append({"report": idx, "check": rep.check, "p": p,
                                                   "r_prime": rp, "q_prime": qp, "value": v})


def _harnack_block(run, u, setting, cfg, geom, mu_B1, certified_missing=(), scope=""):
    L, ch = run.ledger, cfg["checks"]
    g = cfg["geometry"]
    eps = ch["epsilon"]
    for branch in ("+", "-"):
        reps, _ = mo.log_lemma(u, setting, L, eps, g["delta"], ch["lambdas"], geom, branch)
        for r in reps:
            run.add(r, scope=scope)
    mo.harnack_constant(L, geom, mu_B1)
    bad = L.replay()
    run.add(fm.Report("ledger_replay", float(len(bad)), 0.0, 0.0,
                      inputs={"mismatched": sorted(bad)}), scope=scope)
    for name, (base, moved, ok) in mo.monotonicity_audit(L).items():
        run.add(fm.Report("monotonicity", base, moved, 1e-12 * abs(base), inputs={"constant": name}),
                scope=scope)
    _bombieri_traces(run, u, setting, geom, cfg)


def _bombieri_traces(run, u, setting, geom, cfg):
    L = run.ledger
    eps = cfg["checks"]["epsilon"]
    fam = setting.family
    B1 = fam.ball(1.0)
    psi = setting.cutoff(cfg["geometry"]["delta"], 1.0).values
    w2 = psi**2 * setting.mu
    anchor = np.log(np.maximum(u.at(geom.anchor), 0) + L["kappa"] + eps)
    c = math.fsum(anchor * w2) / math.fsum(w2)
    lK = lz.quasi_triangle_constant(2 / L["gamma"], 2)
    for branch, span, sgn in (("early", geom.early(1.0), 1.0), ("late", geom.late(1.0), -1.0)):
        w = u.window(*span)
        logf = sgn * (np.log(np.maximum(w.values[:, B1], 0) + L["kappa"] + eps) - c)
        log_phi = max(float(np.max(logf)), 0.0)
        res = mo.bombieri_constant(L[f"A1[{branch}]"], L["k1"], L[f"A2[{branch}]"], L["k"],
                                   L["gamma"], L["eta"], geom.delta_star, lK, log_phi=log_phi)
        run.traces["bombieri"].append({
            "branch": branch, "log_A3": res.log_A3, "log_A": res.log_A, "exponent": res.exponent,
            "n_terms": res.n_terms, "cases": res.cases, "first_log_terms": res.log_terms[:8]})
        b = res.cases["bounds_at_phi"]
        top = b[res.cases["binding"]]
        run.add(fm.Report("bombieri_trace", max(v for k, v in b.items() if k != res.cases["binding"]),
                          top, 0.0, inputs={"branch": branch, "binding": res.cases["binding"],
                                            "log_phi": log_phi}))


def _geometry(cfg) -> mo.HarnackGeometry:
    g = cfg["geometry"]
    return mo.HarnackGeometry(g["harnack_start"], tuple(g["tau"]), g["delta_star"])


def _run_harnack(run: Run, form, space, coeffs, u0, rng, extra=None):
    cfg = run.cfg
    ex, g = cfg["exponents"], cfg["geometry"]
    fams = [_family(space, cfg, c) for c in g["centers"]]
    fam = fams[0]
    ref = form.ref
    probes_ad = [(0.0, rng.normal(size=space.n_nodes), rng.normal(size=space.n_nodes),
                  rng.uniform(0, 1, space.n_nodes), rng.uniform(0, 1, space.n_nodes))
                 for _ in range(cfg["checks"]["n_probes"])]
    for r in fm.verify_adaptedness(form, coeffs, probes_ad):
        run.add(r, scope="adaptedness")
    u = _integrate(form, u0, cfg)
    run.solution = u
    probes, pairs = _probes(space, fam, rng, cfg["checks"]["n_probes"], _times(cfg))
    _certify_weak(run, u, form, probes, pairs)

    kappa = coeffs.kappa
    certs = [_certify_geometry(run, ref, f, cfg, rng, u, kappa, scope=f"center{i}")
             for i, f in enumerate(fams)]
    C_SI = max(c.C_SI for c, _, _ in certs)
    C_SI0 = max(c.C_SI0 for c, _, _ in certs)
    C_wPI = max(w for _, w, _ in certs)
    c_cut = max(cc for _, _, cc in certs)
    h1 = fm.derive_h1_constants(coeffs, c_cut, fam.R, ex["eta"])
    geom = _geometry(cfg)
    C3 = max(fam.C3, geom.C3())
    _fill_ledger(run, cfg, h1, C_SI, C_SI0, C_wPI, fam, C3)
    setting = mo.Setting(form, fam, cfg["checks"]["grid_size"])
    psi = setting.cutoff(g["delta_star"], 1.0).values
    _h_checks(run, u, form, fam, h1, cfg, psi)
    _moser_checks(run, u, setting, cfg)
    mu_B1 = float(np.sum(space.mu[fam.ball(1.0)]))
    _harnack_block(run, u, setting, cfg, geom, mu_B1)
    verdicts = []
    for i, f in enumerate(fams):
        hv = mo.harnack_verify(u, f, run.ledger, geom, g["delta"], kappa)
        run.add(hv.report, scope=f"center{i}")
        verdicts.append(hv)
    if extra is not None:
        extra(run, u, fams, verdicts)
    return u


def run_s1(run: Run, rng):
    cfg = run.cfg
    space = _space(cfg)
    form = fm.heat_form(space)
    ex = cfg["exponents"]
    fam = _family(space, cfg, cfg["geometry"]["centers"][0])
    coeffs = fm.certify_coefficients(space, 1.0, 1.0, {}, {}, ex["gamma"], ex["nu"])
    u0 = _gaussian(space, fam.center, cfg["initial"]["width"])
    _run_harnack(run, form, space, coeffs, u0, rng)


def _s2_form(space, cfg, fam):
    co, ex = cfg["coefficients"], cfg["exponents"]
    amp = co["alpha_amplitude"]
    x0 = space.coords[fam.center] + np.asarray(co["singular_offset"])
    r = co["d_exponent"]
    dist = np.sqrt(np.sum((space.coords - x0) ** 2, axis=1))
    if np.any(dist == 0):
        raise ConfigError("coefficients.singular_offset: singular point sits on a node")
    d = co["d0"] * dist ** (-space.coords.shape[1] / r)
    coeffs = fm.certify_coefficients(space, 1 - amp, 1 + amp, {"d": d}, {"d": r}, ex["gamma"],
                                     ex["nu"], mask=fam.ball(1.0))
    form = fm.build_aronson_serrin_form(space, coeffs, lambda t, u: 1 + amp * np.sin(u))
    return form, coeffs


def run_s2(run: Run, rng):
    cfg = run.cfg
    space = _space(cfg)
    fam = _family(space, cfg, cfg["geometry"]["centers"][0])
    form, coeffs = _s2_form(space, cfg, fam)
    u0 = _gaussian(space, fam.center, cfg["initial"]["width"])
    _run_harnack(run, form, space, coeffs, u0, rng)


def run_s5(run: Run, rng):
    cfg = run.cfg
    space = _space(cfg)
    form = fm.heat_form(space)
    ex, g = cfg["exponents"], cfg["geometry"]
    fam = _family(space, cfg, g["centers"][0])
    coeffs = fm.certify_coefficients(space, 1.0, 1.0, {}, {}, ex["gamma"], ex["nu"])
    u0 = _gaussian(space, fam.center, cfg["initial"]["width"])

    def chain(run, u, fams, verdicts):
        s, t = cfg["coefficients"]["chain_times"]
        path = [f.center for f in fams]
        length = float(space.distances_from(path[0])[path[-1]])
        links = [bool(v.passed) for v in verdicts[1:]]
        rep = mo.pointwise_estimate(u, path, (s, t), run.ledger["loglog_C_PHI"], fam.R,
                                    g["delta"] * fam.R, length, run.ledger["kappa"], links)
        run.add(rep, scope="chain")

    _run_harnack(run, form, space, coeffs, u0, rng, extra=chain)


def run_s3(run: Run, rng):
    """Kolmogorov: H.1a and mean value bounds certified, H.2 probed and reported."""
    cfg = run.cfg
    co, ex, g, ch = cfg["coefficients"], cfg["exponents"], cfg["geometry"], cfg["checks"]
    space = _space(cfg)
    form = so.build_kolmogorov_form(space, co["drift"])
    fam = _family(space, cfg, g["centers"][0])
    coeffs = fm.certify_coefficients(form.ref, 1.0, 1.0, {}, {}, ex["gamma"], ex["nu"])
    u0 = _gaussian(space, fam.center, cfg["initial"]["width"])
    u = _integrate(form, u0, cfg)
    run.solution = u
    probes, pairs = _probes(space, fam, rng, ch["n_probes"], _times(cfg))
    _certify_weak(run, u, form, probes, pairs)

    cert, _, c_cut = _certify_geometry(run, form.ref, fam, cfg, rng, u, 0.0, scope="center0")
    # the transport term integrates by parts into a zero-order term bounded by |Bx| on the grid
    drift_bound = 2 * float(np.max(np.abs(space.coords @ np.asarray(co["drift"]).T))) / fam.R
    h1 = fm.derive_h1_constants(coeffs, c_cut, fam.R, ex["eta"], extra_C2=drift_bound)
    _fill_ledger(run, cfg, h1, cert.C_SI, cert.C_SI0, 0.0, fam, fam.C3)
    del run.ledger.entries["C_wPI"]  # no weighted Poincare inequality is available here
    setting = mo.Setting(form, fam, ch["grid_size"])
    psi = setting.cutoff(g["delta_star"], 1.0).values
    _h_checks(run, u, form, fam, h1, cfg, psi, scope="solution", h2_asserted=False)
    h2_negative = _kolmogorov_probes(run, cfg, h1)
    if h2_negative:
        run.unverified.append("H2")
    run.unverified.append("wPI")
    _moser_checks(run, u, setting, cfg)
    geom = _geometry(cfg)
    hv = mo.harnack_verify(u, fam, run.ledger, geom, g["delta"], 0.0, unverified=run.unverified)
    run.add(hv.report, asserted=False)


def _kolmogorov_probes(run, cfg, h1_center) -> int:
    """H.1a and H.2 on stationary probe fields exp(-s x2) over balls shifted along x1."""
    co, ex, g, ch = cfg["coefficients"], cfg["exponents"], cfg["geometry"], cfg["checks"]
    s = cfg["space"]
    n_neg = 0
    for off in co["probe_offsets"]:
        origin = (s["origin"][0] + off, s["origin"][1])
        space = md.build_grid_space(tuple(s["dims"]), spacing=s["spacing"], origin=origin)
        form = so.build_kolmogorov_form(space, co["drift"])
        fam = _family(space, cfg, g["centers"][0])
        coeffs = fm.certify_coefficients(form.ref, 1.0, 1.0, {}, {}, ex["gamma"], ex["nu"])
        cut = md.build_cutoff(form.ref, fam, g["delta_star"], 1.0)
        drift_bound = 2 * float(np.max(np.abs(space.coords @ np.asarray(co["drift"]).T))) / fam.R
        h1 = fm.derive_h1_constants(coeffs, cut.c_cut, fam.R, ex["eta"], extra_C2=drift_bound)
        x2 = space.coords[:, 1] - space.coords[fam.center, 1]
        for slope in co["probe_slopes"]:
            f = np.exp(-slope * x2)
            U = so.SpaceTimeField(np.array([0.0, 0.5, 1.0]), np.tile(f, (3, 1)))
            scope = f"probe_offset={off:g},slope={slope:g}"
            for p in ch["cacciopoli_p"]:
                run.add(fm.check_H1a(U, form, fam, p, None, g["delta_star"], 1.0, h1, cut.values,
                                     ex["gamma"], ex["nu"]), scope=scope)
            rep = fm.check_H2(U, form, fam, ch["epsilon"], h1, cut.values, g["delta_star"])[0]
            if not rep.passed:
                rep.status = "unverified"
                n_neg += 1
            run.add(rep, asserted=False, scope=scope)
    return n_neg


def run_s4(run: Run, rng):
    """Zero-outside-U evolution with bounded absorption and a source; u0 <= 0 in U."""
    cfg = run.cfg
    co, ex, g, ch = cfg["coefficients"], cfg["exponents"], cfg["geometry"], cfg["checks"]
    space = _space(cfg)
    fam = _family(space, cfg, g["centers"][0])
    U = fam.ball(g["delta_star"])
    n = space.n_nodes
    d = np.where(U, co["d0"], 0.0)
    w2 = np.where(U, co["w2"], 0.0)
    coeffs = fm.certify_coefficients(space, 1.0, 1.0, {"d": d, "w2": w2},
                                     {"d": co["d_exponent"], "w2": co["w2_exponent"]},
                                     ex["gamma"], ex["nu"], mask=U)
    form = fm.build_aronson_serrin_form(space, coeffs, lambda t, u: np.ones_like(u))
    u0 = -_gaussian(space, fam.center, cfg["initial"]["width"]) * U
    u = _integrate(form, u0, cfg, boundary="zero-outside-U", interior=U)
    run.solution = u
    probes, pairs = _probes(space, fam, rng, ch["n_probes"], _times(cfg), interior=U)
    _certify_weak(run, u, form, probes, pairs, interior=U)

    # Sobolev constants for functions supported in U, where the cutoff of (delta*, 1) is 1
    snaps = [np.maximum(s, 0.0) for s in _snapshots(u, cfg)]
    wit = [np.where(U, 1.0, 0.0)] + [_gaussian(space, fam.center, w) * U for w in ch["witness_widths"]]
    wit += [rng.uniform(0.5, 1.5, n) * U for _ in range(int(ch["n_random_witnesses"]))]
    wit += [s for s in snaps if np.any(s > 0)]
    wit += [np.maximum(s + M, 0.0) * U for s in _snapshots(u, cfg) for M in co["M"]]
    cert = md.certify_sobolev(space, fam, g["delta_star"], 1.0, ex["nu"], [(w, [2.0]) for w in wit],
                              k=ex["k"])
    run.add(fm.Report("wSI_certificate", 0.0, 1.0 if cert.recheck() else -1.0,
                      inputs={"C_SI": cert.C_SI, "C_SI0": cert.C_SI0, "rows": len(cert.rows)}))
    cut = md.build_cutoff(space, fam, g["delta_star"], 1.0)
    h1 = fm.derive_h1_constants(coeffs, cut.c_cut, fam.R, ex["eta"])
    _fill_ledger(run, cfg, h1, cert.C_SI, cert.C_SI0, 0.0, fam, fam.C3)
    mu_U = float(np.sum(space.mu[U]))
    for M in co["M"]:
        start = float(np.max(np.maximum(u.values[0, U] - M, 0.0)))
        run.add(fm.Report("max_principle_start", start, 0.0, 1e-12, inputs={"M": M}))
        rep = mo.maximum_principle_check(u, run.ledger, M, ((0.0, cfg["solver"]["t_end"]), U),
                                         "zero-outside-U", 0.0, coeffs.norm("d"), 0.0,
                                         coeffs.norm("w2"), mu_U)
        run.add(rep)
        expected = (0.0 + coeffs.norm("d")) * abs(M) + 0.0 + coeffs.norm("w2")
        got = rep.inputs["kappa_M"]
        run.add(fm.Report("kappa_shift", abs(got - expected), 1e-14 * max(1.0, expected), 0.0,
                          inputs={"M": M, "kappa_M": got, "expected": expected}))


RUNNERS = {"S1": run_s1, "S2": run_s2, "S3": run_s3, "S4": run_s4, "S5": run_s5}


# ---------------------------------------------------------------- bundle I/O

def run_scenario(cfg: dict, out_dir, strict: bool = False) -> int:
    """Run a resolved config and write its bundle; return the exit status."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run = Run(cfg)
    rng = np.random.default_rng(int(cfg["seed"]))
    error = None
    try:
        RUNNERS[cfg["scenario"]](run, rng)
    except (md.CertificationError, md.GeometryError, fm.FormError, so.SolverError,
            mo.LedgerError) as exc:
        error = f"{type(exc).__name__}: {exc}"
    failures = run.failures()
    status = 0
    if error is not None:
        status = 2
    elif failures or (strict and run.unverified):
        status = 1
    summary = {
        "scenario": cfg["scenario"], "exit_status": status, "error": error,
        "n_reports": len(run.reports),
        "failures": [{"check": r["check"], "scope": r.get("scope", ""), "margin": r["margin"],
                      "budget": r["budget"]} for r in failures],
        "unverified": run.unverified, "strict": strict,
    }
    (out / "config.json").write_text(_dump(cfg))
    with open(out / "reports.jsonl", "w") as fh:
        for rec in run.reports:
            fh.write(json.dumps(_jsonable(rec), sort_keys=True) + "\n")
    (out / "ledger.json").write_text(_dump(run.ledger.to_dict()))
    (out / "trace.json").write_text(_dump(run.traces))
    if run.solution is not None:
        so.save_field(run.solution, out / "field.txt")
    else:
        (out / "field.txt").write_text("")
    (out / "summary.json").write_text(_dump(summary))
    meta = {"created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "python": platform.python_version(), "numpy": np.__version__, "version": __version__}
    (out / "metadata.json").write_text(_dump(meta))
    return status


def replay_bundle(bundle, strict: bool | None = None) -> tuple[bool, list]:
    """Re-run a bundle's config into a scratch directory and compare every file but metadata."""
    bundle = Path(bundle)
    cfg = resolve_config(json.loads((bundle / "config.json").read_text()))
    if strict is None:
        strict = bool(json.loads((bundle / "summary.json").read_text()).get("strict", False))
    with tempfile.TemporaryDirectory() as tmp:
        run_scenario(cfg, tmp, strict)
        diffs = [name for name in BUNDLE_FILES
                 if not filecmp.cmp(bundle / name, Path(tmp) / name, shallow=False)]
    led = mo.ConstantLedger.from_dict(json.loads((bundle / "ledger.json").read_text()))
    diffs += [f"ledger:{k}" for k in led.replay()]
    return not diffs, diffs


def _read_reports(bundle: Path) -> list:
    with open(bundle / "reports.jsonl") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _as_float(x) -> float:
    """Inverse of the JSON encoding of non-finite floats; missing sorts last."""
    return math.inf if x is None else float(x)


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    if x is None:
        return ""
    return str(x)


def emit_tables(bundle, kinds) -> list:
    bundle = Path(bundle)
    unknown = [k for k in kinds if k not in TABLE_KINDS]
    if unknown:
        raise ConfigError(f"tables: unknown kind(s) {unknown}, expected {TABLE_KINDS}")
    written = []
    for kind in kinds:
        path = bundle / f"{kind}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if kind == "margins":
                cols = ["index", "check", "scope", "p", "n", "margin", "lhs", "rhs", "budget", "pass",
                        "asserted", "status"]
                w.writerow(cols)
                reps = list(enumerate(_read_reports(bundle)))
                reps.sort(key=lambda ir: (_as_float(ir[1]["margin"]), ir[0]))
                for i, r in reps:
                    w.writerow([i, r["check"], r.get("scope", ""), _fmt(r["p"]), _fmt(r["n"]),
                                _fmt(r["margin"]), _fmt(r["lhs"]), _fmt(r["rhs"]), _fmt(r["budget"]),
                                r["pass"], r["asserted"], r.get("status", "")])
            elif kind == "ledger":
                w.writerow(["name", "value", "rule", "formula", "inputs"])
                for name, e in json.loads((bundle / "ledger.json").read_text()).items():
                    w.writerow([name, _fmt(e["value"]), e["rule"] or "", e["formula"],
                                json.dumps(e["inputs"], sort_keys=True)])
            elif kind == "iteration_trace":
                cols = ["report", "check", "p", "level", "delta", "exponent", "norm", "bound_ok"]
                w.writerow(cols)
                for row in json.loads((bundle / "trace.json").read_text())["iteration"]:
                    w.writerow([_fmt(row[c]) for c in cols])
            else:
                cols = ["report", "check", "p", "r_prime", "q_prime", "value"]
                w.writerow(cols)
                for row in json.loads((bundle / "trace.json").read_text())["lorentz_grid"]:
                    w.writerow([_fmt(row[c]) for c in cols])
        written.append(path)
    return written


# ---------------------------------------------------------------- entry point

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="moserlab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run a scenario config and write a bundle")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--out-dir", default=None)
    r.add_argument("--strict", action="store_true", help="treat unverified items as failures")
    p = sub.add_parser("replay", help="re-run a bundle and compare it byte for byte")
    p.add_argument("bundle")
    p.add_argument("--strict", action="store_true", default=None)
    t = sub.add_parser("tables", help="write CSV tables from a bundle")
    t.add_argument("bundle")
    t.add_argument("--kinds", nargs="+", default=list(TABLE_KINDS))
    c = sub.add_parser("config", help="print the default config of a scenario")
    c.add_argument("scenario", choices=SCENARIOS)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.cmd == "config":
            sys.stdout.write(_dump(default_config(args.scenario)))
            return 0
        if args.cmd == "run":
            cfg = load_config(args.config)
            if args.seed is not None:
                cfg["seed"] = args.seed
            out = args.out_dir or f"bundle-{cfg['scenario']}-seed{cfg['seed']}"
            status = run_scenario(cfg, out, args.strict)
            summary = json.loads((Path(out) / "summary.json").read_text())
            print(f"{cfg['scenario']}: {summary['n_reports']} reports, "
                  f"{len(summary['failures'])} failed, unverified: {summary['unverified'] or 'none'}")
            for f in summary["failures"]:
                print(f"  FAILED {f['check']} {f['scope']} margin={f['margin']:.3e}")
            if summary["error"]:
                print(f"  ERROR {summary['error']}")
            print(f"bundle written to {out}")
            return status
        if args.cmd == "replay":
            ok, diffs = replay_bundle(args.bundle, args.strict)
            print("replay identical" if ok else "replay differs: " + ", ".join(diffs))
            return 0 if ok else 1
        if args.cmd == "tables":
            for p in emit_tables(args.bundle, args.kinds):
                print(p)
            return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
