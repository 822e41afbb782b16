"""Time integration of mu du/dt = -(div A-flux + mu B) and weak-residual certificates."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .forms import FormError, QuasilinearForm, quadrature_budget
from .lorentz import trapezoid_weights
from .mdspace import DirichletSpace, edge_axis

FIELD_SCHEMA = 1


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class ResidualCertificate:
    mode: str
    probes: tuple  # (probe index, t_a, t_b)
    residuals: np.ndarray
    budgets: np.ndarray
    rel: float

    @property
    def passed(self) -> bool:
        r, b = self.residuals, self.budgets
        if self.mode == "solution":
            return bool(np.all(np.abs(r) <= b))
        if self.mode == "subsolution":
            return bool(np.all(r <= b))
        return bool(np.all(r >= -b))

    @property
    def budget(self) -> float:
        return float(np.max(self.budgets)) if self.budgets.size else 0.0


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """Node values at increasing times; linear interpolation in between."""

    times: np.ndarray
    values: np.ndarray
    space_hash: str = ""
    certificate: ResidualCertificate | None = field(default=None, repr=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or v.ndim != 2 or v.shape[0] != t.size:
            raise ValueError("values must be (len(times), n_nodes)")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite entries")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def at(self, t: float) -> np.ndarray:
        ts = self.times
        if t < ts[0] - 1e-12 or t > ts[-1] + 1e-12:
            raise ValueError(f"time {t} outside [{ts[0]}, {ts[-1]}]")
        j = int(np.searchsorted(ts, t))
        if j < ts.size and abs(ts[j] - t) <= 1e-12:
            return self.values[j].copy()
        if j > 0 and abs(ts[j - 1] - t) <= 1e-12:
            return self.values[j - 1].copy()
        j = min(max(j, 1), ts.size - 1)
        s = (t - ts[j - 1]) / (ts[j] - ts[j - 1])
        return (1 - s) * self.values[j - 1] + s * self.values[j]

    def window(self, lo: float, hi: float) -> "SpaceTimeField":
        """Restriction to [lo, hi] with interpolated endpoints inserted."""
        ts = self.times
        inner = (ts > lo + 1e-12) & (ts < hi - 1e-12)
        times = np.concatenate(([lo], ts[inner], [hi]))
        vals = np.vstack([self.at(lo)[None], self.values[inner], self.at(hi)[None]])
        return SpaceTimeField(times, vals, self.space_hash)

    def with_certificate(self, cert: ResidualCertificate) -> "SpaceTimeField":
        return replace(self, certificate=cert)

    def shifted(self, offset) -> "SpaceTimeField":
        return SpaceTimeField(self.times, self.values + offset, self.space_hash)


def save_field(u: SpaceTimeField, path) -> None:
    """Header line (JSON) then one line of node values per time; repr keeps floats exact."""
    header = {"schema_version": FIELD_SCHEMA, "space_hash": u.space_hash,
              "n_times": int(u.times.size), "n_nodes": int(u.values.shape[1])}
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for t, row in zip(u.times, u.values):
            fh.write(repr(float(t)) + " " + " ".join(repr(float(x)) for x in row) + "\n")


def load_field(path) -> SpaceTimeField:
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("schema_version") != FIELD_SCHEMA:
            raise ValueError("unsupported field schema_version")
        rows = [list(map(float, line.split())) for line in fh if line.strip()]
    arr = np.array(rows, dtype=float).reshape(header["n_times"], header["n_nodes"] + 1)
    return SpaceTimeField(arr[:, 0], arr[:, 1:], header["space_hash"])


def field_digest(u: SpaceTimeField) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(u.times).tobytes())
    h.update(np.ascontiguousarray(u.values).tobytes())
    return h.hexdigest()


# Dormand-Prince 5(4) tableau
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def _dopri(rate, t0, y0, t_end, out_times, rtol, atol, max_dt, h_min=1e-14):
    """Adaptive DOPRI5 with FSAL; returns every accepted step plus each output time."""
    t, y = t0, y0.copy()
    ts, ys = [t], [y.copy()]
    k1 = rate(t, y)
    h = min(max_dt, (t_end - t0) / 10 or max_dt)
    targets = sorted(set(float(s) for s in out_times if t0 < s <= t_end) | {t_end})
    ti = 0
    while t < t_end - 1e-14 * max(1.0, abs(t_end)):
        target = targets[ti]
        h = min(h, max_dt, target - t)
        landing = abs(t + h - target) <= 1e-13 * max(1.0, abs(target))
        ks = [k1]
        for s in range(1, 7):
            yi = y + h * sum(a * k for a, k in zip(_A[s], ks))
            ks.append(rate(t + _C[s] * h, yi))
        y5 = y + h * sum(b * k for b, k in zip(_B5, ks) if b)
        err_vec = h * sum(e * k for e, k in zip(_E, ks))
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y5))
        err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
        if not np.all(np.isfinite(y5)):
            raise SolverError(f"non-finite state at t={t:.6g}")
        if err <= 1.0:
            t = target if landing else t + h
            y = y5
            k1 = ks[6]
            ts.append(t)
            ys.append(y.copy())
            if landing:
                ti += 1
            fac = 5.0 if err == 0 else min(5.0, 0.9 * err ** -0.2)
            h = h * max(fac, 0.2)
        else:
            h = h * max(0.2, 0.9 * err ** -0.25)
            if h < h_min:
                raise SolverError(f"step size collapsed to {h:.3g} at t={t:.6g} (stiff or singular)")
    return np.array(ts), np.array(ys)


def integrate(form: QuasilinearForm, u0, t_span: Sequence[float], boundary: str = "full-space",
              interior: np.ndarray | None = None, rtol: float = 1e-10, atol: float = 1e-12,
              max_dt: float = 1e-3, out_times: Sequence[float] = (),
              source: np.ndarray | None = None) -> SpaceTimeField:
    """Integrate the graph evolution; every accepted step is kept in the output.

    ``boundary="zero-outside-U"`` pins the nodes outside ``interior`` at 0.
    ``source`` adds a static density s(x) to the right side, du/dt += s.
    """
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != (form.space.n_nodes,) or not np.all(np.isfinite(u0)):
        raise SolverError("initial datum must be a finite node field")
    if boundary not in ("full-space", "zero-outside-U"):
        raise SolverError(f"unknown boundary mode {boundary!r}")
    frozen = None
    if boundary == "zero-outside-U":
        if interior is None:
            raise SolverError("zero-outside-U needs an interior mask")
        frozen = ~np.asarray(interior, dtype=bool)
        u0 = np.where(frozen, 0.0, u0)

    def rate(t, y):
        r = form.rate(t, y)
        if source is not None:
            r = r + source
        if frozen is not None:
            r = np.where(frozen, 0.0, r)
        return r

    t0, t1 = map(float, t_span)
    ts, ys = _dopri(rate, t0, u0, t1, out_times, rtol, atol, max_dt)
    return SpaceTimeField(ts, ys, form.space.hash)


# ---------------------------------------------------------------- weak residuals

def weak_residuals(u: SpaceTimeField, form: QuasilinearForm, probes, pairs,
                   source: np.ndarray | None = None):
    """Signed residual int u(b) phi - int u(a) phi + int_a^b E_t(u, phi) dt per (probe, a, b).

    With a static source s the equation is tested against s as well, so
    the residual of a supersolution built by adding s >= 0 is >= 0.
    """
    mu = form.space.mu
    out, quads, scales = [], [], []
    for pi, (ta, tb) in pairs:
        phi = np.asarray(probes[pi], dtype=float)
        sub = u.window(ta, tb)
        A, B = form.pairing(0.0, sub.values, np.broadcast_to(phi, sub.values.shape))
        integrand = A + B
        wt = trapezoid_weights(sub.times)
        term = math.fsum(wt * integrand)
        mass_b = math.fsum(sub.values[-1] * phi * mu)
        mass_a = math.fsum(sub.values[0] * phi * mu)
        res = mass_b - mass_a + term
        quads.append(quadrature_budget(integrand, sub.times))
        scales.append(abs(mass_b) + abs(mass_a) + math.fsum(wt * np.abs(integrand)))
        out.append(res)
    return np.array(out), np.array(quads), np.array(scales)


def certify_weak(u: SpaceTimeField, form: QuasilinearForm, probes, pairs, mode: str = "solution",
                 rel: float = 1e-8, interior: np.ndarray | None = None) -> ResidualCertificate:
    if mode not in ("solution", "subsolution", "supersolution"):
        raise ValueError(f"unknown mode {mode!r}")
    probes = [np.asarray(p, dtype=float) for p in probes]
    for i, p in enumerate(probes):
        if mode != "solution" and np.any(p < 0):
            raise ValueError(f"probe {i} must be nonnegative in {mode} mode")
        if interior is not None and np.any(p[~np.asarray(interior, dtype=bool)] != 0):
            raise ValueError(f"probe {i} is not supported inside U")
    res, quad, scale = weak_residuals(u, form, probes, pairs)
    budgets = rel * scale + quad
    return ResidualCertificate(mode, tuple((int(i), float(a), float(b)) for i, (a, b) in pairs),
                               res, budgets, rel)


def make_supersolution(form: QuasilinearForm, u0, t_span, source, **kw) -> SpaceTimeField:
    """Solve with an added nonnegative source density; the result is a weak supersolution."""
    source = np.broadcast_to(np.asarray(source, dtype=float), (form.space.n_nodes,)).copy()
    if np.any(source < 0):
        raise SolverError("supersolution source must be nonnegative")
    return integrate(form, u0, t_span, source=source, **kw)


def certify_supersolution(u, form, probes, pairs, rel=1e-8) -> ResidualCertificate:
    cert = certify_weak(u, form, probes, pairs, "supersolution", rel)
    if not cert.passed:
        worst = int(np.argmin(cert.residuals + cert.budgets))
        raise SolverError(f"supersolution certificate failed at probe pair {worst}")
    return cert


# ---------------------------------------------------------------- Kolmogorov

def build_kolmogorov_form(grid: DirichletSpace, drift_matrix, diffusive_dims: int = 1) -> QuasilinearForm:
    """Diffusion along the first coordinate, upwinded transport by <Bx, grad u>.

    The transport term enters the node density as -(Bx . grad u), using a
    one-sided difference toward the side the characteristics come from;
    a missing neighbour drops the term at that node.
    """
    if grid.coords is None or grid.coords.shape[1] != 2:
        raise FormError("Kolmogorov form needs a 2-D lattice with coordinates")
    if diffusive_dims >= grid.coords.shape[1]:
        raise FormError("need m < n diffusive directions")
    Bm = np.asarray(drift_matrix, dtype=float)
    if Bm.shape != (2, 2):
        raise FormError("drift matrix must be 2x2")
    axis = edge_axis(grid)
    diff_space = grid.subgraph_edges(axis == 0)
    x = grid.coords
    vel = x @ Bm.T  # Bx at every node
    n = grid.n_nodes
    # neighbour tables along each axis: +1 and -1 directions
    nbr = {}
    for ax in range(2):
        sel = axis == ax
        i, j = grid.edges[sel, 0], grid.edges[sel, 1]
        forward = np.full(n, -1)
        backward = np.full(n, -1)
        up = x[j, ax] > x[i, ax]
        forward[i[up]] = j[up]
        backward[j[up]] = i[up]
        forward[j[~up]] = i[~up]
        backward[i[~up]] = j[~up]
        h = np.abs(x[j, ax] - x[i, ax])
        nbr[ax] = (forward, backward, float(h[0]) if h.size else 1.0)

    def transport(u):
        u = np.asarray(u, dtype=float)
        out = np.zeros_like(u)
        for ax in range(2):
            v = vel[:, ax]
            if not np.any(v):
                continue
            fwd, bwd, h = nbr[ax]
            use_f = v > 0
            idx = np.where(use_f, fwd, bwd)
            ok = (idx >= 0) & (v != 0)
            safe = np.where(ok, idx, 0)
            d = np.where(use_f, u[..., safe] - u, u - u[..., safe]) / h
            out = out + np.where(ok, v * d, 0.0)
        return out

    c = diff_space.conductance

    def flux(t, u):
        return c * diff_space.edge_diff(u)

    def density(t, u):
        return -transport(u)

    L = diff_space.laplacian().toarray()
    T = transport(np.eye(n)).T
    # mu du/dt = -L u + mu * transport(u)
    linear = L - grid.mu[:, None] * T
    form = QuasilinearForm(diff_space, flux, density, diff_space, "kolmogorov", 1.0, 1.0, linear)
    object.__setattr__(form, "transport", transport)
    return form
