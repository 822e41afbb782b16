"""Finite weighted graphs viewed as Dirichlet spaces.

A space carries a positive node measure, symmetric edge conductances and
edge lengths.  The conductances define the Dirichlet form

    E(u, v) = sum over edges of c(x, y) (u(x) - u(y)) (v(x) - v(y))

and its nodewise density (the energy measure), while the lengths define the
shortest-path metric used for balls and cutoff functions.  The module also
certifies the weighted Sobolev and Poincare inequalities on explicit witness
functions.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from . import lorentz

SPACE_SCHEMA = 1


class GeometryError(ValueError):
    """Raised when a space, domain family or cutoff cannot be built."""


class CertificationError(ValueError):
    """Raised when an inequality cannot be certified on the witness set."""

    def __init__(self, message: str, witness: int | None = None):
        super().__init__(message)
        self.witness = witness


@dataclass(frozen=True, eq=False)
class DirichletSpace:
    mu: np.ndarray
    edges: np.ndarray  # (m, 2) int, i < j
    conductance: np.ndarray
    length: np.ndarray
    coords: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        cond = np.asarray(self.conductance, dtype=float)
        length = np.asarray(self.length, dtype=float)
        if mu.ndim != 1 or mu.size == 0:
            raise GeometryError("measure must be a nonempty vector")
        if not np.all(np.isfinite(mu)) or np.any(mu <= 0):
            raise GeometryError("node weights must be positive and finite")
        if cond.shape != (edges.shape[0],) or length.shape != (edges.shape[0],):
            raise GeometryError("one conductance and one length per edge")
        if np.any(cond < 0) or np.any(length <= 0):
            raise GeometryError("conductances must be >= 0 and lengths > 0")
        if edges.size and (edges.min() < 0 or edges.max() >= mu.size):
            raise GeometryError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise GeometryError("self-loops are not allowed")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "conductance", cond)
        object.__setattr__(self, "length", length)
        if self.coords is not None:
            object.__setattr__(self, "coords", np.asarray(self.coords, dtype=float))

    @property
    def n_nodes(self) -> int:
        return self.mu.size

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def total_measure(self) -> float:
        return float(np.sum(self.mu))

    def incidence(self) -> sp.csr_matrix:
        """Signed incidence matrix D with (D u)_e = u(i) - u(j)."""
        if "incidence" not in self._cache:
            m = self.n_edges
            rows = np.repeat(np.arange(m), 2)
            cols = self.edges.ravel()
            vals = np.tile([1.0, -1.0], m)
            self._cache["incidence"] = sp.csr_matrix(
                (vals, (rows, cols)), shape=(m, self.n_nodes)
            )
        return self._cache["incidence"]

    def laplacian(self) -> sp.csr_matrix:
        """Matrix of the Dirichlet form: E(u, v) = u^T L v."""
        if "laplacian" not in self._cache:
            D = self.incidence()
            self._cache["laplacian"] = (D.T @ sp.diags(self.conductance) @ D).tocsr()
        return self._cache["laplacian"]

    def edge_diff(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return u[..., self.edges[:, 0]] - u[..., self.edges[:, 1]]

    def distances_from(self, center: int) -> np.ndarray:
        key = ("dist", int(center))
        if key not in self._cache:
            n = self.n_nodes
            W = sp.csr_matrix(
                (self.length, (self.edges[:, 0], self.edges[:, 1])), shape=(n, n)
            )
            self._cache[key] = dijkstra(W, directed=False, indices=int(center))
        return self._cache[key]

    def degree_weighted(self) -> np.ndarray:
        deg = np.zeros(self.n_nodes)
        np.add.at(deg, self.edges[:, 0], self.conductance)
        np.add.at(deg, self.edges[:, 1], self.conductance)
        return deg

    def subgraph_edges(self, keep: np.ndarray) -> "DirichletSpace":
        """Same nodes and measure, only the edges flagged in `keep`."""
        keep = np.asarray(keep, dtype=bool)
        return DirichletSpace(
            self.mu, self.edges[keep], self.conductance[keep], self.length[keep], self.coords
        )

    def to_dict(self) -> dict:
        d = {
            "schema_version": SPACE_SCHEMA,
            "nodes": [{"id": i, "weight": float(w)} for i, w in enumerate(self.mu)],
            "edges": [
                {"i": int(i), "j": int(j), "c": float(c), "length": float(l)}
                for (i, j), c, l in zip(self.edges, self.conductance, self.length)
            ],
        }
        if self.coords is not None:
            d["coords"] = self.coords.tolist()
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def hash(self) -> str:
        if "hash" not in self._cache:
            self._cache["hash"] = hashlib.sha256(self.dumps().encode()).hexdigest()
        return self._cache["hash"]


def space_from_dict(d: dict) -> DirichletSpace:
    if d.get("schema_version") != SPACE_SCHEMA:
        raise GeometryError(f"unsupported space schema_version: {d.get('schema_version')!r}")
    nodes = sorted(d["nodes"], key=lambda n: n["id"])
    if [n["id"] for n in nodes] != list(range(len(nodes))):
        raise GeometryError("node ids must be 0..n-1")
    mu = np.array([n["weight"] for n in nodes], dtype=float)
    edges = np.array([[e["i"], e["j"]] for e in d["edges"]], dtype=np.int64).reshape(-1, 2)
    cond = np.array([e["c"] for e in d["edges"]], dtype=float)
    length = np.array([e["length"] for e in d["edges"]], dtype=float)
    coords = np.array(d["coords"]) if "coords" in d else None
    return DirichletSpace(mu, edges, cond, length, coords)


def save_space(space: DirichletSpace, path) -> None:
    with open(path, "w") as fh:
        fh.write(space.dumps())
        fh.write("\n")


def load_space(path) -> DirichletSpace:
    with open(path) as fh:
        return space_from_dict(json.load(fh))


def build_grid_space(
    dims: Sequence[int],
    spacing: float = 1.0,
    measure_profile: float | np.ndarray | Callable[[np.ndarray], np.ndarray] | None = None,
    torus: bool = False,
    origin: Sequence[float] | None = None,
) -> DirichletSpace:
    """Nearest-neighbour lattice with conductance (face measure) / spacing.

    The face measure of a cell is spacing**(d-1), so every edge carries
    conductance spacing**(d-2) and the graph form approximates the integral
    of |grad f|^2 for the cell-volume measure spacing**d (the default
    profile).  A scalar or per-node array overrides the node weights; a
    callable receives the (n, d) coordinate array.
    """
    dims = [int(n) for n in dims]
    if not dims or any(n < 1 for n in dims):
        raise GeometryError("dims must be a nonempty list of positive sizes")
    if not spacing > 0:
        raise GeometryError("spacing must be positive")
    d = len(dims)
    origin = np.zeros(d) if origin is None else np.asarray(origin, dtype=float)
    index = np.arange(int(np.prod(dims))).reshape(dims)
    grids = np.meshgrid(*[np.arange(n) for n in dims], indexing="ij")
    coords = origin + spacing * np.stack([g.ravel() for g in grids], axis=1)

    edges = []
    for axis, n in enumerate(dims):
        if n < 2:
            continue
        src = np.take(index, np.arange(n - 1), axis=axis).ravel()
        dst = np.take(index, np.arange(1, n), axis=axis).ravel()
        edges.append(np.stack([src, dst], axis=1))
        if torus and n > 2:
            src = np.take(index, [n - 1], axis=axis).ravel()
            dst = np.take(index, [0], axis=axis).ravel()
            edges.append(np.stack([src, dst], axis=1))
    edges = np.concatenate(edges) if edges else np.zeros((0, 2), dtype=np.int64)
    edges = np.sort(edges, axis=1)

    if measure_profile is None:
        mu = np.full(coords.shape[0], spacing**d)
    elif callable(measure_profile):
        mu = np.asarray(measure_profile(coords), dtype=float)
    else:
        mu = np.broadcast_to(np.asarray(measure_profile, dtype=float), (coords.shape[0],)).copy()
    cond = np.full(edges.shape[0], spacing ** (d - 2))
    length = np.full(edges.shape[0], float(spacing))
    return DirichletSpace(mu, edges, cond, length, coords)


def edge_axis(space: DirichletSpace) -> np.ndarray:
    """Coordinate axis along which each edge of a lattice points."""
    if space.coords is None:
        raise GeometryError("space has no coordinates")
    delta = np.abs(space.coords[space.edges[:, 0]] - space.coords[space.edges[:, 1]])
    return np.argmax(delta, axis=1)


def energy_measure(space: DirichletSpace, u: np.ndarray, v: np.ndarray | None = None) -> np.ndarray:
    """Nodewise density Gamma(u, v)(x) = 1/2 sum_y c(x,y)(u(x)-u(y))(v(x)-v(y)).

    Works on stacks of fields: the node index is the last axis.
    """
    du = space.edge_diff(u)
    dv = du if v is None else space.edge_diff(v)
    w = 0.5 * space.conductance * du * dv
    out = np.zeros(np.shape(u)[:-1] + (space.n_nodes,))
    np.add.at(out, (..., space.edges[:, 0]), w)
    np.add.at(out, (..., space.edges[:, 1]), w)
    return out


def dirichlet_form(space: DirichletSpace, u: np.ndarray, v: np.ndarray | None = None) -> float:
    du = space.edge_diff(u)
    dv = du if v is None else space.edge_diff(v)
    return float(np.sum(space.conductance * du * dv))


@dataclass(frozen=True)
class NestedFamily:
    """Balls B_delta = B(center, delta R) and the time intervals around them."""

    center: int
    R: float
    delta_star: float
    a: float
    a_prime: float
    b_prime: float
    b: float
    c0: float
    C3: float
    k_time: float
    dist: np.ndarray = field(repr=False, compare=False)

    def a_delta(self, delta: float) -> float:
        return self.c0 * delta

    def ball(self, delta: float) -> np.ndarray:
        return self.dist <= delta * self.R + 1e-12 * max(self.R, 1.0)

    def I_minus(self, delta: float) -> tuple[float, float]:
        return (self.a - self.a_delta(delta), self.b_prime)

    def I_plus(self, delta: float) -> tuple[float, float]:
        return (self.a_prime, self.b + self.a_delta(delta))

    def time_condition_holds(self, deltas: Sequence[float]) -> bool:
        ds = sorted(deltas)
        for i, dp in enumerate(ds):
            for d in ds[i + 1:]:
                gap = abs(self.a_delta(d) - self.a_delta(dp))
                if 1.0 / gap > self.C3 * abs(d - dp) ** (-self.k_time) * (1 + 1e-12):
                    return False
        return True


def nested_family(
    space: DirichletSpace,
    center: int,
    R: float,
    delta_star: float,
    time_anchors: Sequence[float],
    schedule_slope: float,
) -> NestedFamily:
    """Linear schedule a_delta = c0 * delta, for which C3 = 1/c0 with k = 1."""
    a, ap, bp, b = map(float, time_anchors)
    if not (a < ap < bp < b):
        raise GeometryError("time anchors must satisfy a < a' < b' < b")
    if not 0 < delta_star < 1:
        raise GeometryError("delta_star must lie in (0, 1)")
    if not schedule_slope > 0 or not R > 0:
        raise GeometryError("schedule slope and radius must be positive")
    dist = space.distances_from(center)
    fam = NestedFamily(int(center), float(R), float(delta_star), a, ap, bp, b,
                       float(schedule_slope), 1.0 / schedule_slope, 1.0, dist)
    inner, outer = fam.ball(delta_star), fam.ball(1.0)
    if not (np.all(outer[inner]) and outer.sum() > inner.sum()):
        raise GeometryError("B(delta_star) must be a proper subset of B(1) on this graph")
    return fam


@dataclass(frozen=True)
class Cutoff:
    values: np.ndarray
    inner_delta: float
    outer_delta: float
    c_cut: float


def build_cutoff(space: DirichletSpace, family: NestedFamily, delta_prime: float, delta: float) -> Cutoff:
    """Linear ramp in the graph distance from B(delta') to the edge of B(delta).

    When no node lies strictly between the two balls the ramp degenerates
    to the indicator of B(delta), which is still an admissible cutoff.
    """
    if not (family.delta_star - 1e-12 <= delta_prime < delta <= 1 + 1e-12):
        raise GeometryError(f"need delta_star <= delta' < delta <= 1, got {delta_prime}, {delta}")
    width = (delta - delta_prime) * family.R
    psi = np.clip((delta * family.R - family.dist) / width, 0.0, 1.0)
    gamma = energy_measure(space, psi)
    c_cut = float(np.max(gamma * width**2 / space.mu))
    return Cutoff(psi, float(delta_prime), float(delta), c_cut)


def sobolev_exponent(nu: float) -> float:
    return 2 * nu / (nu - 2)


@dataclass(frozen=True)
class SobolevWitness:
    f: np.ndarray
    p: float
    delta_prime: float
    delta: float


@dataclass(frozen=True)
class SpaceCertificate:
    nu: float
    C_SI: float
    C_SI0: float
    k: float
    witnesses: tuple
    rows: np.ndarray = field(repr=False)  # (lhs, energy term, mass term) per witness
    C_wPI: float | None = None

    def recheck(self, rtol: float = 1e-10) -> bool:
        lhs, X, Y = self.rows.T
        return bool(np.all(lhs <= (self.C_SI * X + self.C_SI0 * Y) * (1 + rtol) + 1e-300))


def _sobolev_row(space, family, psi, f, p, delta_prime, delta, nu, k):
    B = family.ball(delta)
    f = np.asarray(f, dtype=float)
    if np.any(f[B] < 0):
        raise CertificationError("witness must be nonnegative")
    if p < 2 and np.any(f[B] <= 0):
        raise CertificationError(f"witness vanishes on B(delta) with p={p} < 2")
    with np.errstate(divide="ignore"):
        fpow = np.where(B, f, 1.0) ** (p / 2)
    lhs = lorentz.lorentz_norm(fpow * psi, space.mu, sobolev_exponent(nu), 2) ** 2
    g = energy_measure(space, f)
    weight = np.where(B, np.where(B, f, 1.0) ** (p - 2), 0.0) * psi**2
    gap = abs(delta - delta_prime) ** (-k)
    X = gap * p**2 / 4 * float(np.sum(weight * g))
    Y = gap * float(np.sum((np.where(B, f, 1.0) ** p * space.mu)[B]))
    return lhs, X, Y


def certify_sobolev(
    space: DirichletSpace,
    family: NestedFamily,
    delta_prime: float,
    delta: float,
    nu: float,
    witness_set: Sequence[tuple[np.ndarray, Sequence[float]]],
    k: float = 2.0,
    extra_pairs: Sequence[tuple[float, float]] = (),
    n_ratios: int = 33,
    ratio_span: float = 1e4,
    floor: float = 0.0,
) -> SpaceCertificate:
    """Smallest (C_SI, C_SI0) on a log-spaced ratio sweep covering every witness.

    Each witness is (f, [p1, p2, ...]).  The inequality is enforced for the
    cutoff of (delta', delta) and for every pair in `extra_pairs`, so the
    constants do not depend on which pair of radii is used.
    """
    if not nu > 2:
        raise CertificationError("nu must exceed 2")
    pairs = [(delta_prime, delta), *extra_pairs]
    rows, wits = [], []
    for dp, d in pairs:
        psi = build_cutoff(space, family, dp, d).values
        for idx, (f, ps) in enumerate(witness_set):
            for p in ps:
                try:
                    rows.append(_sobolev_row(space, family, psi, f, float(p), dp, d, nu, k))
                except CertificationError as exc:
                    raise CertificationError(str(exc), witness=idx) from None
                wits.append(SobolevWitness(np.asarray(f, dtype=float), float(p), dp, d))
    rows = np.array(rows, dtype=float).reshape(-1, 3)
    lhs, X, Y = rows.T
    best = None
    for rho in np.logspace(-np.log10(ratio_span), np.log10(ratio_span), n_ratios):
        denom = rho * X + Y
        need = lhs > 0
        if np.any(need & (denom <= 0)):
            continue
        c0 = float(np.max(np.where(need, lhs / np.where(denom > 0, denom, 1.0), 0.0), initial=0.0))
        c0 = max(c0, floor, floor / rho)
        pair = (rho * c0, c0)
        if best is None or sum(pair) < sum(best):
            best = pair
    if best is None:
        bad = int(np.argmax(lhs * (X + Y <= 0)))
        raise CertificationError("no finite Sobolev constants in the sweep", witness=bad)
    return SpaceCertificate(float(nu), best[0], best[1], float(k), tuple(wits), rows)


def certify_poincare(
    space: DirichletSpace,
    family: NestedFamily,
    delta_prime: float,
    delta: float,
    witness_set: Sequence[np.ndarray],
) -> float:
    """Smallest C_wPI making the weighted Poincare inequality hold for log f."""
    psi = build_cutoff(space, family, delta_prime, delta).values
    w2 = psi**2 * space.mu
    best = 0.0
    for idx, f in enumerate(witness_set):
        f = np.asarray(f, dtype=float)
        if np.any(f <= 0):
            raise CertificationError("Poincare witnesses must be strictly positive", witness=idx)
        lf = np.log(f)
        mean = np.sum(lf * w2) / np.sum(w2)
        lhs = float(np.sum((lf - mean) ** 2 * w2))
        rhs = float(np.sum(psi**2 * energy_measure(space, f) / f**2))
        if rhs <= 0:
            if lhs > 1e-14 * max(1.0, np.sum(lf**2 * w2)):
                raise CertificationError("log f varies where its energy vanishes", witness=idx)
            continue
        best = max(best, lhs / rhs)
    return best


def grid_node(space: DirichletSpace, point: Sequence[float]) -> int:
    """Index of the lattice node closest to a point."""
    if space.coords is None:
        raise GeometryError("space has no coordinates")
    return int(np.argmin(np.sum((space.coords - np.asarray(point)) ** 2, axis=1)))


def lattice_index(dims: Sequence[int], multi: Sequence[int]) -> int:
    return int(np.ravel_multi_index(tuple(multi), tuple(dims)))


__all__ = [
    "CertificationError", "Cutoff", "DirichletSpace", "GeometryError", "NestedFamily",
    "SpaceCertificate", "build_cutoff", "build_grid_space", "certify_poincare",
    "certify_sobolev", "dirichlet_form", "edge_axis", "energy_measure", "grid_node",
    "lattice_index", "load_space", "nested_family", "save_space", "sobolev_exponent",
    "space_from_dict",
]
