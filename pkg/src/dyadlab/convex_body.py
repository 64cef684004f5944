"""Convex-body averages of vector fields: zonotopes (r = 1) and support-sampled bodies."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog, minimize_scalar

from .grid import DomainError, DyadicCube, VectorField

MARGIN = 1e-9
GRID = {2: 360, 3: 1200}
LP_MAX_GENERATORS = 24
ENUM_MAX_GENERATORS = 20


def direction_grid(n: int, k: int | None = None) -> np.ndarray:
    """Unit directions (n, k) covering the sphere up to sign."""
    if n == 1:
        return np.ones((1, 1))
    k = k or GRID.get(n, 400 * n)
    if n == 2:
        t = np.arange(k) * math.pi / k
        return np.stack([np.cos(t), np.sin(t)])
    if n == 3:
        i = np.arange(k) + 0.5
        z = 1.0 - i / k  # upper hemisphere
        phi = i * math.pi * (3 - math.sqrt(5))
        r = np.sqrt(1 - z * z)
        return np.stack([r * np.cos(phi), r * np.sin(phi), z])
    X = np.random.default_rng(7).standard_normal((n, k))
    return X / np.linalg.norm(X, axis=0)


class Zonotope:
    """{sum t_i g_i : |t_i| <= 1}; generators stored as rows (m, n)."""

    def __init__(self, generators):
        G = np.asarray(generators, dtype=float)
        if G.ndim != 2:
            raise DomainError("generators must be an (m, n) array")
        self.generators = G

    @property
    def n(self) -> int:
        return self.generators.shape[1]

    @property
    def m(self) -> int:
        return self.generators.shape[0]

    def support(self, U) -> np.ndarray:
        U = np.asarray(U, dtype=float)
        single = U.ndim == 1
        vals = np.abs(self.generators @ U.reshape(self.n, -1)).sum(axis=0)
        return float(vals[0]) if single else vals

    def extreme_point(self, u) -> np.ndarray:
        s = np.sign(self.generators @ np.asarray(u, dtype=float))
        return s @ self.generators

    def scaled(self, c: float) -> "Zonotope":
        return Zonotope(c * self.generators)

    def __add__(self, other: "Zonotope") -> "Zonotope":
        return minkowski([self, other])

    def __repr__(self):
        return f"Zonotope(n={self.n}, m={self.m})"


@dataclass
class SupportBody:
    directions: np.ndarray  # (n, k) unit columns
    values: np.ndarray      # (k,)

    def __post_init__(self):
        if np.any(self.values < -1e-15):
            raise DomainError("support values must be non-negative")

    @property
    def n(self) -> int:
        return self.directions.shape[0]

    def support(self, U=None):
        if U is None:
            return self.values
        raise DomainError("support-sampled bodies are known only on their grid")


def body_average(f: VectorField, Q: DyadicCube) -> Zonotope:
    f.lattice.check(Q)
    vals = f.columns[f.lattice.cells(Q)]
    return Zonotope(vals / vals.shape[0])


def body_average_r(f: VectorField, r: float, Q: DyadicCube, budget: int | None = None) -> SupportBody:
    if r <= 1:
        raise DomainError("r must exceed 1; use body_average for r = 1")
    f.lattice.check(Q)
    vals = f.columns[f.lattice.cells(Q)]
    U = direction_grid(vals.shape[1], budget)
    proj = np.abs(vals @ U)
    top = proj.max(axis=0)
    safe = np.where(top > 0, top, 1.0)
    h = np.mean((proj / safe) ** r, axis=0) ** (1.0 / r) * top
    return SupportBody(U, h)


@dataclass
class Membership:
    inside: bool
    margin: float
    direction: np.ndarray | None
    method: str

    def __bool__(self):
        return self.inside


def _span_reduce(G: np.ndarray, z: np.ndarray, tol: float):
    """Coordinates of generators and z in the span of G; None if z leaves it."""
    if G.size == 0 or np.abs(G).max() == 0:
        return None, None, float(np.linalg.norm(z))
    _, s, Vt = np.linalg.svd(G, full_matrices=False)
    rank = int(np.sum(s > s[0] * 1e-12))
    B = Vt[:rank]  # (rank, n) orthonormal rows spanning the generators
    off = float(np.linalg.norm(z - B.T @ (B @ z)))
    return G @ B.T, B @ z, off


def _facet_normals(G: np.ndarray) -> np.ndarray:
    k = G.shape[1]
    if k == 1:
        return np.ones((1, 1))
    if k == 2:
        U = np.stack([-G[:, 1], G[:, 0]])
    else:
        idx = np.array(list(itertools.combinations(range(G.shape[0]), 2)))
        U = np.cross(G[idx[:, 0]], G[idx[:, 1]]).T
    nrm = np.linalg.norm(U, axis=0)
    keep = nrm > 1e-14 * max(nrm.max(), 1e-300)
    return U[:, keep] / nrm[keep]


def membership(z, body, tol: float = MARGIN, method: str = "auto") -> Membership:
    """Is z in the body? Margin is min over directions of h(u) - <z,u> (scale-relative)."""
    z = np.asarray(z, dtype=float).ravel()
    if isinstance(body, SupportBody):
        U = body.directions
        gap = body.values - np.abs(z @ U)
        k = int(np.argmin(gap))
        scale = max(float(body.values.max()), 1e-300)
        return Membership(gap[k] >= -tol * scale, float(gap[k]), U[:, k], "sampled")

    G = body.generators
    scale = max(float(np.abs(G).sum(axis=0).max()) if G.size else 0.0, float(np.abs(z).max()), 1e-300)
    if method == "auto":
        if body.m <= LP_MAX_GENERATORS:
            method = "lp"
        elif body.n <= 2 or (body.n == 3 and body.m <= 300):
            method = "facets"
        else:
            method = "sampled"

    if method == "lp":
        return _membership_lp(z, G, tol, scale)

    Gr, zr, off = _span_reduce(G, z, tol)
    if off > tol * scale:
        return Membership(False, -off, None, method)
    if Gr is None:
        return Membership(True, 0.0, None, method)
    if method == "facets" and Gr.shape[1] <= 3:
        U = _facet_normals(Gr)
    else:
        U = direction_grid(Gr.shape[1])
        method = "sampled"
    h = np.abs(Gr @ U).sum(axis=0)
    gap = h - np.abs(zr @ U)
    k = int(np.argmin(gap))
    return Membership(bool(gap[k] >= -tol * scale), float(gap[k]), U[:, k], method)


def _membership_lp(z, G, tol, scale) -> Membership:
    m = G.shape[0]
    if m == 0:
        inside = bool(np.abs(z).max() <= tol * scale) if z.size else True
        return Membership(inside, -float(np.abs(z).max()), None, "lp")
    # minimise s subject to G^T t = z, |t_i| <= s
    c = np.zeros(m + 1)
    c[-1] = 1.0
    A_ub = np.zeros((2 * m, m + 1))
    A_ub[:m, :m] = np.eye(m)
    A_ub[m:, :m] = -np.eye(m)
    A_ub[:, -1] = -1.0
    A_eq = np.concatenate([G.T, np.zeros((G.shape[1], 1))], axis=1)
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(2 * m), A_eq=A_eq, b_eq=z,
                  bounds=[(None, None)] * m + [(0, None)], method="highs")
    if res.status != 0:
        return Membership(False, -math.inf, None, "lp")
    s = float(res.x[-1])
    return Membership(s <= 1 + tol, 1.0 - s, None, "lp")


def minkowski(bodies, scalars=None):
    if not bodies:
        raise DomainError("empty Minkowski sum")
    scalars = [1.0] * len(bodies) if scalars is None else list(scalars)
    if len(scalars) != len(bodies):
        raise DomainError("one scalar per body")
    n = bodies[0].n
    if any(b.n != n for b in bodies):
        raise DomainError("dimension mismatch in Minkowski sum")
    if all(isinstance(b, Zonotope) for b in bodies):
        return Zonotope(np.concatenate([c * b.generators for b, c in zip(bodies, scalars)], axis=0).reshape(-1, n))
    grids = [b.directions for b in bodies if isinstance(b, SupportBody)]
    U = grids[0]
    if any(g.shape != U.shape or not np.allclose(g, U) for g in grids):
        raise DomainError("support-sampled bodies must share a direction grid")
    h = np.zeros(U.shape[1])
    for b, c in zip(bodies, scalars):
        h += abs(c) * (b.values if isinstance(b, SupportBody) else b.support(U))
    return SupportBody(U, h)


@dataclass
class PairingInterval:
    m: float
    approximate: bool
    method: str

    @property
    def interval(self) -> tuple[float, float]:
        return (-self.m, self.m)


def pairing_interval(A, B, method: str = "auto") -> PairingInterval:
    """Endpoint m of {<a,b> : a in A, b in B} = [-m, m]."""
    if A.n != B.n:
        raise DomainError("dimension mismatch")
    zonos = isinstance(A, Zonotope) and isinstance(B, Zonotope)
    if zonos:
        if method == "auto":
            method = "enumerate" if min(A.m, B.m) <= ENUM_MAX_GENERATORS else "grid"
        if method == "enumerate":
            if A.m < B.m:
                A, B = B, A
            return PairingInterval(_pair_enumerate(A, B), False, "enumerate")
        if method == "grid":
            return PairingInterval(_pair_zonotope_grid(A, B), A.n > 2, "grid")
        raise DomainError(f"unknown method {method!r}")
    return PairingInterval(_pair_support_grid(A, B), True, "grid")


def _pair_enumerate(A: Zonotope, B: Zonotope) -> float:
    # h_A is convex, so the max over B sits at a vertex of B
    signs = np.array(list(itertools.product((-1.0, 1.0), repeat=B.m)))
    verts = signs @ B.generators
    return float(A.support(verts.T).max())


def _pair_zonotope_grid(A: Zonotope, B: Zonotope) -> float:
    n = A.n
    U = direction_grid(n)
    if n == 1:
        return float(A.support(np.ones(1)) * B.support(np.ones(1)))

    def value(u):
        return A.support(B.extreme_point(u))

    vals = np.array([value(U[:, k]) for k in range(U.shape[1])])
    best = float(vals.max())
    if n == 2:
        k = int(np.argmax(vals))
        t0 = math.pi * k / U.shape[1]
        h = math.pi / U.shape[1]
        res = minimize_scalar(lambda t: -value(np.array([math.cos(t), math.sin(t)])),
                              bounds=(t0 - h, t0 + h), method="bounded", options={"xatol": 1e-10})
        best = max(best, -float(res.fun))
    # both orders give extreme points of the respective body
    vals2 = np.array([B.support(A.extreme_point(U[:, k])) for k in range(U.shape[1])])
    return max(best, float(vals2.max()))


def _support_on(body, U):
    return body.values if isinstance(body, SupportBody) else body.support(U)


def _pair_support_grid(A, B) -> float:
    grids = [b.directions for b in (A, B) if isinstance(b, SupportBody)]
    U = grids[0]
    hA = _support_on(A, U)
    hB = _support_on(B, U)
    # full circle of directions for the radial function
    Uf = np.concatenate([U, -U], axis=1)
    hBf = np.concatenate([hB, hB])
    cos = U.T @ Uf  # (k, 2k)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(cos > 1e-12, hBf[None, :] / cos, np.inf)
    radial = ratio.min(axis=1)  # radial function of B along each grid direction
    return float(np.max(radial * hA))
