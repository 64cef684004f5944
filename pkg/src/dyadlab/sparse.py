"""Sparse and Carleson families, the stopping-time family, sparse operators and bump bounds."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .grid import DomainError, DyadicCube, DyadicLattice, VectorField
from .linalg import pair_norms, spd_power
from .orlicz import YoungFunction, bump_exponent, conjugate, dyadic_ma_norm, ma_norm_bound, nested_bump_norm
from .reducing import reducing_operator
from .weights import MatrixWeight, conj_exp

STOP_THRESHOLD = 4


class PackingError(RuntimeError):
    pass


class NotSparse(ValueError):
    def __init__(self, cube: DyadicCube, deficit: Fraction):
        super().__init__(f"witness of {cube} short by {deficit} of the required measure")
        self.cube = cube
        self.deficit = deficit


def _span(L: DyadicLattice, Q: DyadicCube) -> tuple[int, int]:
    s = L.cells(Q)
    return s.start, s.stop


def _forest(L: DyadicLattice, cubes):
    """Parent links among distinct cubes (nearest strict ancestor in the set).

    Cubes are Morton intervals, so sorting by (start, -size) and sweeping a
    stack recovers the containment forest.
    """
    order = sorted(set(cubes), key=lambda Q: (_span(L, Q)[0], -L.block(Q.level)))
    parent: dict[DyadicCube, DyadicCube | None] = {}
    stack: list[DyadicCube] = []
    for Q in order:
        a, _ = _span(L, Q)
        while stack and _span(L, stack[-1])[1] <= a:
            stack.pop()
        parent[Q] = stack[-1] if stack else None
        stack.append(Q)
    return order, parent


@dataclass(frozen=True)
class SparseFamily:
    """Cubes with pairwise disjoint witnesses; each witness is a list of cell intervals."""

    lattice: DyadicLattice
    cubes: tuple[DyadicCube, ...]
    witnesses: dict = field(repr=False)
    eta: Fraction

    def __len__(self):
        return len(self.cubes)

    def __iter__(self):
        return iter(self.cubes)

    def witness_cells(self, Q: DyadicCube) -> np.ndarray:
        return np.concatenate([np.arange(a, b) for a, b in self.witnesses[Q]] or [np.zeros(0, int)])

    def witness_measure(self, Q: DyadicCube) -> Fraction:
        return sum((Fraction(b - a) for a, b in self.witnesses[Q]), Fraction(0)) * self.lattice.cell_measure

    def to_dict(self) -> dict:
        L = self.lattice
        return {
            "dimension": L.d,
            "depth": L.depth,
            "eta": str(self.eta),
            "cubes": [{"level": Q.level, "coords": list(Q.coords),
                       "witness": [list(w) for w in self.witnesses[Q]]} for Q in self.cubes],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SparseFamily":
        L = DyadicLattice(int(doc["dimension"]), int(doc["depth"]))
        cubes, wit = [], {}
        for c in doc["cubes"]:
            Q = DyadicCube(int(c["level"]), tuple(c["coords"]))
            cubes.append(Q)
            wit[Q] = [tuple(w) for w in c["witness"]]
        return cls(L, tuple(cubes), wit, Fraction(doc["eta"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "SparseFamily":
        return cls.from_dict(json.loads(Path(path).read_text()))


def canonical_witnesses(L: DyadicLattice, cubes):
    """E_Q = Q minus the union of the family's maximal proper subcubes of Q."""
    for Q in cubes:
        L.check(Q)
    order, parent = _forest(L, cubes)
    kids: dict[DyadicCube, list[DyadicCube]] = {Q: [] for Q in order}
    for Q, P in parent.items():
        if P is not None:
            kids[P].append(Q)
    wit = {}
    for Q in order:
        a, b = _span(L, Q)
        gaps, cur = [], a
        for C in kids[Q]:  # already sorted by start
            s, e = _span(L, C)
            if s > cur:
                gaps.append((cur, s))
            cur = e
        if cur < b:
            gaps.append((cur, b))
        wit[Q] = gaps
    return order, wit, parent


def verify_sparse(cubes, eta, lattice: DyadicLattice) -> SparseFamily:
    """Greedy witnesses; raises NotSparse with the first failing cube."""
    eta = Fraction(eta)
    if not 0 < eta <= 1:
        raise DomainError("eta must lie in (0, 1]")
    order, wit, _ = canonical_witnesses(lattice, cubes)
    for Q in order:
        have = sum(b - a for a, b in wit[Q])
        need = eta * lattice.block(Q.level)
        if have < need:
            raise NotSparse(Q, (need - have) * lattice.cell_measure)
    return SparseFamily(lattice, tuple(order), wit, eta)


def is_sparse(cubes, eta, lattice: DyadicLattice) -> bool:
    try:
        verify_sparse(cubes, eta, lattice)
    except NotSparse:
        return False
    return True


@dataclass
class CarlesonReport:
    constant: Fraction
    worst: DyadicCube | None


def carleson_constant(cubes, lattice: DyadicLattice) -> CarlesonReport:
    """max over Q of sum_{P subset Q} |P| / |Q|, exact."""
    cubes = list(cubes.cubes) if isinstance(cubes, SparseFamily) else list(cubes)
    if not cubes:
        return CarlesonReport(Fraction(0), None)
    order, parent = _forest(lattice, cubes)
    total = {Q: Fraction(lattice.block(Q.level)) for Q in order}
    for Q in reversed(order):  # children come after parents in the sweep
        P = parent[Q]
        if P is not None:
            total[P] += total[Q]
    worst = max(order, key=lambda Q: total[Q] / lattice.block(Q.level))
    return CarlesonReport(total[worst] / lattice.block(worst.level), worst)


# -- stopping-time family ------------------------------------------------

@dataclass
class StoppingNode:
    cube: DyadicCube
    average: float
    children: list
    packing: Fraction  # sum of |L| over the stopping children, divided by |J|


@dataclass
class StoppingResult:
    family: SparseFamily
    nodes: list
    levels: dict  # generation -> number of cubes

    @property
    def worst_packing(self) -> Fraction:
        return max((nd.packing for nd in self.nodes), default=Fraction(0))


def maximal_exceeding(L: DyadicLattice, J: DyadicCube, g: np.ndarray, threshold: float) -> list[DyadicCube]:
    """Maximal proper dyadic subcubes of J with mean of g above ``threshold``.

    ``g`` holds the values on the cells of J only.
    """
    covered = np.zeros(g.size, dtype=bool)
    base = L.index(J)
    out = []
    for lev in range(J.level + 1, L.depth + 1):
        size = L.block(lev)
        means = g.reshape(-1, size).mean(axis=1)
        hit = (means > threshold) & ~covered.reshape(-1, size).any(axis=1)
        per = L.count(lev) // L.count(J.level)
        for i in np.flatnonzero(hit):
            out.append(L.cube(lev, base * per + int(i)))
            covered[i * size:(i + 1) * size] = True
    return out


def stopping_integrand(W: MatrixWeight, f: VectorField, p: float, q: float, J: DyadicCube) -> np.ndarray:
    """|W_{J,q}^{q/p} W^{-1/p}(x) f(x)| on the cells of J."""
    R = reducing_operator(W, q, J)
    M = spd_power(R.A, q / p)
    cells = W.lattice.cells(J)
    v = np.einsum("xij,xj->xi", W.power(-1.0 / p)[cells], f.columns[cells])
    return np.linalg.norm(v @ M.T, axis=1)


def stopping_family(J: DyadicCube, W: MatrixWeight, f: VectorField, p: float, q: float) -> StoppingResult:
    """Iterated maximal cubes where the localized average jumps by more than 4."""
    L = W.lattice
    L.check(J)
    if not np.any(f.columns[L.cells(J)]):
        raise DomainError("f vanishes on J")
    nodes, levels, cubes = [], {}, []
    gen = [J]
    k = 0
    while gen:
        levels[k] = len(gen)
        nxt = []
        for Jp in gen:
            cubes.append(Jp)
            g = stopping_integrand(W, f, p, q, Jp)
            avg = float(g.mean())
            if avg == 0.0:
                nodes.append(StoppingNode(Jp, 0.0, [], Fraction(0)))
                continue
            kids = maximal_exceeding(L, Jp, g, STOP_THRESHOLD * avg)
            packing = sum((Fraction(L.block(C.level)) for C in kids), Fraction(0)) / L.block(Jp.level)
            if packing > Fraction(1, STOP_THRESHOLD):
                raise PackingError(f"packing {packing} exceeds 1/4 at {Jp}")
            nodes.append(StoppingNode(Jp, avg, kids, packing))
            nxt.extend(kids)
        gen = nxt
        k += 1
    fam = verify_sparse(cubes, Fraction(3, 4), L)
    return StoppingResult(fam, nodes, levels)


# -- sparse operators ----------------------------------------------------

def _cube_list(S):
    return list(S.cubes) if isinstance(S, SparseFamily) else list(S)


def mixed_kernel(W: MatrixWeight, V: MatrixWeight, p: float) -> np.ndarray:
    """K[x, y] = ||W^{1/p}(x) V^{-1/p}(y)||."""
    if W.lattice != V.lattice or W.n != V.n:
        raise DomainError("W and V must share lattice and size")
    return pair_norms(W.power(1.0 / p), V.power(-1.0 / p))


def oscillation(b: np.ndarray, L: DyadicLattice, Q: DyadicCube) -> np.ndarray:
    vals = np.asarray(b, dtype=float)[L.cells(Q)]
    return np.abs(vals - vals.mean())


class SparseOperator:
    """Dense cell matrix of T_S^{W,V}, optionally with commutator oscillation factors."""

    def __init__(self, S, W: MatrixWeight, V: MatrixWeight, p: float, b=None, K=None):
        L = W.lattice
        self.lattice, self.p = L, p
        self.cubes = _cube_list(S)
        K = mixed_kernel(W, V, p) if K is None else K
        N = L.ncells
        M = np.zeros((N, N))
        bb = None if b is None else np.asarray(getattr(b, "values", b), dtype=float)
        for Q in self.cubes:
            c = L.cells(Q)
            blk = K[c, c]
            if bb is not None:
                o = oscillation(bb, L, Q)
                blk = blk * (o[:, None] + o[None, :])
            M[c, c] += blk / L.block(Q.level)
        self.matrix = M

    def __call__(self, phi):
        return self.matrix @ np.asarray(getattr(phi, "values", phi), dtype=float)

    def adjoint(self, psi):
        return self.matrix.T @ np.asarray(psi, dtype=float)


def sparse_apply(S, W: MatrixWeight, V: MatrixWeight, p: float, phi) -> np.ndarray:
    """sum_Q chi_Q(x) (1/|Q|) int_Q ||W^{1/p}(x)V^{-1/p}(y)|| phi(y) dy, cell by cell."""
    phi = np.asarray(getattr(phi, "values", phi), dtype=float)
    if np.any(phi < 0):
        raise DomainError("phi must be non-negative")
    L = W.lattice
    K = mixed_kernel(W, V, p)
    out = np.zeros(L.ncells)
    for Q in _cube_list(S):
        c = L.cells(Q)
        out[c] += K[c, c] @ phi[c] / L.block(Q.level)
    return out


def commutator_sparse_apply(S, W: MatrixWeight, V: MatrixWeight, p: float, b, phi) -> np.ndarray:
    """x-side plus y-side oscillation sums of the sparse commutator form."""
    phi = np.asarray(getattr(phi, "values", phi), dtype=float)
    if np.any(phi < 0):
        raise DomainError("phi must be non-negative")
    b = np.asarray(getattr(b, "values", b), dtype=float)
    L = W.lattice
    K = mixed_kernel(W, V, p)
    out = np.zeros(L.ncells)
    for Q in _cube_list(S):
        c = L.cells(Q)
        o = oscillation(b, L, Q)
        size = L.block(Q.level)
        out[c] += o * (K[c, c] @ phi[c]) / size + K[c, c] @ (o * phi[c]) / size
    return out


# -- bump bounds ---------------------------------------------------------

def maximal_norm(A: YoungFunction, p: float) -> float:
    """Dyadic L^p bound for M_{A-bar}; infinite when the exponent is too large."""
    return dyadic_ma_norm(conjugate(A), p)


@dataclass
class BumpTerm:
    kappa_xy: float
    kappa_yx: float
    ma_x: float   # bound for M_{A-bar} on L^{p'}
    ma_y: float   # bound for M_{B-bar} on L^p
    ma_x_tail: float  # tail-integral form of the same bounds, c_d = 1
    ma_y_tail: float

    @property
    def value(self) -> float:
        return self.ma_x * self.ma_y * min(self.kappa_xy, self.kappa_yx)


@dataclass
class BumpReport:
    p: float
    eta: Fraction
    terms: list
    divergent: bool

    @property
    def rhs(self) -> float:
        if self.divergent:
            return math.inf
        return float(sum(t.value for t in self.terms) / self.eta)

    @property
    def kappas(self) -> list[float]:
        return [k for t in self.terms for k in (t.kappa_xy, t.kappa_yx)]


def _bump_term(L, cubes, K, p, A, B, weight_x=None, weight_y=None, b=None):
    pp = conj_exp(p)
    kx = ky = 0.0
    for Q in cubes:
        c = L.cells(Q)
        KQ = K[c, c]
        if b is not None:
            o = oscillation(b, L, Q)
            KQ = KQ * (o[:, None] if weight_x else o[None, :])
        kx = max(kx, nested_bump_norm(KQ, A, B, "xy"))
        ky = max(ky, nested_bump_norm(KQ, A, B, "yx"))
    return BumpTerm(kx, ky, maximal_norm(A, pp), maximal_norm(B, p),
                    ma_norm_bound(conjugate(A), pp), ma_norm_bound(conjugate(B), p))


def bump_bound(S, W: MatrixWeight, V: MatrixWeight, p: float, A: YoungFunction, B: YoungFunction,
               eta=None) -> BumpReport:
    """(1/eta) ||M_{A-bar}||_{p'} ||M_{B-bar}||_p min(kappa_1, kappa_2) for an eta-sparse S.

    With exact power conjugates Hoelder holds with constant 1 and the dyadic
    maximal norms are Doob's, so the right side is a rigorous upper bound.
    """
    L = W.lattice
    eta = Fraction(eta if eta is not None else getattr(S, "eta", 1))
    cubes = _cube_list(S)
    K = mixed_kernel(W, V, p)
    t = _bump_term(L, cubes, K, p, A, B)
    return BumpReport(p, eta, [t], not math.isfinite(t.ma_x * t.ma_y))


def commutator_bump_bound(S, W: MatrixWeight, V: MatrixWeight, p: float, b,
                          A: YoungFunction, B: YoungFunction, C: YoungFunction, D: YoungFunction,
                          eta=None) -> BumpReport:
    """Lambda_1 (|b(x)-<b>_Q| K with A, B) plus Lambda_2 (|b(y)-<b>_Q| K with C, D)."""
    L = W.lattice
    eta = Fraction(eta if eta is not None else getattr(S, "eta", 1))
    b = np.asarray(getattr(b, "values", b), dtype=float)
    cubes = _cube_list(S)
    K = mixed_kernel(W, V, p)
    t1 = _bump_term(L, cubes, K, p, A, B, weight_x=True, b=b)
    t2 = _bump_term(L, cubes, K, p, C, D, weight_x=False, b=b)
    div = not all(math.isfinite(t.ma_x * t.ma_y) for t in (t1, t2))
    return BumpReport(p, eta, [t1, t2], div)


def young_choice(kind: str, p, d: int, K, q=None, commutator: bool = False):
    """Young functions for the A_1 and A_q bump arguments.

    A_1: A = t^{rp}, B-bar = t^{(p+1)/2}. A_q: A = t^{rp}, B = t^{q'}.
    Commutators swap A for t^{sp}, s = (r+1)/2, and add C = t^{rp} with
    D-bar = t^{(p+1)/2} (A_1) or D = t^{q'} (A_q). Exponents stay exact
    when p, q and K are rational.
    """
    exact = all(isinstance(v, (int, Fraction)) for v in (p, K)) and (q is None or isinstance(q, (int, Fraction)))
    num = Fraction if exact else float
    p = num(p)
    r = num(bump_exponent(d, K if exact else float(K)))
    if kind == "A1":
        B = conjugate(YoungFunction((p + 1) / 2))
    elif kind == "Aq":
        if q is None or not 1 < q < p:
            raise DomainError("the A_q choice needs 1 < q < p")
        q = num(q)
        B = YoungFunction(q / (q - 1))
    else:
        raise DomainError(f"unknown choice {kind!r}")
    A = YoungFunction(r * p)
    if not commutator:
        return A, B
    s = (r + 1) / 2
    return YoungFunction(s * p), B, A, B
