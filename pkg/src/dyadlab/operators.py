"""Maximal operators, the dyadic model operator, sparse domination and the commutator lift."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .convex_body import Zonotope, membership
from .grid import DomainError, DyadicCube, DyadicLattice, VectorField
from .orlicz import YoungFunction
from .reducing import reducing_family
from .sparse import verify_sparse
from .weights import MatrixWeight


def _vals(f):
    return np.asarray(f.values if isinstance(f, VectorField) else f, dtype=float)


def _modulus(v: np.ndarray) -> np.ndarray:
    return np.abs(v) if v.ndim == 1 else np.linalg.norm(v, axis=1)


# -- maximal functions ---------------------------------------------------

def maximal(f, variant="plain", lattice: DyadicLattice | None = None) -> np.ndarray:
    """Dyadic maximal function: plain, q-power (a number q >= 1) or Orlicz (a YoungFunction)."""
    if isinstance(f, VectorField):
        lattice = f.lattice
    if lattice is None:
        raise DomainError("lattice required for raw arrays")
    a = _modulus(_vals(f))
    if variant == "plain":
        s, scale = 1.0, 1.0
    elif isinstance(variant, YoungFunction):
        s, scale = variant.s, variant.scale
    else:
        s, scale = float(variant), 1.0
        if s < 1:
            raise DomainError("q must be at least 1")
    a = scale * a ** s
    out = a.copy()
    for lev in range(lattice.depth):
        out = np.maximum(out, lattice.expand(lattice.level_means(a, lev), lev))
    return out ** (1.0 / s)


class WeightedMaximal:
    """M_{W,p} (W^{1/p}(x) inside the average) or M'_{W,p} (reducing operator of the cube).

    Besides evaluation it returns a subgradient of f -> sum psi * Mf, which
    drives the power iteration in the lab.
    """

    def __init__(self, W: MatrixWeight, p: float, primed: bool = False, reducing=None):
        if p <= 1:
            raise DomainError("p must exceed 1")
        self.W, self.p, self.primed = W, p, primed
        L = W.lattice
        self.lattice = L
        self.inv = W.power(-1.0 / p)
        n = W.n
        self._pairs = [(i, j) for i in range(n) for j in range(i, n)]
        if primed:
            self.reducing, self.kappa = reducing if reducing is not None else reducing_family(W, p)
        else:
            # |W^{1/p}(x) g|^2 = g^T W^{2/p}(x) g, linear in the monomials g_i g_j
            self.quad = W.power(2.0 / p)
            rows, cols = zip(*self._pairs)
            self.coef = self.quad[:, list(rows), list(cols)]
            self.kappa = 1.0

    @property
    def shape(self):
        return (self.lattice.ncells, self.W.n)

    def _monomials(self, G):
        return np.stack([G[:, i] * G[:, j] * (1.0 if i == j else 2.0) for i, j in self._pairs], axis=1)

    def _level(self, G, mono, lev):
        """Per-cell value at this level, plus the tables the subgradient needs."""
        L = self.lattice
        if self.primed:
            prod = np.einsum("cij,cyj->cyi", self.reducing[lev], L.blocks(G, lev))
            nrm = np.linalg.norm(prod, axis=2)  # (c, s_y)
            return L.expand(nrm.mean(axis=1), lev), prod, nrm
        sq = L.blocks(self.coef, lev) @ np.swapaxes(L.blocks(mono, lev), 1, 2)  # (c, s_x, s_y)
        nrm = np.sqrt(np.maximum(sq, 0.0))
        return nrm.mean(axis=2).reshape(-1), None, nrm

    def _prepare(self, f):
        v = _vals(f).reshape(self.lattice.ncells, self.W.n)
        G = np.einsum("xij,xj->xi", self.inv, v)
        return G, (None if self.primed else self._monomials(G))

    def evaluate(self, f, return_level: bool = False):
        G, mono = self._prepare(f)
        best = np.full(self.lattice.ncells, -1.0)
        where = np.zeros(self.lattice.ncells, dtype=int)
        for lev in range(self.lattice.depth + 1):
            val = self._level(G, mono, lev)[0]
            up = val > best
            best[up], where[up] = val[up], lev
        return (best, where) if return_level else best

    __call__ = evaluate

    def subgradient(self, f, psi) -> np.ndarray:
        L = self.lattice
        n = self.W.n
        G, mono = self._prepare(f)
        _, where = self.evaluate(f, return_level=True)
        grad = np.zeros_like(G)
        psi = np.asarray(psi, dtype=float)
        for lev in range(L.depth + 1):
            wx = np.where(where == lev, psi, 0.0)
            if not wx.any():
                continue
            _, prod, nrm = self._level(G, mono, lev)
            s = L.block(lev)
            if self.primed:
                with np.errstate(invalid="ignore", divide="ignore"):
                    u = np.where(nrm[..., None] > 0, prod / nrm[..., None], 0.0)
                wq = L.blocks(wx, lev).sum(axis=1)
                g = np.einsum("cij,cyi->cyj", self.reducing[lev], u) * (wq[:, None, None] / s)
            else:
                # d|A_x g|/dg = W^{2/p}(x) g / |A_x g|, weighted by psi(x), summed over x
                with np.errstate(invalid="ignore", divide="ignore"):
                    coef = np.where(nrm > 0, L.blocks(wx, lev)[:, :, None] / nrm, 0.0)
                Ms = np.swapaxes(coef, 1, 2) @ L.blocks(self.quad.reshape(-1, n * n), lev)
                Ms = Ms.reshape(-1, s, n, n)
                g = np.einsum("cyij,cyj->cyi", Ms, L.blocks(G, lev)) / s
            grad += g.reshape(-1, n)
        return np.einsum("xji,xj->xi", self.inv, grad)


def weighted_maximal(f: VectorField, W: MatrixWeight, p: float, primed: bool = False) -> np.ndarray:
    return WeightedMaximal(W, p, primed)(f)


# -- model operator ------------------------------------------------------

def haar_basis(L: DyadicLattice) -> tuple[np.ndarray, list]:
    """Orthonormal Haar vectors (columns) for counting measure on cells, with (cube, type) labels."""
    N, d = L.ncells, L.d
    nch = 1 << d
    cols, labels = [], []
    for lev in range(L.depth):
        size = L.block(lev)
        child = size // nch
        for e in range(1, nch):
            signs = np.array([(-1.0) ** bin(k & e).count("1") for k in range(nch)])
            pattern = np.repeat(signs, child) / math.sqrt(size)
            for i in range(L.count(lev)):
                h = np.zeros(N)
                h[i * size:(i + 1) * size] = pattern
                cols.append(h)
                labels.append((L.cube(lev, i), e))
    H = np.stack(cols, axis=1) if cols else np.zeros((N, 0))
    return H, labels


class ModelOperator:
    """Haar multiplier sum sigma_I <f, h_I> h_I, or an explicit cell kernel; acts componentwise."""

    def __init__(self, lattice: DyadicLattice, matrix: np.ndarray, kind: str = "kernel", sigma=None):
        M = np.asarray(matrix, dtype=float)
        if M.shape != (lattice.ncells, lattice.ncells):
            raise DomainError("kernel must be ncells x ncells")
        self.lattice, self.matrix, self.kind, self.sigma = lattice, M, kind, sigma

    @classmethod
    def martingale(cls, lattice: DyadicLattice, sigma) -> "ModelOperator":
        H, _ = haar_basis(lattice)
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (H.shape[1],)).copy()
        if np.any(np.abs(sigma) > 1):
            raise DomainError("Haar multipliers must satisfy |sigma| <= 1")
        return cls(lattice, (H * sigma) @ H.T, "martingale", sigma)

    @classmethod
    def random_martingale(cls, lattice: DyadicLattice, rng) -> "ModelOperator":
        rng = np.random.default_rng(rng)
        return cls.martingale(lattice, rng.uniform(-1, 1, lattice.ncells - 1))

    @classmethod
    def zero(cls, lattice: DyadicLattice) -> "ModelOperator":
        return cls(lattice, np.zeros((lattice.ncells, lattice.ncells)), "kernel")

    @classmethod
    def identity(cls, lattice: DyadicLattice) -> "ModelOperator":
        return cls(lattice, np.eye(lattice.ncells), "kernel")

    def __call__(self, f):
        return apply(self, f)


def apply(T: ModelOperator, f):
    """T f, componentwise; returns the same container type as f."""
    if isinstance(f, VectorField):
        return VectorField(f.lattice, T.matrix @ f.values)
    return T.matrix @ np.asarray(f, dtype=float)


def grand_maximal(T: ModelOperator, f, triple: bool = True) -> np.ndarray:
    """sup_{Q containing x} max_{y in Q} |T(f chi_{outside})(y)|, outside = off 3Q (or off Q)."""
    L = T.lattice
    v = _vals(f).reshape(L.ncells, -1)
    out = np.zeros(L.ncells)
    for lev in range(L.depth + 1):
        for i in range(L.count(lev)):
            Q = L.cube(lev, i)
            c = L.cells(Q)
            keep = ~L.triple_mask(Q) if triple else np.ones(L.ncells, bool)
            if not triple:
                keep[c] = False
            if not keep.any():
                continue
            val = float(_modulus(T.matrix[c][:, keep] @ v[keep]).max())
            out[c] = np.maximum(out[c], val)
    return out


def local_grand_maximal(T: ModelOperator, g: np.ndarray, Q: DyadicCube) -> np.ndarray:
    """Dyadic M_T restricted to P inside Q for g supported on Q; values on Q's cells (l1 modulus)."""
    L = T.lattice
    c = L.cells(Q)
    TQ = T.matrix[c, c]
    gq = g.reshape(-1, g.shape[-1]) if g.ndim > 1 else g[:, None]
    full = TQ @ gq
    out = np.zeros(gq.shape[0])
    for lev in range(Q.level, L.depth + 1):
        s = L.block(lev)
        k = gq.shape[0] // s
        Tb = TQ.reshape(k, s, k, s)[np.arange(k), :, np.arange(k), :]  # (k, s, s)
        inner = np.einsum("kxy,kyi->kxi", Tb, gq.reshape(k, s, -1)).reshape(-1, gq.shape[1])
        rest = np.abs(full - inner).sum(axis=1)
        out = np.maximum(out, np.repeat(rest.reshape(k, s).max(axis=1), s))
    return out


def weak_type_diagnostic(T: ModelOperator, max_level: int | None = None) -> float:
    """sup of lambda |{|Tg| > lambda}| / ||g||_1 and the same for the dyadic M_T, over cube indicators."""
    L = T.lattice
    top = L.depth if max_level is None else min(max_level, L.depth)
    N = L.ncells
    best = 0.0
    rank = np.arange(1, N + 1) / N
    for lev in range(top + 1):
        for i in range(min(L.count(lev), 4)):
            Q = L.cube(lev, i)
            g = np.zeros(N)
            g[L.cells(Q)] = 1.0
            norm1 = float(Q.measure)
            for vals in (np.abs(T.matrix @ g), local_grand_maximal(T, g, L.root)):
                srt = np.sort(vals)[::-1]
                best = max(best, float(np.max(srt * rank)) / norm1)
    return best


def bmo_dyadic(b, lattice: DyadicLattice | None = None) -> float:
    """max over dyadic Q of <|b - <b>_Q|>_Q."""
    if isinstance(b, VectorField):
        lattice = b.lattice
    v = _vals(b)
    best = 0.0
    for lev in range(lattice.depth + 1):
        blk = lattice.blocks(v, lev)
        best = max(best, float(np.abs(blk - blk.mean(axis=1, keepdims=True)).mean(axis=1).max()))
    return best


# -- sparse domination -----------------------------------------------------

class DominationError(RuntimeError):
    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}


@dataclass
class DominationResult:
    lattice: DyadicLattice
    families: list          # 3^d families; all cubes sit in the first (dyadic localisation)
    kernels: dict           # cube -> (|Q|, |Q|) array k_Q[x, y]
    prefactor: float
    epsilon: Fraction
    c_T: float
    lam: float
    doublings: int
    reconstruction_error: float = 0.0
    kernel_sup: float = 0.0
    field_values: np.ndarray = field(default=None, repr=False)

    @property
    def cubes(self) -> list:
        return [Q for S in self.families for Q in S]

    def reconstruct(self, f) -> np.ndarray:
        """c * sum_Q <k_Q(x, .) f>_Q chi_Q(x)."""
        L = self.lattice
        v = _vals(f).reshape(L.ncells, -1)
        out = np.zeros_like(v)
        for Q in self.cubes:
            c = L.cells(Q)
            out[c] += self.kernels[Q] @ v[c] / L.block(Q.level)
        return self.prefactor * out

    def containment(self, Tf, f, tol: float = 1e-9) -> tuple[bool, float]:
        """Check Tf(x) in c * sum_{Q containing x} <<f>>_Q at every cell; returns (ok, worst margin)."""
        L = self.lattice
        v = _vals(f).reshape(L.ncells, -1)
        t = np.asarray(Tf, dtype=float).reshape(L.ncells, -1)
        cubes = self.cubes
        ok, worst = True, math.inf
        for x in range(L.ncells):
            gens = [v[L.cells(Q)] * (self.prefactor / L.block(Q.level))
                    for Q in cubes if L.cells(Q).start <= x < L.cells(Q).stop]
            if not gens:
                inside = bool(np.abs(t[x]).max() <= tol)
                ok &= inside
                continue
            G = np.concatenate(gens)
            G = G[np.abs(G).sum(axis=1) > 0]
            if G.shape[0] == 0:
                ok &= bool(np.abs(t[x]).max() <= tol)
                continue
            m = membership(t[x], Zonotope(G), tol)
            ok &= m.inside
            worst = min(worst, m.margin)
        return ok, worst


def _extreme(fr: np.ndarray, u: np.ndarray):
    phi = np.sign(fr @ u)
    return phi, (phi[:, None] * fr).mean(axis=0)


def body_basis(fr: np.ndarray, tol: float = 1e-9, max_swaps: int = 500):
    """Vertices z_i = <phi_i f>_Q of the zonotope with h(Z^{-T} e_i) <= 1 + tol.

    Greedy exchange: a vertex whose dual functional exceeds 1 gets replaced,
    which raises |det Z| by that factor, so the loop terminates.
    """
    r = fr.shape[1]
    phis, Z = [], []
    _, _, Vt = np.linalg.svd(fr, full_matrices=False)
    u = Vt[0]
    for i in range(r):
        if i:
            # a direction orthogonal to the vertices chosen so far
            Qm, _ = np.linalg.qr(np.array(Z).T, mode="complete")
            u = Qm[:, i]
        phi, z = _extreme(fr, u)
        phis.append(phi)
        Z.append(z)
    Z = np.array(Z).T  # columns are vertices
    Phi = np.array(phis).T  # (|Q|, r)
    for _ in range(max_swaps):
        Zi = np.linalg.inv(Z)
        h = np.abs(fr @ Zi.T).mean(axis=0)  # support of the body at each row of Z^{-1}
        i = int(np.argmax(h))
        if h[i] <= 1 + tol:
            return Z, Zi, Phi
        phi, z = _extreme(fr, Zi[i])
        Z[:, i] = z
        Phi[:, i] = phi
    raise DominationError("vertex exchange did not settle", {"h": h.tolist()})


def _span_basis(v: np.ndarray):
    _, s, Vt = np.linalg.svd(v, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return None
    rank = int(np.sum(s > s[0] * 1e-10))
    return Vt[:rank]


def _dominate_once(T, v, lam, eps, tol):
    L = T.lattice
    d = L.d
    prefactor_scale = (2 ** (d + 1) - 1) * (1 + tol)
    n = v.shape[1]
    prefactor = n * prefactor_scale * lam
    cubes, kernels = [], {}
    worst_k = 0.0
    stack = [L.root]
    while stack:
        Q = stack.pop()
        c = L.cells(Q)
        fq = v[c]
        B = _span_basis(fq)
        if B is None:
            continue
        fr = fq @ B.T
        Z, Zi, Phi = body_basis(fr, tol)
        ft = fr @ Zi.T  # coordinates of f in the vertex basis
        a = float(np.abs(ft).sum(axis=1).mean())
        TQ = T.matrix[c, c]
        Tq = TQ @ ft
        omega = (np.abs(Tq).sum(axis=1) > lam * a) | (local_grand_maximal(T, ft, Q) > lam * a)
        m1 = np.abs(ft).sum(axis=1)
        mx = m1.copy()
        for lev in range(Q.level, L.depth):
            s = L.block(lev)
            mx = np.maximum(mx, np.repeat(m1.reshape(-1, s).mean(axis=1), s))
        omega |= mx > lam * a
        if Fraction(int(omega.sum()), c.stop - c.start) > eps:
            return None, {"cube": Q, "fraction": float(omega.mean())}
        kids = _maximal_in(L, Q, omega)
        # remainder: T(f chi_Q) off the stopping cubes, T(f chi_{Q \ P}) on each P
        R = Tq.copy()
        for P in kids:
            pc = L.cells(P)
            lo, hi = pc.start - c.start, pc.stop - c.start
            R[lo:hi] -= TQ[lo:hi, lo:hi] @ ft[lo:hi]
        kQ = (R @ Phi.T) / prefactor
        worst_k = max(worst_k, float(np.abs(kQ).max()))
        if worst_k > 1 + 1e-12:
            return None, {"cube": Q, "kernel_sup": worst_k}
        cubes.append(Q)
        kernels[Q] = kQ
        stack.extend(kids)
    return (cubes, kernels, prefactor, worst_k), None


def _maximal_in(L: DyadicLattice, Q: DyadicCube, omega: np.ndarray) -> list:
    """Maximal proper dyadic subcubes of Q contained in the cell mask omega."""
    out = []
    base = L.index(Q)
    taken = np.zeros(omega.size, bool)
    for lev in range(Q.level + 1, L.depth + 1):
        s = L.block(lev)
        full = omega.reshape(-1, s).all(axis=1) & ~taken.reshape(-1, s).any(axis=1)
        per = L.count(lev) // L.count(Q.level)
        for i in np.flatnonzero(full):
            out.append(L.cube(lev, base * per + int(i)))
            taken[i * s:(i + 1) * s] = True
    return out


def sparse_dominate(T: ModelOperator, f, eps=Fraction(1, 2), c_T: float | None = None,
                    tol: float = 1e-9, max_doublings: int = 6) -> DominationResult:
    """Stopping-time representation T f = c sum_Q <k_Q(x,.) f>_Q chi_Q with |k_Q| <= 1.

    Stopping sets are dyadic: cubes where |T(f chi_Q)|, the local dyadic M_T
    or the dyadic maximal function of f exceeds lambda times the average of f
    in the normalised vertex basis. lambda starts at c_T/eps and doubles until
    sparsity and the kernel bound both hold.
    """
    L = T.lattice
    eps = Fraction(eps)
    if not 0 < eps < 1:
        raise DomainError("eps must lie in (0, 1)")
    v = _vals(f).reshape(L.ncells, -1)
    nfam = 3 ** L.d
    Tf = T.matrix @ v
    if c_T is None:
        c_T = max(weak_type_diagnostic(T), 1e-12)
    if not np.any(v) or not np.any(T.matrix):
        return DominationResult(L, [verify_sparse([], 1 - eps, L)] + [verify_sparse([], 1 - eps, L)] * (nfam - 1),
                                {}, 0.0, eps, c_T, 0.0, 0, float(np.abs(Tf).max()), 0.0, v)
    lam = c_T / float(eps)
    diag = {}
    for k in range(max_doublings + 1):
        out, diag = _dominate_once(T, v, lam, eps, tol)
        if out is not None:
            cubes, kernels, prefactor, worst = out
            fams = [verify_sparse(cubes, 1 - eps, L)] + [verify_sparse([], 1 - eps, L) for _ in range(nfam - 1)]
            res = DominationResult(L, fams, kernels, prefactor, eps, c_T, lam, k, 0.0, worst, v)
            res.reconstruction_error = float(np.abs(res.reconstruct(v) - Tf).max())
            return res
        lam *= 2
    raise DominationError("prefactor doubling exhausted", dict(diag, lam=lam, c_T=c_T))


# -- commutator lift -------------------------------------------------------

def phi_matrix(b: np.ndarray, n: int, inverse: bool = False) -> np.ndarray:
    """Per-cell block matrix [[I, b I], [0, I]] (or its inverse, with -b)."""
    b = np.asarray(b, dtype=float)
    s = -1.0 if inverse else 1.0
    M = np.broadcast_to(np.eye(2 * n), (b.size, 2 * n, 2 * n)).copy()
    M[:, :n, n:] = s * b[:, None, None] * np.eye(n)
    return M


@dataclass
class CommutatorLift:
    domination: DominationResult
    block_error: float        # Phi T(Phi^{-1} f~) against (Tf + [b,T]f; Tf)
    residual: float           # representation against b Tf - T(bf)
    regroup_error: float      # kernel form against the regrouped form
    sign: int                 # sign of the y-oscillation term that matched
    commutator: np.ndarray = field(repr=False)
    representation: np.ndarray = field(repr=False)


class RepresentationError(RuntimeError):
    def __init__(self, msg, cell):
        super().__init__(msg)
        self.cell = cell


def commutator_lift(T: ModelOperator, b, f, eps=Fraction(1, 2), domination: DominationResult | None = None,
                    tol: float = 1e-9) -> CommutatorLift:
    """Commutator representation obtained by dominating Phi^{-1}(f; f) = ((1-b)f; f)."""
    L = T.lattice
    b = _vals(b).ravel()
    v = _vals(f).reshape(L.ncells, -1)
    n = v.shape[1]
    lifted = np.concatenate([v, v], axis=1)
    g = np.einsum("xij,xj->xi", phi_matrix(b, n, inverse=True), lifted)
    Tg = T.matrix @ g
    back = np.einsum("xij,xj->xi", phi_matrix(b, n), Tg)
    Tf = T.matrix @ v
    comm = b[:, None] * Tf - T.matrix @ (b[:, None] * v)
    block_error = float(np.abs(back - np.concatenate([Tf + comm, Tf], axis=1)).max())

    dom = domination if domination is not None else sparse_dominate(T, g, eps, tol=tol)
    c = dom.prefactor
    direct = np.zeros_like(v)     # c sum <k_Q(x,.) (b(x) - b(.)) f>_Q
    grouped = {1: np.zeros_like(v), -1: np.zeros_like(v)}
    for Q in dom.cubes:
        cs = L.cells(Q)
        k = dom.kernels[Q]
        s = L.block(Q.level)
        bq = b[cs]
        mean = bq.mean()
        kf = k @ v[cs] / s
        kbf = k @ ((bq - mean)[:, None] * v[cs]) / s
        direct[cs] += c * ((bq[:, None] * kf) - k @ (bq[:, None] * v[cs]) / s)
        for sign in (1, -1):
            grouped[sign][cs] += c * ((bq - mean)[:, None] * kf + sign * kbf)
    errs = {sgn: float(np.abs(grouped[sgn] - comm).max()) for sgn in (1, -1)}
    sign = min(errs, key=errs.get)
    rep = grouped[sign]
    residual = errs[sign]
    regroup = float(np.abs(direct - rep).max())
    if residual > 1e-9:
        cell = int(np.argmax(np.abs(rep - comm).max(axis=1)))
        raise RepresentationError(f"commutator representation off by {residual:.3e}", cell)
    return CommutatorLift(dom, block_error, residual, regroup, sign, comm, rep)
