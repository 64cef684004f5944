"""Instance checks for the reverse-Hoelder and key lemmas, and norm lower bounds."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..grid import DomainError, DyadicLattice
from ..linalg import pair_norms
from ..orlicz import bump_exponent
from ..weights import MatrixWeight, _diag_blocks, ainf_fujii_wilson, aqinf_sc_constant


@dataclass
class LemmaKeyReport:
    p: float
    q: float
    r: float
    aqinf: float
    sup_ratio: float


def verify_lemma_key(W: MatrixWeight, p: float, q: float, aqinf: float | None = None) -> LemmaKeyReport:
    """sup over (Q, y) of (<K_p^{rp}>_Q)^{1/rp} / (<K_q^q>_Q)^{1/p}, x-averages, fixed y."""
    if not 1 <= q < p:
        raise DomainError("need 1 <= q < p")
    L = W.lattice
    K = aqinf_sc_constant(W, q).value if aqinf is None else aqinf
    r = float(bump_exponent(L.d, K))
    Kp = pair_norms(W.power(1.0 / p), W.power(-1.0 / p))
    Kq = pair_norms(W.power(1.0 / q), W.power(-1.0 / q))
    best = 0.0
    for lev in range(L.depth + 1):
        bp = _diag_blocks(Kp, L, lev)  # (c, x, y)
        bq = _diag_blocks(Kq, L, lev)
        lhs = (bp ** (r * p)).mean(axis=1) ** (1.0 / (r * p))
        rhs = (bq ** q).mean(axis=1) ** (1.0 / p)
        best = max(best, float((lhs / rhs).max()))
    return LemmaKeyReport(p, q, r, K, best)


@dataclass
class RHIReport:
    delta: float
    ainf: float
    worst_margin: float   # min over Q of (2<w>_Q - LHS)/(2<w>_Q)
    passed: bool


def verify_rhi(w, lattice: DyadicLattice, delta: float | None = None) -> RHIReport:
    """(<w^{1+delta}>_Q)^{1/(1+delta)} <= 2<w>_Q on every dyadic Q.

    The default delta is the endpoint 1/(2^{d+11}[w]_{A_inf}); any other
    value is an exploratory probe and may fail.
    """
    w = np.asarray(w, dtype=float).ravel()
    a = float(ainf_fujii_wilson(w, lattice))
    if delta is None:
        delta = 1.0 / (2 ** (lattice.d + 11) * a)
    worst = math.inf
    for lev in range(lattice.depth + 1):
        m = lattice.level_means(w, lev)
        top = lattice.blocks(w, lev).max(axis=1)
        lhs = lattice.level_means((w / np.repeat(top, lattice.block(lev))) ** (1 + delta), lev) ** (1 / (1 + delta)) * top
        worst = min(worst, float(((2 * m - lhs) / (2 * m)).min()))
    return RHIReport(delta, a, worst, worst >= 0)


# -- operator norm lower bounds ----------------------------------------

class LinearEvaluator:
    """Wraps a matrix acting on scalar cell fields; the subgradient is the adjoint."""

    def __init__(self, matrix: np.ndarray, absolute: bool = True):
        self.matrix = np.asarray(matrix, dtype=float)
        self.absolute = absolute
        self.shape = (self.matrix.shape[1],)

    def __call__(self, f):
        out = self.matrix @ f
        return np.abs(out) if self.absolute else out

    def subgradient(self, f, psi):
        out = self.matrix @ f
        return self.matrix.T @ (np.sign(out) * psi)


class PlainMaximal:
    """Scalar dyadic maximal function with a subgradient."""

    def __init__(self, lattice: DyadicLattice):
        self.lattice = lattice
        self.shape = (lattice.ncells,)

    def _levels(self, f):
        L = self.lattice
        a = np.abs(np.asarray(f, dtype=float).reshape(L.ncells))
        best = np.full(L.ncells, -1.0)
        where = np.zeros(L.ncells, dtype=int)
        for lev in range(L.depth + 1):
            val = L.expand(L.level_means(a, lev), lev)
            up = val > best
            best[up], where[up] = val[up], lev
        return best, where

    def __call__(self, f):
        return self._levels(f)[0]

    def subgradient(self, f, psi):
        L = self.lattice
        f = np.asarray(f, dtype=float).reshape(L.ncells)
        _, where = self._levels(f)
        g = np.zeros(L.ncells)
        for lev in range(L.depth + 1):
            wq = L.blocks(np.where(where == lev, psi, 0.0), lev).sum(axis=1) / L.block(lev)
            g += L.expand(wq, lev)
        return g * np.sign(f)


def _lp(v: np.ndarray, p: float) -> float:
    m = np.abs(v) if v.ndim == 1 else np.linalg.norm(v, axis=1)
    return float(np.mean(m ** p) ** (1.0 / p))


def _dual_map(v: np.ndarray, p: float) -> np.ndarray:
    """|v|^{p'-2} v (cellwise, Euclidean modulus)."""
    pp = p / (p - 1.0)
    m = np.abs(v) if v.ndim == 1 else np.linalg.norm(v, axis=1)
    scale = np.where(m > 0, np.where(m > 0, m, 1.0) ** (pp - 2), 0.0)
    return v * (scale if v.ndim == 1 else scale[:, None])


def _starts(shape, lattice, trials: int, rng, p: float):
    N = shape[0]
    out = [np.ones(shape)]
    for _ in range(trials):
        kind = rng.integers(3)
        if kind == 0:
            f = rng.standard_normal(shape)
        elif kind == 1:
            f = np.zeros(shape)
            f[rng.integers(N)] = rng.standard_normal(shape[1:]) if len(shape) > 1 else 1.0
        else:
            # Rademacher-signed chain of ancestor indicators of a random cell
            f = np.zeros(shape)
            x = int(rng.integers(N))
            depth = lattice.depth if lattice is not None else int(round(math.log2(N)))
            d = lattice.d if lattice is not None else 1
            for lev in range(depth + 1):
                size = 1 << ((depth - lev) * d)
                start = (x // size) * size
                sign = rng.choice((-1.0, 1.0), size=shape[1:]) if len(shape) > 1 else rng.choice((-1.0, 1.0))
                f[start:start + size] += sign * (N / size) ** (1.0 / p)
        out.append(f)
    return out


@dataclass
class NormEstimate:
    value: float
    field: np.ndarray
    evaluations: int


def opnorm_lower_bound(G, p: float, trials: int = 20, refine: int = 10, iterations: int = 15,
                       rng=None, lattice: DyadicLattice | None = None) -> NormEstimate:
    """Largest ||Gf||_p / ||f||_p found; every reported value is attained by a stored field.

    Each start is pushed by the power iteration f <- J_{p'}(subgradient of
    <(Gf)^{p-1}, Gf>) and then polished by random coordinate moves.
    """
    rng = np.random.default_rng(rng)
    shape = tuple(G.shape)
    lattice = lattice if lattice is not None else getattr(G, "lattice", None)
    evals = 0

    def ratio(f):
        nonlocal evals
        nf = _lp(f, p)
        if nf == 0:
            return 0.0
        evals += 1
        return _lp(np.asarray(G(f)), p) / nf

    best_val, best_f = 0.0, None
    for f in _starts(shape, lattice, trials, rng, p):
        val = ratio(f)
        if hasattr(G, "subgradient"):
            for _ in range(iterations):
                Gf = np.asarray(G(f))
                psi = np.abs(Gf) ** (p - 1)
                g = _dual_map(np.asarray(G.subgradient(f, psi)), p)
                if not np.any(g):
                    break
                v = ratio(g)
                if v <= val * (1 + 1e-12):
                    if v > val:
                        f, val = g, v
                    break
                f, val = g, v
        if val > best_val:
            best_val, best_f = val, f.copy()
    f = best_f
    step = 0.5
    for _ in range(refine):
        x = int(rng.integers(shape[0]))
        g = f.copy()
        if np.any(g[x]):
            g[x] = g[x] * (1 + step)
        else:
            g[x] = step * _lp(f, p)
        v = ratio(g)
        if v > best_val:
            best_val, f = v, g
        else:
            step *= 0.7
    return NormEstimate(best_val, f, evals)
