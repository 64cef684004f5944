"""Reducing operators: matrices A with |Ax| comparable to an averaged norm.

rho_{W,p,Q}(x) = (avg_{t in Q} |W^{1/p}(t) x|^p)^{1/p}. For p = 2 the norm is
a quadratic form and A is exact. Otherwise A comes from a John-type ellipsoid
of the sampled unit ball; the normalisation is |Ax| <= rho(x) <= sqrt(n) |Ax|,
which the p = 2 closed form meets with equality.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .grid import DyadicCube, DomainError
from .linalg import opnorm, spd_power, spd_project, sym
from .weights import MatrixWeight, ap_constant, conj_exp

FIT_SAMPLES = {2: 256, 3: 770}
CHECK_SAMPLES = {2: 360, 3: 1200}
SLACK = 1e-6


class FitError(RuntimeError):
    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}


@dataclass
class ReducingOperator:
    cube: DyadicCube
    p: float
    A: np.ndarray
    kappa: float
    dual: bool = False
    iterations: int = 0
    exact: bool = False

    def __call__(self, x):
        return np.linalg.norm(self.A @ np.asarray(x, dtype=float), axis=0)


def _norm_values(mats: np.ndarray, r: float, X: np.ndarray) -> np.ndarray:
    """(avg_t |mats[t] X|^r)^{1/r} for unit columns X (n, k)."""
    v = np.linalg.norm(np.einsum("tij,jk->tik", mats, X), axis=1)
    return (v ** r).mean(axis=0) ** (1.0 / r)


def _factor(W: MatrixWeight, p: float, dual: bool):
    """Matrix field and exponent defining rho (or rho* when dual)."""
    if dual:
        return W.power(-1.0 / p), conj_exp(p)
    return W.power(1.0 / p), p


def rho(W: MatrixWeight, p: float, Q: DyadicCube, x) -> float | np.ndarray:
    if p < 1:
        raise DomainError("p must be at least 1")
    mats = W.power(1.0 / p)[W.lattice.cells(Q)]
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    out = _norm_values(mats, p, X.reshape(W.n, -1))
    return float(out[0]) if single else out


def rho_dual(W: MatrixWeight, p: float, Q: DyadicCube, x) -> float | np.ndarray:
    """rho*_{W,p',Q}(x) = (avg |W^{-1/p}(t) x|^{p'})^{1/p'}."""
    mats = W.power(-1.0 / p)[W.lattice.cells(Q)]
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    out = _norm_values(mats, conj_exp(p), X.reshape(W.n, -1))
    return float(out[0]) if single else out


def sphere_directions(n: int, k: int, offset: float = 0.0) -> np.ndarray:
    """Deterministic unit directions covering the sphere up to sign, (n, k)."""
    if n == 2:
        t = (np.arange(k) + offset) * math.pi / k
        return np.stack([np.cos(t), np.sin(t)])
    i = np.arange(k) + 0.5 + offset
    z = 1.0 - 2.0 * i / k
    phi = i * math.pi * (3 - math.sqrt(5))
    rr = np.sqrt(np.maximum(1 - z * z, 0))
    if n == 3:
        return np.stack([rr * np.cos(phi), rr * np.sin(phi), z])
    rng = np.random.default_rng(12345)
    X = rng.standard_normal((n, k))
    return X / np.linalg.norm(X, axis=0)


def mvee_symmetric(P: np.ndarray, max_iter: int = 500, tol: float = 1e-9):
    """Minimum-volume origin-centred ellipsoid containing the columns of +-P.

    Solves max log det G subject to p_i^T G p_i <= 1 over the n(n+1)/2
    entries of G (constraints are linear in G) on whitened points.
    Returns (M, delta, iters) with P_i^T M^{-1} P_i <= n(1+delta) for all i,
    so {y : y^T (n(1+delta) M)^{-1} y <= 1} contains every point.
    """
    n, m = P.shape
    T = spd_power(sym(P @ P.T / m), -0.5)
    Q = T @ P
    iu = np.triu_indices(n)
    mult = np.where(iu[0] == iu[1], 1.0, 2.0)
    Phi = (Q[iu[0]] * Q[iu[1]]).T * mult  # p^T G p = Phi @ g

    def unpack(g):
        G = np.zeros((n, n))
        G[iu] = g
        return G + np.triu(G, 1).T

    def obj(g):
        s, ld = np.linalg.slogdet(unpack(g))
        return 1e6 if s <= 0 else -ld

    def grad(g):
        return -np.linalg.inv(unpack(g))[iu] * mult

    g0 = np.eye(n)[iu] / float(np.einsum("ij,ij->j", Q, Q).max())
    res = minimize(obj, g0, jac=grad, method="SLSQP",
                   constraints=[{"type": "ineq", "fun": lambda g: 1 - Phi @ g, "jac": lambda g: -Phi}],
                   options={"ftol": 1e-14, "maxiter": max_iter})
    G = unpack(res.x)
    worst = float((Phi @ res.x).max())
    if not np.all(np.isfinite(G)) or worst > 1 + 1e-6 or np.linalg.eigvalsh(G).min() <= 0:
        return mvee_frank_wolfe(P, tol=tol)
    M = np.linalg.inv(T @ G @ T) / n   # back to the original frame
    return sym(M), max(worst - 1.0, 0.0), int(res.nit)


def mvee_frank_wolfe(P: np.ndarray, max_iter: int = 5000, tol: float = 1e-9):
    """Frank-Wolfe iteration with away steps on the D-optimal design weights.

    Same contract as mvee_symmetric; slow near polytopal balls, kept as the
    fallback when the primal solve does not return a feasible point.
    """
    n, m = P.shape
    T = spd_power(sym(P @ P.T / m), -0.5)
    P0, P = P, T @ P
    u = np.full(m, 1.0 / m)
    it = 0
    for it in range(1, max_iter + 1):
        M = (P * u) @ P.T
        kap = np.einsum("ij,ij->j", P, np.linalg.solve(M, P))
        j = int(np.argmax(kap))
        supp = np.flatnonzero(u > 0)
        jj = supp[int(np.argmin(kap[supp]))]
        toward = kap[j] - n
        away = n - kap[jj]
        if toward <= n * tol:
            break
        if toward >= away:
            a = toward / (n * (kap[j] - 1))
            u *= 1 - a
            u[j] += a
        else:
            # away step, clipped so the weight stays non-negative
            cap = u[jj] / (1 - u[jj]) if u[jj] < 1 else 0.0
            a = away / (n * (kap[jj] - 1)) if kap[jj] > 1 else cap
            a = min(a, cap)
            u *= 1 + a
            u[jj] -= a
            u = np.maximum(u, 0)
            u /= u.sum()
    M = (P0 * u) @ P0.T
    kap = np.einsum("ij,ij->j", P0, np.linalg.solve(M, P0))
    delta = max(float(kap.max()) / n - 1.0, 0.0)
    return M, delta, it


def john_from_norm(norm_fn, n: int, samples: int | None = None, max_iter: int = 500):
    """Fit A with |Ax| <= rho(x) <= sqrt(n)|Ax| from boundary samples of {rho <= 1}.

    The ellipsoid {|Ax| <= 1} is the minimum-volume ellipsoid around the
    sampled ball (equivalently the polar of the maximum-volume ellipsoid
    inside the dual ball). Elongated balls are resampled in the frame of a
    first fit, and the check directions are part of the sample, so the
    sandwich holds on every direction that fit_quality inspects.
    """
    S = samples or FIT_SAMPLES.get(n, 400 * n)
    X = np.concatenate([sphere_directions(n, S),
                        sphere_directions(n, CHECK_SAMPLES.get(n, 600 * n), offset=0.37)], axis=1)

    def fit(X):
        r = norm_fn(X)
        if np.any(r <= 0) or not np.all(np.isfinite(r)):
            raise FitError("norm vanishes or is non-finite on the sphere", {"min": float(np.min(r))})
        M, delta, it = mvee_symmetric(X / r, max_iter=max_iter)
        return spd_project(spd_power(spd_project(n * (1 + delta) * M), -0.5)), it

    A0, it0 = fit(X)
    V = np.linalg.solve(A0, sphere_directions(n, S, offset=0.5))
    X = np.concatenate([X, V / np.linalg.norm(V, axis=0)], axis=1)
    A, it = fit(X)
    gamma = float(np.max(np.linalg.norm(A @ X, axis=0) / norm_fn(X)))
    return A / max(gamma, 1.0), it0 + it


def fit_quality(A: np.ndarray, norm_fn, n: int, check: int | None = None):
    k = check or CHECK_SAMPLES.get(n, 600 * n)
    X = sphere_directions(n, k, offset=0.37)
    r = norm_fn(X)
    a = np.linalg.norm(A @ X, axis=0)
    lo = float(np.max(a / r))        # must be <= 1
    hi = float(np.max(r / a))        # must be <= sqrt(n)
    return lo, hi, max(hi, 1.0 / float(np.min(a / r)))


def reducing_operator(W: MatrixWeight, p: float, Q: DyadicCube, dual: bool = False,
                      samples: int | None = None) -> ReducingOperator:
    """Reducing operator of rho_{W,p,Q} (or rho*_{W,p',Q} when dual)."""
    if p < 1 or (dual and p <= 1):
        raise DomainError("bad exponent")
    W.lattice.check(Q)
    n = W.n
    mats, r = _factor(W, p, dual)
    mats = mats[W.lattice.cells(Q)]
    if r == 2.0 or n == 1:
        # quadratic (or scalar) case: exact closed form
        if n == 1:
            A = np.array([[float((np.abs(mats[:, 0, 0]) ** r).mean() ** (1 / r))]])
        else:
            A = spd_power(sym((np.swapaxes(mats, 1, 2) @ mats).mean(axis=0)), 0.5)
        return ReducingOperator(Q, p, A, 1.0, dual, 0, True)

    def norm_fn(X):
        return _norm_values(mats, r, X)

    A, it = john_from_norm(norm_fn, n, samples)
    lo, hi, kappa = fit_quality(A, norm_fn, n)
    if lo > 1 + SLACK or hi > math.sqrt(n) * (1 + SLACK):
        raise FitError(f"John sandwich violated on {Q}", {"lo": lo, "hi": hi, "iterations": it})
    return ReducingOperator(Q, p, A, kappa, dual, it, False)


def reducing_family(W: MatrixWeight, p: float, dual: bool = False, max_level: int | None = None):
    """Reducing matrices of every cube, as {level: array (count, n, n)}, plus worst kappa."""
    L = W.lattice
    top = L.depth if max_level is None else min(max_level, L.depth)
    mats, r = _factor(W, p, dual)
    out = {}
    worst = 1.0
    if r == 2.0 or W.n == 1:
        if W.n == 1:
            vals = np.abs(mats[:, 0, 0]) ** r
            for lev in range(top + 1):
                out[lev] = (L.level_means(vals, lev) ** (1 / r)).reshape(-1, 1, 1)
        else:
            G = np.swapaxes(mats, 1, 2) @ mats
            for lev in range(top + 1):
                out[lev] = spd_power(sym(L.level_means(G, lev)), 0.5)
        return out, worst
    for lev in range(top + 1):
        arr = np.empty((L.count(lev), W.n, W.n))
        for i in range(L.count(lev)):
            R = reducing_operator(W, p, L.cube(lev, i), dual)
            arr[i] = R.A
            worst = max(worst, R.kappa)
        out[lev] = arr
    return out, worst


def ap_via_reducing(W: MatrixWeight, p: float, max_level: int | None = None) -> float:
    prim, _ = reducing_family(W, p, False, max_level)
    dual, _ = reducing_family(W, p, True, max_level)
    best = 0.0
    for lev in prim:
        best = max(best, float(opnorm(prim[lev] @ dual[lev]).max()))
    return best ** p


@dataclass
class DualityReport:
    p: float
    ap: float
    ap_dual: float
    ratio: float
    ratio_stated_exponent: float
    rho_identity_error: float
    directions: int = field(default=64)


def duality_check(W: MatrixWeight, p: float, directions: int = 64) -> DualityReport:
    """Compare [W]_{A_p} with [V]_{A_p'}^{p-1}, V = W^{-1/(p-1)}.

    Also reports the ratio with exponent 1/(p-1) on the right, and checks
    rho_{V,p',Q} = rho*_{W,p',Q} on every cube and sampled direction.
    """
    pp = conj_exp(p)
    V = W.transform(-1.0 / (p - 1.0))
    ap = ap_constant(W, p)
    apd = ap_constant(V, pp)
    L = W.lattice
    X = sphere_directions(W.n, directions) if W.n > 1 else np.ones((1, 1))
    a = np.linalg.norm(np.einsum("tij,jk->tik", V.power(1.0 / pp), X), axis=1) ** pp
    b = np.linalg.norm(np.einsum("tij,jk->tik", W.power(-1.0 / p), X), axis=1) ** pp
    err = 0.0
    for lev in range(L.depth + 1):
        ra = L.level_means(a, lev) ** (1 / pp)
        rb = L.level_means(b, lev) ** (1 / pp)
        err = max(err, float(np.max(np.abs(ra - rb) / rb)))
    return DualityReport(p, ap, apd, ap / apd ** (p - 1.0), ap / apd ** (1.0 / (p - 1.0)), err, X.shape[1])
