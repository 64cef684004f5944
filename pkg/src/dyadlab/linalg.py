"""Batched small-matrix helpers: SPD powers and spectral norms."""
from __future__ import annotations

import numpy as np


class InvalidWeight(ValueError):
    pass


def sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def spd_eig(M: np.ndarray, sym_tol: float = 1e-12):
    M = np.asarray(M, dtype=float)
    scale = np.maximum(np.abs(M).max(axis=(-1, -2), keepdims=True), 1e-300)
    if np.any(np.abs(M - np.swapaxes(M, -1, -2)) > sym_tol * scale):
        raise InvalidWeight("matrix not symmetric to tolerance")
    lam, U = np.linalg.eigh(sym(M))
    if np.any(~np.isfinite(lam)) or np.any(lam <= 0):
        raise InvalidWeight(f"non-positive eigenvalue (min {lam.min():.3e})")
    return lam, U


def eig_power(lam: np.ndarray, U: np.ndarray, a: float) -> np.ndarray:
    if a == 0:
        return np.broadcast_to(np.eye(U.shape[-1]), U.shape).copy()
    out = (U * lam[..., None, :] ** a) @ np.swapaxes(U, -1, -2)
    return sym(out)


def spd_power(M: np.ndarray, a: float) -> np.ndarray:
    lam, U = spd_eig(M)
    return eig_power(lam, U, a)


def spd_project(M: np.ndarray, floor: float = 1e-14) -> np.ndarray:
    """Symmetrize, then clip eigenvalues from below."""
    lam, U = np.linalg.eigh(sym(M))
    top = np.abs(lam).max(axis=-1, keepdims=True)
    lam = np.maximum(lam, floor * np.maximum(top, 1e-300))
    return sym((U * lam[..., None, :]) @ np.swapaxes(U, -1, -2))


def opnorm(M: np.ndarray) -> np.ndarray:
    """Spectral norm of a stack of square matrices (largest eigenvalue of M^T M)."""
    M = np.asarray(M, dtype=float)
    n = M.shape[-1]
    if n == 1:
        return np.abs(M[..., 0, 0])
    if n == 2:
        a, b, c, d = M[..., 0, 0], M[..., 0, 1], M[..., 1, 0], M[..., 1, 1]
        fro = a * a + b * b + c * c + d * d
        det = a * d - b * c
        disc = np.sqrt(np.maximum(fro * fro - 4 * det * det, 0.0))
        return np.sqrt(np.maximum(0.5 * (fro + disc), 0.0))
    G = np.swapaxes(M, -1, -2) @ M
    return np.sqrt(np.maximum(np.linalg.eigvalsh(G)[..., -1], 0.0))


def pair_norms(A: np.ndarray, B: np.ndarray, chunk: int = 256) -> np.ndarray:
    """K[x, y] = ||A[x] @ B[y]|| for stacks A (N,n,n), B (M,n,n)."""
    N = A.shape[0]
    out = np.empty((N, B.shape[0]))
    for s in range(0, N, chunk):
        prod = np.einsum("xij,yjk->xyik", A[s:s + chunk], B)
        out[s:s + chunk] = opnorm(prod)
    return out


def block_pair_norms(A: np.ndarray, B: np.ndarray, nblocks: int) -> np.ndarray:
    """Per-block pair norms: out[b, x, y] = ||A[b*s+x] @ B[b*s+y]||."""
    N, n, _ = A.shape
    s = N // nblocks
    Ab = A.reshape(nblocks, s, n, n)
    Bb = B.reshape(nblocks, s, n, n)
    prod = np.einsum("bxij,byjk->bxyik", Ab, Bb)
    return opnorm(prod)
