"""Power Young functions, Luxemburg averages and Orlicz maximal operators."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .grid import DomainError, DyadicCube, DyadicLattice, VectorField


@dataclass(frozen=True)
class YoungFunction:
    """A(t) = scale * t^s with s >= 1."""

    exponent: float | Fraction
    scale: float = 1.0

    def __post_init__(self):
        if self.exponent < 1:
            raise DomainError(f"Young exponent must be >= 1, got {self.exponent}")
        if self.scale <= 0:
            raise DomainError("scale must be positive")

    @property
    def s(self) -> float:
        return float(self.exponent)

    @property
    def kind(self) -> str:
        return "power" if self.scale == 1.0 else "scaled-power"

    def __call__(self, t):
        return self.scale * np.asarray(t, dtype=float) ** self.s

    def inverse(self, t):
        return (np.asarray(t, dtype=float) / self.scale) ** (1.0 / self.s)


def power(s) -> YoungFunction:
    return YoungFunction(s)


def conjugate(A: YoungFunction) -> YoungFunction:
    """Power function with the conjugate exponent; multiplicative constants dropped."""
    if A.exponent <= 1:
        raise DomainError("conjugate needs exponent > 1")
    s = A.exponent
    if isinstance(s, (Fraction, int)):
        return YoungFunction(Fraction(s) / (Fraction(s) - 1))
    return YoungFunction(s / (s - 1.0))


BISECT_ITERS = 200
BISECT_RTOL = 1e-12


def luxemburg_values(vals: np.ndarray, A: YoungFunction, closed_form: bool = True) -> float:
    """Luxemburg norm of equally-weighted cell values (a cube average)."""
    v = np.abs(np.asarray(vals, dtype=float)).ravel()
    if not np.all(np.isfinite(v)):
        raise DomainError("non-finite values")
    top = float(v.max()) if v.size else 0.0
    if top == 0.0:
        return 0.0
    if closed_form:
        return float((A.scale * np.mean((v / top) ** A.s)) ** (1.0 / A.s) * top)
    return luxemburg_bisect(v, A)


def luxemburg_bisect(v: np.ndarray, A: YoungFunction) -> float:
    """Smallest lambda with mean A(|v|/lambda) <= 1, by bisection in log lambda."""
    v = np.abs(v)
    top = float(v.max())
    if top == 0.0:
        return 0.0
    mu = 1.0 / v.size
    lo = top / float(A.inverse(1.0 / mu)) * (1 - 1e-12)
    hi = top / float(A.inverse(1.0)) * (1 + 1e-12)

    def feasible(lam):
        return float(np.mean(A(v / lam))) <= 1.0

    for _ in range(BISECT_ITERS):
        if hi - lo <= BISECT_RTOL * hi:
            break
        mid = math.sqrt(lo * hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


def luxemburg_norm(f: VectorField, A: YoungFunction, Q: DyadicCube, closed_form: bool = True) -> float:
    f.lattice.check(Q)
    vals = f.values[f.lattice.cells(Q)]
    if vals.ndim > 1:
        vals = np.linalg.norm(vals, axis=1)
    return luxemburg_values(vals, A, closed_form)


def ma_maximal(f, A: YoungFunction, lattice: DyadicLattice | None = None) -> np.ndarray:
    """M_A f(x) = max over ancestors Q of x of the Luxemburg average on Q."""
    if isinstance(f, VectorField):
        lattice, vals = f.lattice, f.values
    else:
        vals = np.asarray(f, dtype=float)
    if vals.ndim > 1:
        vals = np.linalg.norm(vals, axis=1)
    a = np.abs(vals) ** A.s * A.scale
    out = np.zeros(lattice.ncells)
    for lev in range(lattice.depth + 1):
        out = np.maximum(out, lattice.expand(lattice.level_means(a, lev), lev))
    return out ** (1.0 / A.s)


def ma_norm_bound(A: YoungFunction, p: float) -> float:
    """(int_1^inf A(t) t^{-p} dt/t)^{1/p} for A = t^s, i.e. (1/(p-s))^{1/p}; c_d set to 1."""
    if A.s >= p:
        return math.inf
    return (A.scale / (p - A.s)) ** (1.0 / p)


def dyadic_ma_norm(A: YoungFunction, p: float) -> float:
    """Sharp L^p bound for the dyadic M_A with A = t^s: ((p/s)')^{1/s}.

    Doob's inequality applied to M(|f|^s) on L^{p/s}.
    """
    s = A.s
    if s >= p:
        return math.inf
    r = p / s
    return (r / (r - 1.0)) ** (1.0 / s) * A.scale ** (1.0 / s)


def nested_bump_norm(K: np.ndarray, A_x: YoungFunction, B_y: YoungFunction, order: str = "xy") -> float:
    """Iterated Luxemburg norm of K[x, y] >= 0 over a cube.

    ``order="xy"``: inner norm in x (A_x) per fixed y, outer in y (B_y).
    ``order="yx"``: inner in y with B_y per fixed x, outer in x with A_x.
    """
    K = np.abs(np.asarray(K, dtype=float))
    if order == "xy":
        inner = _power_mean(K, A_x, axis=0)
        return float(_power_mean(inner, B_y, axis=0))
    if order == "yx":
        inner = _power_mean(K, B_y, axis=1)
        return float(_power_mean(inner, A_x, axis=0))
    raise DomainError(f"order must be 'xy' or 'yx', got {order!r}")


def _power_mean(K: np.ndarray, A: YoungFunction, axis: int):
    # (scale * mean t^s)^{1/s}, stabilised against overflow
    top = np.max(K, axis=axis, keepdims=True)
    top = np.where(top > 0, top, 1.0)
    val = ((A.scale * np.mean((K / top) ** A.s, axis=axis, keepdims=True)) ** (1.0 / A.s)) * top
    return np.squeeze(val, axis=axis)


def bump_exponent(d: int, K) -> Fraction | float:
    """r = 1 + 1/(2^{d+11} K); exact when K is rational."""
    if isinstance(K, (int, Fraction)):
        return 1 + Fraction(1, 2 ** (d + 11)) / Fraction(K)
    return 1.0 + 1.0 / (2 ** (d + 11) * float(K))
