"""Matrix weights on the dyadic lattice and their characteristics."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .grid import DomainError, DyadicLattice, VectorField
from .linalg import InvalidWeight, eig_power, pair_norms, spd_eig, spd_power


class ConfigError(ValueError):
    pass


class SpecError(ValueError):
    pass


class MatrixWeight:
    """Cellwise SPD matrix field. Powers are cached per exponent."""

    def __init__(self, lattice: DyadicLattice, matrices: np.ndarray):
        M = np.asarray(matrices, dtype=float)
        if M.ndim == 1:
            M = M[:, None, None]
        if M.ndim != 3 or M.shape[0] != lattice.ncells or M.shape[1] != M.shape[2]:
            raise InvalidWeight(f"bad weight array shape {M.shape}")
        self.lams, self.vecs = spd_eig(M)
        self.lattice = lattice
        self.matrices = M
        self._powers: dict[float, np.ndarray] = {}

    @classmethod
    def from_scalar(cls, lattice: DyadicLattice, w) -> "MatrixWeight":
        w = np.asarray(w.values if isinstance(w, VectorField) else w, dtype=float)
        return cls(lattice, w.reshape(-1, 1, 1))

    @classmethod
    def identity(cls, lattice: DyadicLattice, n: int) -> "MatrixWeight":
        return cls(lattice, np.broadcast_to(np.eye(n), (lattice.ncells, n, n)).copy())

    @property
    def n(self) -> int:
        return self.matrices.shape[1]

    @property
    def scalar(self) -> np.ndarray:
        if self.n != 1:
            raise DomainError("weight is not scalar")
        return self.matrices[:, 0, 0]

    def power(self, a: float) -> np.ndarray:
        a = float(a)
        if a not in self._powers:
            if a == 1.0:
                self._powers[a] = self.matrices.copy()
            else:
                self._powers[a] = eig_power(self.lams, self.vecs, a)
        return self._powers[a]

    def transform(self, a: float) -> "MatrixWeight":
        """The weight W^a, sharing W's eigenvectors so later powers stay consistent."""
        out = MatrixWeight.__new__(MatrixWeight)
        out.lattice, out.vecs = self.lattice, self.vecs
        out.lams = self.lams ** float(a)
        out.matrices = self.power(a)
        out._powers = {}
        return out


def fractional_power(W: MatrixWeight, a: float) -> np.ndarray:
    return W.power(a)


def conj_exp(p: float) -> float:
    if p <= 1:
        raise DomainError(f"exponent must exceed 1, got {p}")
    return p / (p - 1.0)


def _diag_blocks(K: np.ndarray, lattice: DyadicLattice, level: int) -> np.ndarray:
    c, s = lattice.count(level), lattice.block(level)
    idx = np.arange(c)
    return K.reshape(c, s, c, s)[idx, :, idx, :]


def ap_pair_matrix(W: MatrixWeight, p: float) -> np.ndarray:
    """K[x, y] = ||W^{1/p}(x) W^{-1/p}(y)||."""
    return pair_norms(W.power(1.0 / p), W.power(-1.0 / p))


def ap_cube_values(W: MatrixWeight, p: float, depth_cap: int | None = None) -> dict[int, np.ndarray]:
    """Per-level arrays of the A_p double average for every cube."""
    pp = conj_exp(p)
    L = W.lattice
    K = ap_pair_matrix(W, p)
    top = L.depth if depth_cap is None else min(depth_cap, L.depth)
    out = {}
    for lev in range(top + 1):
        Kd = _diag_blocks(K, L, lev)
        inner = (Kd ** pp).mean(axis=2)
        out[lev] = (inner ** (p / pp)).mean(axis=1)
    return out


def ap_constant(W: MatrixWeight, p: float, depth_cap: int | None = None) -> float:
    vals = ap_cube_values(W, p, depth_cap)
    return float(max(v.max() for v in vals.values()))


def a1_constant(W: MatrixWeight, depth_cap: int | None = None) -> float:
    L = W.lattice
    K = pair_norms(W.matrices, W.power(-1.0))
    top = L.depth if depth_cap is None else min(depth_cap, L.depth)
    best = 0.0
    for lev in range(top + 1):
        Kd = _diag_blocks(K, L, lev)
        best = max(best, float(Kd.mean(axis=1).max()))
    return best


def ainf_fujii_wilson(w, lattice: DyadicLattice | None = None) -> float | np.ndarray:
    """Dyadic Fujii-Wilson constant of a positive scalar weight.

    ``w`` may hold several weights as columns (ncells, k); the result then has
    one constant per column.
    """
    if isinstance(w, VectorField):
        lattice, vals = w.lattice, w.values
    else:
        if lattice is None:
            raise DomainError("lattice required for raw arrays")
        vals = np.asarray(w, dtype=float)
    if np.any(vals <= 0) or not np.all(np.isfinite(vals)):
        raise InvalidWeight("A-infinity constant needs a positive finite weight")
    single = vals.ndim == 1
    vals = vals.reshape(lattice.ncells, -1)
    D = lattice.depth
    running = vals.copy()
    best = np.ones(vals.shape[1])
    for lev in range(D, -1, -1):
        means = lattice.level_means(vals, lev)
        running = np.maximum(running, lattice.expand(means, lev))
        # M over D(Q) for Q at this level is `running`; integrate over each Q
        ratio = lattice.level_means(running, lev) / means
        best = np.maximum(best, ratio.max(axis=0))
    return float(best[0]) if single else best


@dataclass
class AqInfResult:
    value: float
    direction: np.ndarray
    q: float
    evaluations: int


def _direction_weights(Wq: np.ndarray, E: np.ndarray, q: float) -> np.ndarray:
    # Wq: (N,n,n), E: (n,k) unit columns -> (N,k) values |W^{1/q} e|^q
    v = np.einsum("xij,jk->xik", Wq, E)
    return np.linalg.norm(v, axis=1) ** q


def _fibonacci_hemisphere(k: int) -> np.ndarray:
    i = np.arange(k) + 0.5
    z = i / k  # z in (0,1): upper hemisphere covers all directions up to sign
    phi = i * math.pi * (3 - math.sqrt(5))
    r = np.sqrt(1 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z])


def aqinf_sc_constant(W: MatrixWeight, q: float, budget: int | None = None) -> AqInfResult:
    """sup over unit e of the Fujii-Wilson constant of |W^{1/q} e|^q."""
    n = W.n
    if q < 1:
        raise DomainError("q must be at least 1")
    if budget is None:
        budget = {1: 1, 2: 256, 3: 770}.get(n, 200 * n)
    if n > 1 and budget < 2 * n:
        raise ConfigError(f"direction budget {budget} below 2n = {2 * n}")
    L = W.lattice
    Wq = W.power(1.0 / q)

    def evaluate(E):
        return ainf_fujii_wilson(_direction_weights(Wq, E, q), L)

    if n == 1:
        e = np.ones((1, 1))
        return AqInfResult(float(evaluate(e)[0]), e[:, 0], q, 1)

    if n == 2:
        theta = np.arange(budget) * math.pi / budget
        E = np.stack([np.cos(theta), np.sin(theta)])
        vals = evaluate(E)
        # keep the axis directions in the candidate set
        k = int(np.argmax(vals))
        best_val, best_t = float(vals[k]), float(theta[k])
        h = math.pi / budget

        def neg(t):
            return -float(evaluate(np.array([[math.cos(t)], [math.sin(t)]]))[0])

        res = minimize_scalar(neg, bounds=(best_t - h, best_t + h), method="bounded",
                              options={"xatol": 1e-5})
        evals = budget + res.nfev
        if -res.fun > best_val:
            best_val, best_t = -res.fun, float(res.x)
        return AqInfResult(best_val, np.array([math.cos(best_t), math.sin(best_t)]), q, evals)

    if n == 3:
        E = _fibonacci_hemisphere(budget)
    else:
        rng = np.random.default_rng(0)
        E = rng.standard_normal((n, budget))
        E /= np.linalg.norm(E, axis=0)
    E = np.concatenate([np.eye(n), E], axis=1)
    vals = evaluate(E)
    k = int(np.argmax(vals))
    best_val, best_e = float(vals[k]), E[:, k].copy()
    rng = np.random.default_rng(1)
    step = 2.0 / math.sqrt(budget)
    evals = E.shape[1]
    for _ in range(12):
        cand = best_e[:, None] + step * rng.standard_normal((n, 16))
        cand /= np.linalg.norm(cand, axis=0)
        cv = evaluate(cand)
        evals += 16
        j = int(np.argmax(cv))
        if cv[j] > best_val:
            best_val, best_e = float(cv[j]), cand[:, j].copy()
        else:
            step *= 0.5
    return AqInfResult(best_val, best_e, q, evals)


@dataclass
class A1ControlReport:
    ainf_sc: float
    a1: float
    ratio: float
    violated: bool
    direction: np.ndarray = field(repr=False)


def check_a1_controls_ainf(W: MatrixWeight, tol: float = 1e-9, budget: int | None = None) -> A1ControlReport:
    res = aqinf_sc_constant(W, 1.0, budget)
    a1 = a1_constant(W)
    ratio = res.value / a1
    return A1ControlReport(res.value, a1, ratio, ratio > 1 + tol, res.direction)


def holder_mccarthy_check(A: np.ndarray, p: float, q: float, directions=256, rng=None) -> float:
    """max over unit e of |A^{1/p} e| - |A^{1/q} e|^{q/p}."""
    if not 1 <= q < p:
        raise DomainError("need 1 <= q < p")
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if isinstance(directions, (int, np.integer)):
        rng = np.random.default_rng(rng)
        E = rng.standard_normal((n, int(directions)))
        E = np.concatenate([np.eye(n), E], axis=1)
    else:
        E = np.asarray(directions, dtype=float).reshape(n, -1)
    E = E / np.linalg.norm(E, axis=0)
    lhs = np.linalg.norm(spd_power(A, 1.0 / p) @ E, axis=0)
    rhs = np.linalg.norm(spd_power(A, 1.0 / q) @ E, axis=0) ** (q / p)
    return float(np.max(lhs - rhs))


# -- generators -------------------------------------------------------

KINDS = ("identity", "scalar-power", "rotating-diagonal", "block-diagonal")


@dataclass
class WeightSpec:
    kind: str
    n: int = 1
    alpha: float = 0.0
    beta: float = 0.0
    x0: float | tuple = 0.0
    rotation_freq: float = 0.0
    floor: float | None = None
    id: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown weight kind {self.kind!r}")
        if self.kind == "scalar-power" and self.n != 1:
            raise SpecError("scalar-power weights have n = 1")
        if self.kind == "rotating-diagonal" and self.n != 2:
            raise SpecError("rotating-diagonal weights have n = 2")
        if self.kind == "block-diagonal" and self.n < 2:
            raise SpecError("block-diagonal weights need n >= 2")
        if self.floor is not None and self.floor <= 0:
            raise SpecError("floor must be positive")

    @classmethod
    def from_dict(cls, doc: dict) -> "WeightSpec":
        known = {"kind", "n", "alpha", "beta", "x0", "rotation_freq", "floor", "id"}
        extra = set(doc) - known
        if extra:
            raise SpecError(f"unknown weight spec keys {sorted(extra)}")
        doc = dict(doc)
        if isinstance(doc.get("x0"), list):
            doc["x0"] = tuple(doc["x0"])
        if doc.get("kind") == "rotating-diagonal":
            doc.setdefault("n", 2)
        return cls(**doc)

    def to_dict(self) -> dict:
        out = asdict(self)
        if isinstance(out["x0"], tuple):
            out["x0"] = list(out["x0"])
        return out

    @property
    def label(self) -> str:
        if self.id:
            return self.id
        return f"{self.kind}:n{self.n}:a{self.alpha:g}:b{self.beta:g}:f{self.rotation_freq:g}"


def _clamped_power(r: np.ndarray, a: float, depth: int, floor: float | None) -> np.ndarray:
    if a == 0:
        return np.ones_like(r)
    lo = floor if floor is not None else 2.0 ** (-depth * abs(a))
    with np.errstate(divide="ignore", over="ignore"):
        v = r ** a
    return np.clip(v, lo, 1.0 / lo)


def generate_weight(spec: WeightSpec, lattice: DyadicLattice) -> MatrixWeight:
    N, D = lattice.ncells, lattice.depth
    x = lattice.centers
    x0 = np.broadcast_to(np.asarray(spec.x0, dtype=float), (lattice.d,))
    r = np.linalg.norm(x - x0, axis=1)
    if spec.kind == "identity":
        return MatrixWeight.identity(lattice, spec.n)
    la = _clamped_power(r, spec.alpha, D, spec.floor)
    lb = _clamped_power(r, spec.beta, D, spec.floor)
    if not (np.all(np.isfinite(la)) and np.all(np.isfinite(lb)) and la.min() > 0 and lb.min() > 0):
        raise SpecError(f"spec {spec.label} produces non-finite or non-positive values")
    if spec.kind == "scalar-power":
        return MatrixWeight.from_scalar(lattice, la)
    if spec.kind == "rotating-diagonal":
        th = spec.rotation_freq * x[:, 0]
        c, s = np.cos(th), np.sin(th)
        R = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
        Dm = np.zeros((N, 2, 2))
        Dm[:, 0, 0], Dm[:, 1, 1] = la, lb
        M = R @ Dm @ np.swapaxes(R, 1, 2)
        return MatrixWeight(lattice, 0.5 * (M + np.swapaxes(M, 1, 2)))
    k = (spec.n + 1) // 2
    diag = np.concatenate([np.repeat(la[:, None], k, 1), np.repeat(lb[:, None], spec.n - k, 1)], axis=1)
    M = np.zeros((N, spec.n, spec.n))
    M[:, np.arange(spec.n), np.arange(spec.n)] = diag
    return MatrixWeight(lattice, M)
