"""Weight-family sweeps: one row per (weight spec, p, q), written as CSV plus an SVG plot."""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from ..grid import DyadicLattice, VectorField
from ..operators import WeightedMaximal, bmo_dyadic
from ..reducing import reducing_family
from ..sparse import (SparseOperator, bump_bound, commutator_bump_bound, stopping_family,
                      young_choice)
from ..weights import (ConfigError, MatrixWeight, WeightSpec, a1_constant, ap_constant,
                       aqinf_sc_constant, generate_weight)
from .checks import LinearEvaluator, opnorm_lower_bound, verify_lemma_key
from .svg import scatter_svg

COLUMNS = ("spec_id", "d", "D", "n", "p", "q", "A1", "Aq", "Aqinf_sc",
           "lhs_norm", "rhs_bound", "ratio", "fit_kappa", "runtime_ms")
OPERATORS = ("maximal", "maximal-primed", "sparse", "commutator", "lemma-key")
BOUNDED = ("sparse", "commutator")  # rows where lhs <= rhs is a theorem, not a trend
KAPPA_SLACK = 1e-6
RATIO_SLACK = 1e-9


@dataclass
class SweepRow:
    spec_id: str
    d: int
    D: int
    n: int
    p: float
    q: float
    A1: float
    Aq: float
    Aqinf_sc: float
    lhs_norm: float
    rhs_bound: float
    ratio: float
    fit_kappa: float
    runtime_ms: float
    extras: dict = field(default_factory=dict)

    def csv_values(self) -> list:
        return [getattr(self, c) for c in COLUMNS]

    @property
    def driving_constant(self) -> float:
        return self.A1 if self.q == 1 else self.Aq


@dataclass
class SweepConfig:
    d: int
    depth: int
    weights: list
    ps: list
    qs: list
    operator: dict
    trials: int = 20
    refine: int = 10
    seed: int = 0
    workers: int = 1
    window: tuple | None = None
    max_abs_spearman: float | None = None

    @classmethod
    def from_dict(cls, doc: dict) -> "SweepConfig":
        missing = {"lattice", "weights", "exponents", "operator"} - set(doc)
        if missing:
            raise ConfigError(f"config lacks sections {sorted(missing)}")
        lat, ex, op = doc["lattice"], doc["exponents"], doc["operator"]
        if isinstance(op, str):
            op = {"kind": op}
        if op.get("kind") not in OPERATORS:
            raise ConfigError(f"operator kind must be one of {OPERATORS}")
        specs = [WeightSpec.from_dict(w) for w in doc["weights"]]
        if not specs:
            raise ConfigError("no weights given")
        as_list = lambda v: list(v) if isinstance(v, (list, tuple)) else [v]
        window = doc.get("window")
        return cls(int(lat["d"]), int(lat["depth"]), specs, as_list(ex["p"]), as_list(ex.get("q", 1)),
                   op, int(doc.get("trials", 20)), int(doc.get("refine", 10)), int(doc.get("seed", 0)),
                   int(doc.get("workers", 1)), tuple(window) if window else None,
                   doc.get("max_abs_spearman"))

    @classmethod
    def load(cls, path) -> "SweepConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def tasks(self):
        """(row index, spec, p, q) in output order; pairs with q >= p are skipped."""
        out = []
        for spec in self.weights:
            for p in self.ps:
                for q in self.qs:
                    if 1 <= q < p:
                        out.append((len(out), spec, float(p), float(q)))
        return out


def log_distance(lattice: DyadicLattice, x0=0.5) -> np.ndarray:
    """b(x) = log max(|x - x0|, 2^{-D}), the discrete BMO model."""
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (lattice.d,))
    r = np.linalg.norm(lattice.centers - x0, axis=1)
    return np.log(np.maximum(r, 2.0 ** -lattice.depth))


def _stopping_sparse(W: MatrixWeight, p, q, rng):
    L = W.lattice
    # log-normal amplitudes give spikes, so the stopping tree has several generations
    amp = np.exp(2.0 * rng.standard_normal(L.ncells))
    f = VectorField(L, rng.standard_normal((L.ncells, W.n)) * amp[:, None])
    return stopping_family(L.root, W, f, p, q).family


def _row(cfg: SweepConfig, task) -> SweepRow:
    idx, spec, p, q = task
    t0 = time.perf_counter()
    L = DyadicLattice(cfg.d, cfg.depth)
    W = generate_weight(spec, L)
    rng = np.random.default_rng([cfg.seed, idx])
    a1 = a1_constant(W)
    aq = a1 if q == 1 else ap_constant(W, q)
    K = max(aqinf_sc_constant(W, q).value, 1.0)
    drive = a1 if q == 1 else aq
    kind = cfg.operator["kind"]
    kappa = 1.0
    extras = {}
    if kind in ("maximal", "maximal-primed"):
        primed = kind == "maximal-primed"
        red = reducing_family(W, p) if primed else None
        if red is not None:
            kappa = red[1]
        G = WeightedMaximal(W, p, primed, reducing=red)
        lhs = opnorm_lower_bound(G, p, cfg.trials, cfg.refine, rng=rng, lattice=L).value
        rhs = drive ** (1.0 / p)
    elif kind == "lemma-key":
        rep = verify_lemma_key(W, p, q, aqinf=K)
        lhs, rhs = rep.sup_ratio, 1.0
        extras["r"] = rep.r
    else:
        S = _stopping_sparse(W, p, q, rng)
        choice = "A1" if q == 1 else "Aq"
        extras["cubes"] = len(S)
        if kind == "sparse":
            A, B = young_choice(choice, p, L.d, K, q=None if q == 1 else q)
            rep = bump_bound(S, W, W, p, A, B)
            T = SparseOperator(S, W, W, p)
        else:
            b = log_distance(L, cfg.operator.get("x0", 0.5))
            A, B, C, D = young_choice(choice, p, L.d, K, q=None if q == 1 else q, commutator=True)
            rep = commutator_bump_bound(S, W, W, p, b, A, B, C, D)
            T = SparseOperator(S, W, W, p, b=b)
            bmo = bmo_dyadic(b, L)
            pp = p / (p - 1.0)
            extras["bmo"] = bmo
            extras["bmo_scale"] = float(bmo * drive ** (1.0 / p) * K ** (1.0 + 1.0 / pp))
        rhs = rep.rhs
        lhs = opnorm_lower_bound(LinearEvaluator(T.matrix), p, cfg.trials, cfg.refine, rng=rng, lattice=L).value
        if "bmo_scale" in extras:
            extras["bmo_ratio"] = float(lhs / extras["bmo_scale"])
    ms = (time.perf_counter() - t0) * 1e3
    return SweepRow(spec.label, L.d, L.depth, W.n, p, q, a1, aq, K, lhs, rhs,
                    lhs / rhs if rhs > 0 else math.inf, kappa, ms, extras)


def row_failures(row: SweepRow, kind: str, window=None) -> list[str]:
    """Hard invariants of a single row; an empty list means the row passes."""
    bad = []
    for c in COLUMNS[1:]:
        if not math.isfinite(getattr(row, c)):
            bad.append(f"{c} not finite")
    if row.ratio < 0:
        bad.append("negative ratio")
    if row.fit_kappa > math.sqrt(row.n) * (1 + KAPPA_SLACK):
        bad.append(f"fit_kappa {row.fit_kappa:.6g} above sqrt(n)")
    if kind in BOUNDED and row.ratio > 1 + RATIO_SLACK:
        bad.append(f"lower bound {row.lhs_norm:.6g} exceeds bound {row.rhs_bound:.6g}")
    if window is not None and not (window[0] <= row.ratio <= window[1]):
        bad.append(f"ratio {row.ratio:.6g} outside frozen window {list(window)}")
    return bad


def trend(rows) -> float:
    """Spearman rank correlation of ratio against the driving constant."""
    if len(rows) < 3:
        return 0.0
    x = [r.driving_constant for r in rows]
    y = [r.ratio for r in rows]
    if len(set(x)) < 2 or len(set(y)) < 2:
        return 0.0
    return float(spearmanr(x, y).statistic)


@dataclass
class SweepResult:
    config: SweepConfig
    rows: list
    failures: dict   # row id (or "sweep") -> list of messages
    spearman: float

    @property
    def ok(self) -> bool:
        return not self.failures


def run_sweep(config) -> SweepResult:
    cfg = config if isinstance(config, SweepConfig) else SweepConfig.from_dict(config)
    tasks = cfg.tasks()
    if not tasks:
        raise ConfigError("no (p, q) pair with 1 <= q < p")
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            rows = list(ex.map(_row, [cfg] * len(tasks), tasks))
    else:
        rows = [_row(cfg, t) for t in tasks]
    kind = cfg.operator["kind"]
    failures = {}
    for i, r in enumerate(rows):
        bad = row_failures(r, kind, cfg.window)
        if bad:
            failures[f"{i}:{r.spec_id}"] = bad
    rho = trend(rows)
    if cfg.max_abs_spearman is not None and abs(rho) >= cfg.max_abs_spearman:
        failures["sweep"] = [f"Spearman {rho:.3f} against the constant, limit {cfg.max_abs_spearman}"]
    return SweepResult(cfg, rows, failures, rho)


def write_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in r.csv_values()])


def read_csv(path) -> list[SweepRow]:
    names = {f.name: f.type for f in fields(SweepRow)}
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            vals = {}
            for c in COLUMNS:
                t = names[c]
                vals[c] = rec[c] if t == "str" else (int(rec[c]) if t == "int" else float(rec[c]))
            rows.append(SweepRow(**vals))
    return rows


def plot(rows, kind: str) -> str:
    series = {}
    for r in rows:
        series.setdefault(f"p={r.p:g} q={r.q:g}", []).append((r.driving_constant, r.ratio))
    return scatter_svg(series, f"{kind}: ratio against the weight constant",
                       "[W] (A1 when q = 1, else Aq)", "lhs / rhs")


def write_outputs(result: SweepResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kind = result.config.operator["kind"]
    write_csv(result.rows, out / "sweep.csv")
    (out / "sweep.svg").write_text(plot(result.rows, kind))
    meta = {
        "operator": result.config.operator,
        "seed": result.config.seed,
        "trials": result.config.trials,
        "spearman": result.spearman,
        "window": result.config.window,
        "failures": result.failures,
        "extras": [r.extras for r in result.rows],
    }
    (out / "summary.json").write_text(json.dumps(meta, indent=2, default=str))
    return out


def summarize(rows) -> dict:
    if not rows:
        return {"rows": 0}
    ratios = [r.ratio for r in rows]
    drive = [r.driving_constant for r in rows]
    return {"rows": len(rows), "ratio_min": min(ratios), "ratio_max": max(ratios),
            "constant_min": min(drive), "constant_max": max(drive), "spearman": trend(rows),
            "runtime_ms": sum(r.runtime_ms for r in rows)}


# Rotating frames with a fixed eigenvalue ratio: the floor sets [W]_{A_1}, while
# the frame frequency changes the geometry. Used as the maximal-function sweep.
def rotating_family(floors=(1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4), freqs=(2.0, 5.0, 11.0),
                    beta: float = 16.0) -> list[dict]:
    return [WeightSpec("rotating-diagonal", 2, 0.0, beta, 0.5, fr, fl,
                       id=f"rot-f{fr:g}-floor{fl:g}").to_dict()
            for fl in floors for fr in freqs]
