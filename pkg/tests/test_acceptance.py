"""Acceptance suite: criteria 1-10, each recorded as one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are printed in the
terminal summary. ``python tests/test_acceptance.py`` runs the same checks
without pytest and prints the lines directly.
"""
from __future__ import annotations

import itertools
import math
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import sympy
from scipy.spatial import ConvexHull

from acceptance_log import lines, record
from dyadlab.convex_body import Zonotope, membership, pairing_interval
from dyadlab.grid import DyadicLattice, VectorField
from dyadlab.lab.checks import LinearEvaluator, opnorm_lower_bound, verify_lemma_key, verify_rhi
from dyadlab.lab.rough import rough_exponents
from dyadlab.lab.sweep import SweepConfig, log_distance, rotating_family, run_sweep
from dyadlab.operators import ModelOperator, commutator_lift, sparse_dominate
from dyadlab.reducing import duality_check
from dyadlab.sparse import (SparseOperator, bump_bound, commutator_bump_bound, stopping_family,
                            stopping_integrand, young_choice)
from dyadlab.weights import (MatrixWeight, WeightSpec, a1_constant, ainf_fujii_wilson, ap_constant,
                             aqinf_sc_constant, generate_weight)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


class Clock:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0


# -- shared oracles -------------------------------------------------------

def cube_cells(L: DyadicLattice, Q):
    s = L.cells(Q)
    return range(s.start, s.stop)


def witness_measures(L: DyadicLattice, cubes) -> dict:
    """|Q minus the union of its maximal strict sub-cubes in the family|, exactly, for a nested family."""
    cubes = list(dict.fromkeys(cubes))
    out = {}
    for Q in cubes:
        sQ = L.cells(Q)
        covered = set()
        for P in cubes:
            sP = L.cells(P)
            if P != Q and sQ.start <= sP.start and sP.stop <= sQ.stop:
                covered.update(range(sP.start, sP.stop))
        out[Q] = Fraction(sQ.stop - sQ.start - len(covered), L.ncells)
    return out


def is_sparse_oracle(L, cubes, eta) -> bool:
    # in a dyadic family the sets E_Q = Q minus lower members are pairwise disjoint
    return all(m >= eta * Q.measure for Q, m in witness_measures(L, cubes).items())


def random_weight_spec(rng, n_choices=(1, 2, 3)) -> WeightSpec:
    n = int(rng.choice(n_choices))
    if n == 1:
        return WeightSpec("scalar-power", 1, float(rng.uniform(-0.9, 0.9)), 0.0, float(rng.uniform(0, 1)))
    if n == 2:
        return WeightSpec("rotating-diagonal", 2, float(rng.uniform(-0.9, 0.9)), float(rng.uniform(-0.9, 0.9)),
                          float(rng.uniform(0, 1)), float(rng.uniform(0, 12)))
    return WeightSpec("block-diagonal", 3, float(rng.uniform(-0.8, 0.8)), float(rng.uniform(-0.8, 0.8)),
                      float(rng.uniform(0, 1)))


# -- criterion 1 ----------------------------------------------------------

def brute_ap(w, D, p):
    best = 0.0
    for lev in range(D + 1):
        s = 2 ** (D - lev)
        for k in range(2 ** lev):
            seg = w[k * s:(k + 1) * s]
            a = sum(seg) / s
            b = sum(x ** (-1.0 / (p - 1)) for x in seg) / s
            best = max(best, a * b ** (p - 1))
    return best


def brute_a1(w, D):
    best = 0.0
    for lev in range(D + 1):
        s = 2 ** (D - lev)
        for k in range(2 ** lev):
            seg = w[k * s:(k + 1) * s]
            best = max(best, (sum(seg) / s) / min(seg))
    return best


def brute_fujii_wilson(w, D):
    pre = [0.0]
    for x in w:
        pre.append(pre[-1] + x)
    avg = lambda a, b: (pre[b] - pre[a]) / (b - a)
    best = 0.0
    for lev in range(D + 1):
        s = 2 ** (D - lev)
        for k in range(2 ** lev):
            a, b = k * s, (k + 1) * s
            total = 0.0
            for x in range(a, b):
                m = 0.0
                for sub in range(lev, D + 1):
                    t = 2 ** (D - sub)
                    st = (x // t) * t
                    m = max(m, avg(st, st + t))
                total += m
            best = max(best, total / (pre[b] - pre[a]))
    return best


def test_criterion_01_scalar_oracles():
    rng = np.random.default_rng(101)
    L = DyadicLattice(1, 8)
    worst = 0.0
    with Clock() as c:
        for i in range(25):
            if i % 2:
                w = np.exp(np.cumsum(rng.normal(0, 0.4, L.ncells)))
            else:
                x = L.centers[:, 0]
                w = np.maximum(np.abs(x - rng.uniform()), 2.0 ** -8) ** rng.uniform(-0.9, 0.9)
            w = w / w.mean()
            W = MatrixWeight.from_scalar(L, w)
            wl = [float(v) for v in w]
            for p in (1.5, 2.0, 3.0):
                worst = max(worst, abs(ap_constant(W, p) / brute_ap(wl, 8, p) - 1))
            worst = max(worst, abs(a1_constant(W) / brute_a1(wl, 8) - 1))
            worst = max(worst, abs(float(ainf_fujii_wilson(w, L)) / brute_fujii_wilson(wl, 8) - 1))
    ok = worst < 1e-12 and c.seconds < 10
    record(1, ok, f"25 scalar weights, worst relative error {worst:.2e}, {c.seconds:.1f}s (limit 10s)")
    assert ok


# -- criterion 2 ----------------------------------------------------------

def test_criterion_02_commutator_lift():
    rng = np.random.default_rng(202)
    L = DyadicLattice(1, 10)
    worst = 0.0
    with Clock() as c:
        for i in range(20):
            T = ModelOperator.random_martingale(L, rng)
            f = VectorField(L, rng.standard_normal((L.ncells, 2)))
            if i % 2:
                b = log_distance(L, float(rng.uniform()))
            else:
                b = np.cumsum(rng.standard_normal(L.ncells)) / 8
            lift = commutator_lift(T, b, f)
            # independent recomputation of b Tf - T(bf) and of the kernel representation
            v = f.values
            comm = b[:, None] * (T.matrix @ v) - T.matrix @ (b[:, None] * v)
            dom = lift.domination
            rep = np.zeros_like(v)
            for Q in dom.cubes:
                s = L.cells(Q)
                k, m = dom.kernels[Q], L.block(Q.level)
                osc = b[s] - b[s].mean()
                rep[s] += dom.prefactor * (osc[:, None] * (k @ v[s]) / m - k @ (osc[:, None] * v[s]) / m)
            worst = max(worst, float(np.abs(rep - comm).max()), lift.residual)
    ok = worst < 1e-10 and c.seconds < 30
    record(2, ok, f"20 martingales at depth 10, n=2, max residual {worst:.2e}, {c.seconds:.1f}s (limit 30s)")
    assert ok


# -- criterion 3 ----------------------------------------------------------

def test_criterion_03_stopping_packing():
    rng = np.random.default_rng(303)
    nodes = 0
    worst = Fraction(0)
    bad = []
    with Clock() as c:
        for i in range(100):
            L = DyadicLattice(1, 8) if i % 4 else DyadicLattice(2, 4)
            spec = random_weight_spec(rng, (1, 2) if i % 5 else (3,))
            W = generate_weight(spec, L)
            p = float(rng.choice([1.5, 2.0, 3.0, 4.0]))
            q = float(rng.choice([x for x in (1.0, 1.25, 2.0, 3.0) if x < p]))
            amp = np.exp(2.0 * rng.standard_normal(L.ncells))
            f = VectorField(L, rng.standard_normal((L.ncells, W.n)) * amp[:, None])
            res = stopping_family(L.root, W, f, p, q)
            for node in res.nodes:
                nodes += 1
                packing = sum((C.measure for C in node.children), Fraction(0))
                worst = max(worst, packing / node.cube.measure)
                if packing > node.cube.measure / 4:
                    bad.append((i, str(node.cube)))
                # the children are the maximal cubes where the average jumps by more than 4
                g = stopping_integrand(W, f, p, q, node.cube)
                base = node.cube.level
                start = L.cells(node.cube).start
                for C in node.children:
                    s = L.cells(C)
                    assert g[s.start - start:s.stop - start].mean() > 4 * g.mean()
                    P = C.parent()
                    while P.level > base:
                        sp = L.cells(P)
                        assert g[sp.start - start:sp.stop - start].mean() <= 4 * g.mean()
                        P = P.parent()
            if not is_sparse_oracle(L, res.family.cubes, Fraction(3, 4)):
                bad.append((i, "not 3/4-sparse"))
    ok = not bad and c.seconds < 60
    record(3, ok, f"100 instances, {nodes} nodes, worst packing {worst} (limit 1/4), "
                  f"3/4-sparse, {c.seconds:.1f}s (limit 60s)")
    assert ok, bad[:5]


# -- criterion 4 ----------------------------------------------------------

def test_criterion_04_sparse_domination():
    rng = np.random.default_rng(404)
    eps = Fraction(1, 2)
    worst_rec = worst_k = 0.0
    bad = []
    with Clock() as c:
        for i in range(30):
            L = DyadicLattice(1, int(rng.integers(5, 9))) if i % 3 else DyadicLattice(2, int(rng.integers(3, 5)))
            n = int(rng.integers(1, 4))
            T = ModelOperator.random_martingale(L, rng)
            f = VectorField(L, rng.standard_normal((L.ncells, n)) * np.exp(rng.standard_normal(L.ncells))[:, None])
            res = sparse_dominate(T, f, eps)
            v = f.values.reshape(L.ncells, n)
            Tf = T.matrix @ v
            rec = np.zeros_like(v)
            for Q in res.cubes:
                s = L.cells(Q)
                rec[s] += res.prefactor * res.kernels[Q] @ v[s] / L.block(Q.level)
                worst_k = max(worst_k, float(np.abs(res.kernels[Q]).max()))
            worst_rec = max(worst_rec, float(np.abs(rec - Tf).max()))
            if len(res.families) != 3 ** L.d:
                bad.append((i, "family count"))
            for S in res.families:
                if not is_sparse_oracle(L, S.cubes, 1 - eps):
                    bad.append((i, "not (1-eps)-sparse"))
            inside, _ = res.containment(Tf, v)
            if not inside:
                bad.append((i, "containment"))
    ok = worst_rec < 1e-10 and worst_k <= 1 and not bad and c.seconds < 120
    record(4, ok, f"30 instances, reconstruction {worst_rec:.2e}, max |k_Q| {worst_k:.3f}, "
                  f"1/2-sparse, containment at every cell, {c.seconds:.1f}s (limit 120s)")
    assert ok, bad[:5]


# -- criterion 5 ----------------------------------------------------------

MAXIMAL_CONFIGS = ("maximal-a1", "maximal-primed-a1", "maximal-aq", "maximal-primed-aq")


def test_criterion_05_maximal_sweeps():
    details, ok = [], True
    with Clock() as c:
        for name in MAXIMAL_CONFIGS:
            cfg = SweepConfig.load(CONFIGS / f"{name}.json")
            res = run_sweep(cfg)
            lo, hi = cfg.window
            drive = [r.driving_constant for r in res.rows]
            ratios = [r.ratio for r in res.rows]
            decades = math.log10(max(drive) / min(drive))
            good = res.ok and abs(res.spearman) < 0.5 and decades >= 3 and lo <= min(ratios) and max(ratios) <= hi
            ok &= good
            details.append(f"{name}: rho {res.spearman:+.2f}, ratio [{min(ratios):.3f}, {max(ratios):.3f}] "
                           f"in [{lo}, {hi}], {decades:.1f} decades")
    ok &= c.seconds < 300
    record(5, ok, "; ".join(details) + f"; {c.seconds:.0f}s (limit 300s)")
    assert ok, details


# -- criterion 6 ----------------------------------------------------------

LEMMA_KEY_WINDOW = (1.0, 1.0 + 1e-6)


def two_value(L: DyadicLattice, t: float, split: int) -> np.ndarray:
    w = np.ones(L.ncells)
    w[split:] = t
    return w


def rhi_direct(w: np.ndarray, L: DyadicLattice, delta: float) -> bool:
    for Q in L.all_cubes():
        seg = w[L.cells(Q)]
        if np.mean(seg ** (1 + delta)) ** (1 / (1 + delta)) > 2 * seg.mean() * (1 + 1e-14):
            return False
    return True


def test_criterion_06_lemma_key_and_rhi():
    L = DyadicLattice(1, 8)
    details, ok = [], True
    with Clock() as c:
        fam = [WeightSpec.from_dict(w) for w in rotating_family()]
        for p, q in ((2.0, 1.0), (3.0, 2.0)):
            rows = [(a1_constant(W) if q == 1 else ap_constant(W, q), verify_lemma_key(W, p, q).sup_ratio)
                    for W in (generate_weight(s, L) for s in fam)]
            x, y = zip(*rows)
            from scipy.stats import spearmanr
            rho = float(spearmanr(x, y).statistic)
            good = all(LEMMA_KEY_WINDOW[0] - 1e-12 <= v <= LEMMA_KEY_WINDOW[1] for v in y) and abs(rho) < 0.5
            ok &= good
            details.append(f"lemma key p={p:g} q={q:g}: sup ratio <= 1+{max(y) - 1:.1e}, rho {rho:+.2f}")
        scalars = [generate_weight(WeightSpec("scalar-power", 1, s * a / 10, 0.0, 0.5), L).scalar
                   for a in range(1, 10) for s in (-1, 1)]
        scalars += [two_value(L, t, k) for t in (2.0, 8.0, 32.0) for k in (1, 77, 128)]
        failed = 0
        for w in scalars:
            rep = verify_rhi(w, L)
            failed += (not rep.passed) or (not rhi_direct(w, L, rep.delta))
        ok &= failed == 0
        details.append(f"RHI at the endpoint: {len(scalars) - failed}/{len(scalars)} scalar weights")
    ok &= c.seconds < 120
    record(6, ok, "; ".join(details) + f"; {c.seconds:.0f}s (limit 120s)")
    assert ok, details


# -- criterion 7 ----------------------------------------------------------

# frozen from the first calibrated run (seed 707, 50 rotating-diagonal weights)
DUALITY_WINDOWS = {1.5: (0.95, 1.30), 2.0: (1 - 1e-10, 1 + 1e-10), 3.0: (0.68, 1.05)}


def test_criterion_07_duality():
    rng = np.random.default_rng(707)
    L = DyadicLattice(1, 8)
    ratios = {p: [] for p in DUALITY_WINDOWS}
    err = 0.0
    with Clock() as c:
        for _ in range(50):
            W = generate_weight(random_weight_spec(rng, (2,)), L)
            for p in DUALITY_WINDOWS:
                rep = duality_check(W, p)
                ratios[p].append(rep.ratio)
                err = max(err, rep.rho_identity_error)
    inside = all(lo <= min(ratios[p]) and max(ratios[p]) <= hi for p, (lo, hi) in DUALITY_WINDOWS.items())
    ok = inside and err < 1e-12 and c.seconds < 120
    spans = ", ".join(f"p={p:g} [{min(r):.4f}, {max(r):.4f}]" for p, r in ratios.items())
    record(7, ok, f"50 weights, {spans}, rho identity {err:.1e}, {c.seconds:.1f}s (limit 120s)")
    assert ok


# -- criterion 8 ----------------------------------------------------------

def sympy_certificate(p, q, d, K):
    p, q, K = sympy.Rational(p), sympy.Rational(q), sympy.Rational(K)
    tau = 8 * 2 ** (d + 11)
    pc = p / (p - 1)
    eps = 1 / (p * (p / (p - q)) * tau * K)
    s = 1 + 1 / (pc * (p / (p - q)) * (tau - 2) * K)
    ps = p * s
    lhs = sympy.simplify((ps - 1) - s * (p - 1) * (1 + eps))
    rhs = sympy.simplify(((p - 1) * eps / (tau - 2)) * (2 - (p - 1) * tau * eps))
    recip = 1 / (pc - ps / (ps - 1) * (1 + eps))
    bound = (ps - 1) * (tau - 2) / (eps * p)
    C = p * (p - 1) * tau * (tau - 1) / (p - q)
    return dict(tau=tau, eps=eps, s=s, lhs=lhs, rhs=rhs, recip=recip, bound=bound, C=C)


def test_criterion_08_rough_exponents():
    rng = np.random.default_rng(808)
    bad = []
    with Clock() as c:
        for i in range(50):
            p = Fraction(int(rng.integers(11, 61)), int(rng.integers(1, 11)))
            if p <= 1:
                p = 1 + p
            q = 1 + (p - 1) * Fraction(int(rng.integers(0, 10)), 10)
            K = Fraction(int(rng.integers(10, 1000)), int(rng.integers(1, 10)))
            K = max(K, Fraction(1))
            d = int(rng.integers(1, 3))
            cert = rough_exponents(p, q, d, K)
            o = sympy_certificate(p, q, d, K)
            same = (sympy.Rational(cert.identity_lhs) == o["lhs"] == o["rhs"] == sympy.Rational(cert.identity_rhs)
                    and sympy.Rational(cert.reciprocal) == o["recip"] and sympy.Rational(cert.bound) == o["bound"])
            chain = 0 < o["recip"] <= o["bound"] <= o["C"] * sympy.Rational(K)
            if not (cert.ok and same and chain):
                bad.append((p, q, d, K))
        w = rough_exponents(2, 1, 1, 1)
        e = w.exponents
        worked = (e.tau == 32768 and e.eps == Fraction(1, 131072) and e.s == 1 + Fraction(1, 131064)
                  and w.tau_eps == Fraction(1, 4) and w.ok)
    ok = not bad and worked and c.seconds < 5
    record(8, ok, f"50 random rational cases exact (sympy oracle), worked instance tau={e.tau} eps={e.eps} "
                  f"(p-1)tau eps={w.tau_eps}, {c.seconds:.2f}s (limit 5s)")
    assert ok, bad[:5]


# -- criterion 9 ----------------------------------------------------------

def test_criterion_09_bumps():
    rng = np.random.default_rng(909)
    L = DyadicLattice(1, 7)
    worst = {"sparse": 0.0, "commutator": 0.0}
    bad = []
    with Clock() as c:
        for i in range(20):
            W = generate_weight(random_weight_spec(rng, (1, 2)), L)
            p = float(rng.choice([2.0, 3.0]))
            q = 1.0 if i % 2 else 2.0 if p == 3.0 else 1.5
            amp = np.exp(2.0 * rng.standard_normal(L.ncells))
            f = VectorField(L, rng.standard_normal((L.ncells, W.n)) * amp[:, None])
            S = stopping_family(L.root, W, f, p, q).family
            K = max(aqinf_sc_constant(W, q).value, 1.0)
            choice, qq = ("A1", None) if q == 1 else ("Aq", q)
            b = log_distance(L, float(rng.uniform()))
            A, B = young_choice(choice, p, 1, K, q=qq)
            A2, B2, C2, D2 = young_choice(choice, p, 1, K, q=qq, commutator=True)
            pairs = {
                "sparse": (SparseOperator(S, W, W, p).matrix, bump_bound(S, W, W, p, A, B).rhs),
                "commutator": (SparseOperator(S, W, W, p, b=b).matrix,
                               commutator_bump_bound(S, W, W, p, b, A2, B2, C2, D2).rhs),
            }
            for kind, (M, rhs) in pairs.items():
                lower = opnorm_lower_bound(LinearEvaluator(M), p, trials=10, rng=rng, lattice=L).value
                if p == 2.0:
                    # the exact L^2 norm of a non-negative matrix in mean-normalised L^2
                    lower = max(lower, float(np.linalg.norm(M, 2)))
                worst[kind] = max(worst[kind], lower / rhs)
                if not lower <= rhs:
                    bad.append((i, kind, lower, rhs))
    ok = not bad and c.seconds < 120
    record(9, ok, f"20 instances each, worst lower/RHS sparse {worst['sparse']:.2e}, "
                  f"commutator {worst['commutator']:.2e}, {c.seconds:.1f}s (limit 120s)")
    assert ok, bad[:5]


# -- criterion 10 ---------------------------------------------------------

def vertices(G: np.ndarray) -> np.ndarray:
    return np.array(list(itertools.product((-1.0, 1.0), repeat=G.shape[0]))) @ G


def hull_inside(z, V, tol=1e-9) -> bool:
    h = ConvexHull(V)
    return bool(np.all(h.equations[:, :-1] @ z + h.equations[:, -1] <= tol * np.abs(V).max()))


def test_criterion_10_convex_bodies():
    rng = np.random.default_rng(1010)
    disagree, pair_err = 0, 0.0
    with Clock() as c:
        for i in range(100):
            n = 2 if i % 2 else 3
            m = int(rng.integers(n, 13))
            G = rng.standard_normal((m, n))
            V = vertices(G)
            # interior and exterior points near the boundary, rejecting near-ties
            while True:
                z = V[rng.integers(len(V))] * rng.uniform(0.7, 1.3) + 0.1 * rng.standard_normal(n)
                h = ConvexHull(V)
                gap = np.max(h.equations[:, :-1] @ z + h.equations[:, -1])
                if abs(gap) > 1e-6:
                    break
            truth = hull_inside(z, V)
            for method in ("lp", "facets"):
                disagree += membership(z, Zonotope(G), method=method).inside != truth
            for _ in range(1):
                A = Zonotope(rng.standard_normal((int(rng.integers(1, 7)), n)))
                B = Zonotope(rng.standard_normal((int(rng.integers(1, 7)), n)))
                oracle = float(np.max(vertices(A.generators) @ vertices(B.generators).T))
                for method in ("enumerate", "grid"):
                    got = pairing_interval(A, B, method=method).m
                    pair_err = max(pair_err, abs(got - oracle) / oracle)
    ok = disagree == 0 and pair_err < 1e-3 and c.seconds < 60
    record(10, ok, f"100 points m<=12: {disagree} disagreements with sign enumeration; "
                   f"pairing relative error {pair_err:.1e}, {c.seconds:.1f}s (limit 60s)")
    assert ok


if __name__ == "__main__":
    failed = 0
    for name, fn in sorted((k, v) for k, v in dict(globals()).items() if k.startswith("test_criterion")):
        try:
            fn()
        except AssertionError:
            failed += 1
    print("\n".join(lines()))
    sys.exit(1 if failed else 0)
