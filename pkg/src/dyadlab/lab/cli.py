"""Command line: constants, single checks, sweeps and reports. Exit 0 iff hard invariants pass."""
from __future__ import annotations

import argparse
import json
import math
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from ..grid import DyadicLattice, VectorField
from ..operators import ModelOperator, commutator_lift, sparse_dominate
from ..reducing import duality_check
from ..sparse import (SparseOperator, bump_bound, commutator_bump_bound, stopping_family,
                      young_choice)
from ..weights import (WeightSpec, a1_constant, ainf_fujii_wilson, ap_constant,
                       aqinf_sc_constant, check_a1_controls_ainf, generate_weight)
from .checks import LinearEvaluator, opnorm_lower_bound, verify_lemma_key, verify_rhi
from .rough import rough_exponents
from .sweep import SweepConfig, log_distance, read_csv, run_sweep, summarize, write_outputs


def _json_default(o):
    if isinstance(o, Fraction):
        return str(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    return str(o)


def _emit(doc) -> None:
    print(json.dumps(doc, indent=2, default=_json_default))


def _weight_from_args(a, lattice: DyadicLattice):
    spec = WeightSpec(a.kind, a.n, a.alpha, a.beta, a.x0, a.freq, a.floor)
    return spec, generate_weight(spec, lattice)


# -- constants ------------------------------------------------------------

def cmd_constants(a) -> int:
    doc = json.loads(Path(a.spec_file).read_text())
    lat = doc.get("lattice", {"d": 1, "depth": 8})
    L = DyadicLattice(int(lat["d"]), int(lat["depth"]))
    specs = doc.get("weights") or [doc["weight"]]
    ex = doc.get("exponents", {})
    ps = ex.get("p", [2.0])
    qs = ex.get("q", [1.0])
    ps = ps if isinstance(ps, list) else [ps]
    qs = qs if isinstance(qs, list) else [qs]
    out, ok = [], True
    for s in specs:
        spec = WeightSpec.from_dict(s)
        W = generate_weight(spec, L)
        rec = {"spec_id": spec.label, "n": W.n, "A1": a1_constant(W),
               "Ap": {str(p): ap_constant(W, float(p)) for p in ps if float(p) > 1},
               "Aqinf_sc": {str(q): aqinf_sc_constant(W, float(q)).value for q in qs}}
        if W.n == 1:
            rec["Ainf_FW"] = float(ainf_fujii_wilson(W.scalar, L))
        vals = [rec["A1"], *rec["Ap"].values(), *rec["Aqinf_sc"].values()]
        ok &= all(math.isfinite(v) and v >= 1 - 1e-9 for v in vals)
        out.append(rec)
    _emit(out)
    return 0 if ok else 1


# -- verify ---------------------------------------------------------------

def _v_lemma_key(a, L):
    spec, W = _weight_from_args(a, L)
    rep = verify_lemma_key(W, a.p, a.q)
    return math.isfinite(rep.sup_ratio), {"spec": spec.label, **vars(rep)}


def _v_rhi(a, L):
    spec = WeightSpec("scalar-power", 1, a.alpha, 0.0, a.x0, 0.0, a.floor)
    W = generate_weight(spec, L)
    rep = verify_rhi(W.scalar, L, a.delta)
    # probes beyond the endpoint are exploratory and never fail the run
    return rep.passed or a.delta is not None, {"spec": spec.label, "exploratory": a.delta is not None, **vars(rep)}


def _v_duality(a, L):
    spec, W = _weight_from_args(a, L)
    rep = duality_check(W, a.p)
    return rep.rho_identity_error < 1e-12, {"spec": spec.label, **vars(rep)}


def _v_a1_ainf(a, L):
    spec, W = _weight_from_args(a, L)
    rep = check_a1_controls_ainf(W)
    return not rep.violated, {"spec": spec.label, **vars(rep)}


def _random_field(L, n, rng):
    amp = np.exp(2.0 * rng.standard_normal(L.ncells))
    return VectorField(L, rng.standard_normal((L.ncells, n)) * amp[:, None])


def _v_stopping(a, L):
    spec, W = _weight_from_args(a, L)
    rng = np.random.default_rng(a.seed)
    res = stopping_family(L.root, W, _random_field(L, W.n, rng), a.p, a.q)
    return True, {"spec": spec.label, "cubes": len(res.family), "generations": res.levels,
                  "worst_packing": res.worst_packing, "eta": res.family.eta}


def _v_domination(a, L):
    rng = np.random.default_rng(a.seed)
    T = ModelOperator.random_martingale(L, rng)
    f = VectorField(L, rng.standard_normal((L.ncells, a.n)))
    res = sparse_dominate(T, f, Fraction(a.eps))
    inside, margin = res.containment(T.matrix @ f.values, f)
    ok = res.reconstruction_error < 1e-10 and res.kernel_sup <= 1 + 1e-12 and inside
    fam = res.families[0]
    if a.out:
        fam.save(a.out)
    return ok, {"reconstruction_error": res.reconstruction_error, "kernel_sup": res.kernel_sup,
                "prefactor": res.prefactor, "c_T": res.c_T, "lambda": res.lam, "doublings": res.doublings,
                "containment": inside, "containment_margin": margin, "family": fam.to_dict()}


def _v_commutator_lift(a, L):
    rng = np.random.default_rng(a.seed)
    T = ModelOperator.random_martingale(L, rng)
    f = VectorField(L, rng.standard_normal((L.ncells, a.n)))
    b = log_distance(L, a.x0)
    res = commutator_lift(T, b, f, Fraction(a.eps))
    return res.residual < 1e-10, {"block_error": res.block_error, "residual": res.residual,
                                  "regroup_error": res.regroup_error, "sign": res.sign,
                                  "cubes": len(res.domination.cubes)}


def _v_rough(a, L):
    cert = rough_exponents(Fraction(a.p_exact), Fraction(a.q_exact), a.d, Fraction(a.K))
    e = cert.exponents
    return cert.ok, {"tau": e.tau, "eps": e.eps, "s": e.s, "ps_conj": e.ps_conj,
                     "identity_lhs": cert.identity_lhs, "identity_rhs": cert.identity_rhs,
                     "reciprocal": cert.reciprocal, "bound": cert.bound, "C": cert.C,
                     "tau_eps": cert.tau_eps, "ratio_to_K": cert.ratio_to_K, "ok": cert.ok}


def _v_bump(a, L):
    spec, W = _weight_from_args(a, L)
    rng = np.random.default_rng(a.seed)
    S = stopping_family(L.root, W, _random_field(L, W.n, rng), a.p, a.q).family
    K = max(aqinf_sc_constant(W, a.q).value, 1.0)
    choice, q = ("A1", None) if a.q == 1 else ("Aq", a.q)
    A, B = young_choice(choice, a.p, L.d, K, q=q)
    rep = bump_bound(S, W, W, a.p, A, B)
    lhs = opnorm_lower_bound(LinearEvaluator(SparseOperator(S, W, W, a.p).matrix), a.p,
                             a.trials, rng=rng, lattice=L).value
    b = log_distance(L, a.x0)
    A2, B2, C2, D2 = young_choice(choice, a.p, L.d, K, q=q, commutator=True)
    crep = commutator_bump_bound(S, W, W, a.p, b, A2, B2, C2, D2)
    clhs = opnorm_lower_bound(LinearEvaluator(SparseOperator(S, W, W, a.p, b=b).matrix), a.p,
                              a.trials, rng=rng, lattice=L).value
    ok = lhs <= rep.rhs and clhs <= crep.rhs
    return ok, {"spec": spec.label, "cubes": len(S), "K": K, "sparse_lower": lhs, "sparse_rhs": rep.rhs,
                "commutator_lower": clhs, "commutator_rhs": crep.rhs}


CHECKS = {
    "lemma-key": _v_lemma_key, "rhi": _v_rhi, "duality": _v_duality, "a1-ainf": _v_a1_ainf,
    "stopping": _v_stopping, "domination": _v_domination, "commutator-lift": _v_commutator_lift,
    "rough-exponents": _v_rough, "bump": _v_bump,
}


def cmd_verify(a) -> int:
    L = DyadicLattice(a.d, a.depth)
    ok, doc = CHECKS[a.check](a, L)
    doc = {"check": a.check, "passed": bool(ok), **doc}
    _emit(doc)
    return 0 if ok else 1


# -- sweep / report -------------------------------------------------------

def cmd_sweep(a) -> int:
    cfg = SweepConfig.load(a.config)
    if a.workers:
        cfg.workers = a.workers
    res = run_sweep(cfg)
    out = write_outputs(res, a.out)
    s = summarize(res.rows)
    print(f"{len(res.rows)} rows -> {out}/sweep.csv, spearman {s['spearman']:+.3f}, "
          f"ratio [{s['ratio_min']:.4g}, {s['ratio_max']:.4g}]")
    for rid, msgs in res.failures.items():
        print(f"FAIL {rid}: {'; '.join(msgs)}")
    return 0 if res.ok else 1


def cmd_report(a) -> int:
    d = Path(a.dir)
    rows = read_csv(d / "sweep.csv")
    meta = json.loads((d / "summary.json").read_text()) if (d / "summary.json").exists() else {}
    s = summarize(rows)
    print(f"{'spec_id':<28} {'p':>4} {'q':>4} {'constant':>11} {'lhs':>10} {'rhs':>11} {'ratio':>9}")
    for r in rows:
        print(f"{r.spec_id:<28} {r.p:>4g} {r.q:>4g} {r.driving_constant:>11.4g} {r.lhs_norm:>10.4g} "
              f"{r.rhs_bound:>11.4g} {r.ratio:>9.4g}")
    print(json.dumps(s, indent=2))
    failures = meta.get("failures", {})
    for rid, msgs in failures.items():
        print(f"FAIL {rid}: {'; '.join(msgs)}")
    finite = all(math.isfinite(getattr(r, c)) for r in rows
                 for c in ("A1", "Aq", "Aqinf_sc", "lhs_norm", "rhs_bound", "ratio"))
    return 0 if finite and not failures else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dyadlab", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    c = sub.add_parser("constants", help="weight characteristics of the specs in a JSON file")
    c.add_argument("spec_file")
    c.set_defaults(func=cmd_constants)

    v = sub.add_parser("verify", help="run one check")
    v.add_argument("check", choices=sorted(CHECKS))
    v.add_argument("--d", type=int, default=1)
    v.add_argument("--depth", type=int, default=8)
    v.add_argument("--p", type=float, default=2.0)
    v.add_argument("--q", type=float, default=1.0)
    v.add_argument("--kind", default="rotating-diagonal")
    v.add_argument("--n", type=int, default=2)
    v.add_argument("--alpha", type=float, default=0.0)
    v.add_argument("--beta", type=float, default=16.0)
    v.add_argument("--x0", type=float, default=0.5)
    v.add_argument("--freq", type=float, default=5.0)
    v.add_argument("--floor", type=float, default=1e-2)
    v.add_argument("--delta", type=float, default=None, help="rhi: exploratory exponent")
    v.add_argument("--eps", default="1/2")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--trials", type=int, default=20)
    v.add_argument("--K", default="1", help="rough-exponents: rational K")
    v.add_argument("--p-exact", default="2", help="rough-exponents: rational p")
    v.add_argument("--q-exact", default="1", help="rough-exponents: rational q")
    v.add_argument("--out", default=None, help="domination: write the sparse family JSON here")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("sweep", help="run a sweep config and write CSV/SVG")
    s.add_argument("config")
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, default=0)
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="summarise a sweep directory")
    r.add_argument("dir")
    r.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    return a.func(a)


if __name__ == "__main__":
    sys.exit(main())
