import csv
import json
import math
import xml.etree.ElementTree as ET
from fractions import Fraction

import numpy as np
import pytest

from dyadlab.grid import DomainError, DyadicLattice
from dyadlab.lab.checks import (LinearEvaluator, PlainMaximal, opnorm_lower_bound, verify_lemma_key,
                                verify_rhi)
from dyadlab.lab.cli import main
from dyadlab.lab.rough import rough_exponents
from dyadlab.lab.svg import scatter_svg
from dyadlab.lab.sweep import (COLUMNS, SweepConfig, log_distance, read_csv, rotating_family, run_sweep,
                               write_outputs)
from dyadlab.operators import WeightedMaximal
from dyadlab.weights import ConfigError, MatrixWeight, WeightSpec, generate_weight

IDENTITY = {
    "lattice": {"d": 1, "depth": 5},
    "weights": [{"kind": "identity", "n": 2, "id": "I2"}, {"kind": "identity", "n": 1, "id": "I1"}],
    "exponents": {"p": 2, "q": 1},
    "operator": {"kind": "maximal"},
    "trials": 3, "refine": 2, "seed": 0,
}


class TestNormLowerBound:
    def test_identity_matrix(self):
        est = opnorm_lower_bound(LinearEvaluator(np.eye(16)), 3.0, trials=3, rng=0)
        assert est.value == pytest.approx(1.0)

    def test_value_is_attained(self):
        rng = np.random.default_rng(0)
        M = rng.standard_normal((16, 16))
        est = opnorm_lower_bound(LinearEvaluator(M), 2.0, trials=5, rng=1)
        f = est.field
        assert est.value == pytest.approx(np.linalg.norm(M @ f) / np.linalg.norm(f), rel=1e-12)
        assert est.value <= np.linalg.norm(M, 2) * (1 + 1e-12)
        assert est.value >= 0.99 * np.linalg.norm(M, 2)

    def test_plain_maximal(self):
        L = DyadicLattice(1, 6)
        est = opnorm_lower_bound(PlainMaximal(L), 2.0, trials=5, rng=2, lattice=L)
        assert 1.0 <= est.value <= 2.0

    def test_scalar_unit_weight_matches_plain(self):
        L = DyadicLattice(1, 6)
        W = MatrixWeight.identity(L, 1)
        a = opnorm_lower_bound(WeightedMaximal(W, 2.0), 2.0, trials=5, rng=3, lattice=L).value
        b = opnorm_lower_bound(PlainMaximal(L), 2.0, trials=5, rng=3, lattice=L).value
        assert a == pytest.approx(b, rel=1e-12)

    def test_below_dense_norm(self):
        L = DyadicLattice(1, 5)
        rng = np.random.default_rng(4)
        for _ in range(5):
            M = np.abs(rng.standard_normal((L.ncells, L.ncells)))
            est = opnorm_lower_bound(LinearEvaluator(M), 2.0, trials=4, rng=rng, lattice=L)
            assert est.value <= np.linalg.norm(M, 2) * (1 + 1e-12)


class TestRough:
    def test_certificate_small_cases(self):
        for p, q, K in ((2, 1, 1), (Fraction(3), Fraction(3, 2), Fraction(7, 2)), (Fraction(5, 4), 1, 10)):
            cert = rough_exponents(p, q, 1, K)
            assert cert.ok
            assert cert.identity_lhs == cert.identity_rhs

    def test_epsilon_decreases_with_K(self):
        eps = [rough_exponents(3, 2, 1, K).exponents.eps for K in (1, 2, 10, 100)]
        assert all(b < a for a, b in zip(eps, eps[1:]))

    def test_reciprocal_is_linear_in_K(self):
        certs = [rough_exponents(2, 1, 1, K) for K in (1, 10, 1000)]
        r = [c.ratio_to_K for c in certs]
        assert r[0] > r[1] > r[2] and all(x <= c.C for x, c in zip(r, certs))

    @pytest.mark.parametrize("p,q,K,d", [(2, 2, 1, 1), (2, 3, 1, 1), (2, 1, Fraction(1, 2), 1), (2, 1, 1, 0)])
    def test_domain(self, p, q, K, d):
        with pytest.raises(DomainError):
            rough_exponents(p, q, d, K)


class TestInstanceChecks:
    def test_rhi_constant_weight(self):
        L = DyadicLattice(1, 6)
        rep = verify_rhi(np.full(L.ncells, 5.0), L)
        assert rep.passed and rep.worst_margin == pytest.approx(0.5, abs=1e-12)

    def test_rhi_probe_reports_without_raising(self):
        L = DyadicLattice(1, 8)
        w = np.maximum(np.abs(L.centers[:, 0] - 0.5), 2.0 ** -8) ** -0.95
        big = verify_rhi(w, L, delta=10.0 / verify_rhi(w, L).ainf)
        assert big.delta > 0 and isinstance(big.passed, bool)
        assert verify_rhi(w, L).passed

    def test_lemma_key_identity(self):
        L = DyadicLattice(1, 4)
        rep = verify_lemma_key(MatrixWeight.identity(L, 2), 3.0, 2.0)
        assert rep.sup_ratio == pytest.approx(1.0)
        with pytest.raises(DomainError):
            verify_lemma_key(MatrixWeight.identity(L, 2), 2.0, 2.0)


class TestSweep:
    def test_config_errors(self):
        with pytest.raises(ConfigError):
            SweepConfig.from_dict({"lattice": {"d": 1, "depth": 3}})
        with pytest.raises(ConfigError):
            SweepConfig.from_dict(dict(IDENTITY, operator={"kind": "riesz"}))
        with pytest.raises(ConfigError):
            run_sweep(dict(IDENTITY, exponents={"p": 2, "q": 3}))

    def test_identity_sweep_is_flat(self):
        res = run_sweep(IDENTITY)
        # lower bounds for the same norm, at most Doob's constant 2
        ratios = [r.ratio for r in res.rows]
        assert len(ratios) == 2 and all(1.0 <= x <= 2.0 for x in ratios)
        assert all(r.A1 == pytest.approx(1.0) for r in res.rows)

    def test_rerun_is_deterministic_and_csv_round_trips(self, tmp_path):
        a = run_sweep(IDENTITY)
        b = run_sweep(IDENTITY)
        assert [r.lhs_norm for r in a.rows] == [r.lhs_norm for r in b.rows]
        out = write_outputs(a, tmp_path / "run")
        with open(out / "sweep.csv", newline="") as fh:
            assert tuple(next(csv.reader(fh))) == COLUMNS
        back = read_csv(out / "sweep.csv")
        assert [r.spec_id for r in back] == ["I2", "I1"]
        assert back[0].ratio == pytest.approx(a.rows[0].ratio, rel=1e-11)
        meta = json.loads((out / "summary.json").read_text())
        assert meta["failures"] == {} and meta["seed"] == 0

    def test_window_violation_is_a_failure(self):
        res = run_sweep(dict(IDENTITY, window=[0.1, 0.2]))
        assert not res.ok and len(res.failures) == 2

    def test_sparse_rows_stay_below_bound(self):
        doc = dict(IDENTITY, lattice={"d": 1, "depth": 5}, weights=rotating_family((1e-1, 1e-2), (5.0,)),
                   exponents={"p": 3, "q": [1, 2]}, operator={"kind": "sparse"})
        res = run_sweep(doc)
        assert res.ok and all(r.ratio <= 1 for r in res.rows)

    def test_log_distance(self):
        L = DyadicLattice(1, 4)
        b = log_distance(L, 0.5)
        assert b.min() == pytest.approx(math.log(2.0 ** -4)) and b.max() == pytest.approx(math.log(15 / 32))

    def test_family_ids(self):
        fam = rotating_family()
        assert len(fam) == 21 and len({s["id"] for s in fam}) == 21
        W = generate_weight(WeightSpec.from_dict(fam[0]), DyadicLattice(1, 4))
        assert W.n == 2


class TestCli:
    def test_constants(self, tmp_path, capsys):
        p = tmp_path / "w.json"
        p.write_text(json.dumps({"lattice": {"d": 1, "depth": 5}, "weight": {"kind": "scalar-power", "alpha": -0.5},
                                 "exponents": {"p": [2, 3], "q": [1]}}))
        assert main(["constants", str(p)]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert isinstance(doc, (list, dict))

    @pytest.mark.parametrize("argv", [
        ["verify", "rough-exponents", "--p-exact", "3", "--q-exact", "3/2", "--K", "5"],
        ["verify", "duality", "--depth", "5", "--p", "3"],
        ["verify", "lemma-key", "--depth", "5", "--p", "3", "--q", "2"],
        ["verify", "rhi", "--depth", "6", "--kind", "scalar-power", "--n", "1", "--alpha", "0.5"],
        ["verify", "commutator-lift", "--depth", "5"],
        ["verify", "a1-ainf", "--depth", "5"],
    ])
    def test_verify_passes(self, argv, capsys):
        assert main(argv) == 0
        assert json.loads(capsys.readouterr().out)["passed"] is True

    def test_rhi_probe_exit_zero(self, capsys):
        assert main(["verify", "rhi", "--depth", "6", "--kind", "scalar-power", "--n", "1",
                     "--alpha", "0.9", "--delta", "5"]) == 0
        capsys.readouterr()

    def test_domination_writes_family(self, tmp_path, capsys):
        out = tmp_path / "fam.json"
        assert main(["verify", "domination", "--depth", "5", "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["eta"] == "1/2" and doc["cubes"]
        capsys.readouterr()

    def test_sweep_and_report(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(IDENTITY))
        assert main(["sweep", str(cfg), "--out", str(tmp_path / "o")]) == 0
        assert main(["report", str(tmp_path / "o")]) == 0
        cfg.write_text(json.dumps(dict(IDENTITY, window=[0.1, 0.2])))
        assert main(["sweep", str(cfg), "--out", str(tmp_path / "bad")]) == 1
        assert main(["report", str(tmp_path / "bad")]) == 1
        capsys.readouterr()

    def test_bad_check_name(self):
        with pytest.raises(SystemExit):
            main(["verify", "nonsense"])


class TestSvg:
    def test_well_formed(self):
        doc = scatter_svg({"a": [(1, 0.5), (10, 0.7), (1000, 0.9)], "b": [(3, 1.0)]}, "t", "x", "y")
        root = ET.fromstring(doc)
        assert root.tag.endswith("svg")
        # four data points plus one legend marker per series
        assert len([e for e in root.iter() if e.tag.endswith("circle")]) == 6

    def test_linear_axis_and_single_point(self):
        ET.fromstring(scatter_svg({"only": [(2.0, 2.0)]}, "t", "x", "y", logx=False))
