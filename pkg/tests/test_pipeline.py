import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfit.errors import UsageError
from rfit.geometry import Dataset, LinePoint, least_squares_fit
from rfit.influence import exact_influence_full, normalize
from rfit.io import dumps_instance, dumps_report
from rfit.pipeline import (
    Instance,
    consensus,
    default_eps,
    estimate_influence,
    generate,
    robust_fit,
    threshold_mask,
)
from rfit.quantum import build_oracle_table, bv_sample, fwht_spectrum


def line_data(pts):
    return Dataset("line", [LinePoint(a, b) for a, b in pts])


class TestGenerate:
    @pytest.mark.parametrize("kind", ["line", "homography", "triangulation"])
    def test_deterministic_file(self, kind, tmp_path):
        a = dumps_instance(generate(kind, 12, 8, seed=5))
        b = dumps_instance(generate(kind, 12, 8, seed=5))
        assert a == b
        assert dumps_instance(generate(kind, 12, 8, seed=6)) != a

    @pytest.mark.parametrize("kind", ["line", "homography", "triangulation"])
    def test_labels_and_truth(self, kind):
        inst = generate(kind, 15, 10, seed=1)
        assert inst.n == 15 and inst.truth_labels.sum() == 10
        assert inst.truth_x.size == inst.kind.dim
        res = inst.dataset.residuals(inst.truth_x)
        assert np.all(res[inst.truth_labels] <= inst.eps)
        assert np.all(res[~inst.truth_labels] > inst.eps)
        assert inst.provenance["source"] == "generated"
        assert inst.provenance["outlier_fraction"] == pytest.approx(5 / 15)

    def test_noiseless_all_inliers_zero_influence(self):
        inst = generate("line", 10, 10, noise_sigma=0.0, seed=3)
        np.testing.assert_array_equal(exact_influence_full(inst.dataset, inst.eps).alphas, 0)

    def test_homography_well_conditioned(self):
        for s in range(5):
            H = np.append(generate("homography", 6, 6, seed=s).truth_x, 1.0).reshape(3, 3)
            assert np.linalg.cond(H) < 1e4

    def test_line_scale(self):
        inst = generate("line", 100, 60, seed=0)
        assert inst.n == 100 and inst.eps == pytest.approx(0.3)

    def test_bad_arguments(self):
        with pytest.raises(UsageError):
            generate("line", 5, 6)
        with pytest.raises(UsageError):
            generate("line", 0, 0)
        with pytest.raises(UsageError):
            generate("line", 5, 3, noise_sigma=-1)
        with pytest.raises(UsageError):
            generate("plane", 5, 3)

    def test_default_eps(self):
        assert default_eps("line", 0.1) == 0.3
        assert default_eps("homography", 1.0) == 4.0
        assert default_eps("triangulation", 0.25) == 1.0


class TestInstance:
    def test_invariants(self):
        with pytest.raises(UsageError):
            Instance("line", [], 0.3)
        with pytest.raises(UsageError):
            Instance("line", [LinePoint(0, 0)], 0.0)


class TestConsensus:
    def test_all_on_line(self):
        data = line_data([(t, 2 * t - 1) for t in range(7)])
        assert consensus(data, np.array([2.0, -1.0]), 0.1) == 7

    def test_far_away(self):
        data = line_data([(t, 2 * t - 1) for t in range(7)])
        assert consensus(data, np.array([0.0, -1e6]), 0.1) == 0

    def test_chebyshev_witness(self):
        data = line_data([(0, 0), (1, 0), (2, 2)])
        assert consensus(data, np.array([1.0, -0.5]), 0.6) == 3
        assert consensus(data, np.array([1.0, -0.5]), 0.4) == 0

    def test_off_region_points_disagree(self):
        inst = generate("triangulation", 6, 6, seed=0)
        P = inst.points[0].P
        C = np.linalg.svd(P)[2][-1]
        C = C[:3] / C[3]
        behind = 3 * C - 2 * inst.truth_x
        depth = np.array([p.P[2] @ np.append(behind, 1.0) for p in inst.points])
        assert depth[0] < 0
        assert consensus(inst, behind, 1e9) == np.count_nonzero(depth > 0) < 6


class TestThreshold:
    @given(vals=st.lists(st.floats(0, 1), min_size=1, max_size=20), g1=st.floats(0.01, 1), g2=st.floats(0.01, 1))
    @settings(max_examples=80)
    def test_monotone_in_gamma(self, vals, g1, g2):
        lo, hi = sorted((g1, g2))
        small, big = threshold_mask(vals, lo), threshold_mask(vals, hi)
        assert np.all(big[small])

    def test_bounds(self):
        with pytest.raises(UsageError):
            threshold_mask([0.1], 0.0)
        with pytest.raises(UsageError):
            threshold_mask([0.1], 1.5)
        assert threshold_mask([0.2, 0.3, 0.4], 0.3).tolist() == [True, True, False]


class TestRobustFit:
    def test_all_inliers(self):
        inst = generate("line", 10, 10, noise_sigma=0.0, seed=4)
        rep = robust_fit(inst)
        assert rep.inlier_mask.all()
        np.testing.assert_allclose(rep.refit, inst.truth_x, atol=1e-9)
        assert rep.consensus == 10

    def test_mask_invariant(self):
        inst = generate("line", 12, 8, noise_sigma=0.1, outlier_spread=10, seed=1, eps=0.3)
        rep = robust_fit(inst, gamma=0.5)
        np.testing.assert_array_equal(rep.inlier_mask, rep.normalized <= 0.5)
        assert rep.estimator["method"] == "exact"

    def test_separated_instance_recovers_labels(self):
        inst = generate("line", 10, 7, noise_sigma=0.1, outlier_spread=10, seed=2, eps=0.3)
        rep = robust_fit(inst)
        np.testing.assert_array_equal(rep.inlier_mask, inst.truth_labels)

    def test_large_line_beats_plain_least_squares(self):
        inst = generate("line", 100, 60, noise_sigma=0.1, outlier_spread=10, seed=0, eps=0.3)
        rep = robust_fit(inst, method="classical", M=800, seed=0)
        ls = least_squares_fit("line", inst.points)
        assert rep.consensus >= consensus(inst, ls, inst.eps)
        assert rep.estimator["logical_queries"] == 800 * 101

    def test_quantum_mask_matches_exact(self):
        # the influence step of robust_fit with method=quantum, with the table built once
        inst = generate("line", 10, 7, noise_sigma=0.1, outlier_spread=10, seed=2, eps=0.3)
        exact = robust_fit(inst, method="exact").inlier_mask
        spec = fwht_spectrum(build_oracle_table(inst.dataset, inst.eps))
        agree = 0
        for s in range(100):
            est, _ = bv_sample(spec, 5000, s)
            agree += np.array_equal(threshold_mask(normalize(est.alphas), 0.3), exact)
        assert agree >= 95
        np.testing.assert_array_equal(robust_fit(inst, method="quantum", M=5000, seed=0).inlier_mask, exact)

    def test_too_few_retained(self):
        inst = generate("line", 8, 3, noise_sigma=0.1, outlier_spread=10, seed=0, eps=0.3)
        with pytest.raises(UsageError, match="larger gamma"):
            robust_fit(inst, gamma=1e-6)

    def test_bad_method_and_gamma(self):
        inst = generate("line", 6, 4, seed=0)
        with pytest.raises(UsageError):
            robust_fit(inst, method="magic")
        with pytest.raises(UsageError):
            robust_fit(inst, gamma=0)

    def test_report_bit_identical(self):
        inst = generate("line", 20, 14, seed=3)
        a = dumps_report(robust_fit(inst, method="classical", M=100, seed=1))
        b = dumps_report(robust_fit(inst, method="classical", M=100, seed=1))
        assert a == b

    def test_eps_override(self):
        inst = generate("line", 8, 6, seed=0)
        infl, meta = estimate_influence(inst, "exact", eps=0.5)
        assert infl.eps == 0.5 and meta["eps"] == 0.5
