import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from refspeech.deviation import (MAHALANOBIS_FEATURE, EmptyStratum, IndeterminateScore,
                                 NormalizerStats, ReferenceSummary, UnknownStratum, ZeroSigma,
                                 apply_normalizer, deviation_table, ds_mahalanobis, ds_mstd,
                                 ds_mstd_nocap, ds_q123, ds_ri, fit_normalizer)
from refspeech.refstats import ZeroWidthInterval

import oracles
from conftest import make_table

finite = st.floats(-1e3, 1e3, allow_nan=False)
positive = st.floats(1e-3, 1e3)


class TestNormalizer:
    def test_zscore_hand_example(self):
        t = make_table([[0.0], [2.0]])
        stats = fit_normalizer(t, "zscore")
        out = apply_normalizer(stats, make_table([[2.0]]))
        assert out.rows[0].features["f0"] == pytest.approx(1.0)

    def test_minmax_endpoints(self):
        t = make_table([[1.0], [3.0]])
        out = apply_normalizer(fit_normalizer(t, "minmax"), t)
        np.testing.assert_allclose(out.matrix()[:, 0], [0.0, 1.0])

    def test_patients_ignored_when_fitting(self):
        t = make_table([[0.0], [2.0], [100.0]], labels=["control", "control", "patient"])
        stats = fit_normalizer(t, "minmax")
        assert stats.strata["F|d1"]["f0"] == [0.0, 2.0]

    def test_patient_only_stratum(self):
        t = make_table([[0.0], [1.0]], labels=["patient", "patient"])
        with pytest.raises(EmptyStratum):
            fit_normalizer(t)

    def test_unknown_stratum(self):
        stats = fit_normalizer(make_table([[0.0], [1.0]]))
        with pytest.raises(UnknownStratum):
            apply_normalizer(stats, make_table([[0.0]], genders=["M"]))

    def test_zero_spread_passes_through(self, caplog):
        stats = fit_normalizer(make_table([[5.0], [5.0]]))
        assert stats.strata["F|d1"]["f0"] is None
        assert apply_normalizer(stats, make_table([[7.0]])).rows[0].features["f0"] == 7.0
        assert "zero spread" in caplog.text

    def test_strata_are_separate(self):
        t = make_table([[0.0], [2.0], [10.0], [30.0]], genders=["F", "F", "M", "M"])
        out = apply_normalizer(fit_normalizer(t, "minmax"), t)
        np.testing.assert_allclose(out.matrix()[:, 0], [0, 1, 0, 1])

    def test_serialization(self):
        stats = fit_normalizer(make_table([[0.0], [2.0]]))
        assert NormalizerStats.from_dict(stats.to_dict()) == stats


class TestScoreExamples:
    def test_mstd(self):
        assert ds_mstd(2, 0, 1) == 0.5
        assert ds_mstd(0.5, 0, 1) == 0.0
        assert ds_mstd(-4, 0, 1) == 0.75

    def test_mstd_nocap(self):
        assert ds_mstd_nocap(1, 0, 2) == 0.5
        assert ds_mstd_nocap(0, 0, 2) == 0.0
        assert ds_mstd_nocap(3, 0, 1) == 3.0

    def test_q123(self):
        assert ds_q123(3, 0, 2) == 1.0
        assert ds_q123(-1, 0, 2) == -1.0
        assert ds_q123(1, 0, 2) == 0.0

    def test_ri(self):
        assert ds_ri(2, -1, 1) == 1.0
        assert ds_ri(-2, -1, 1) == -1.0
        assert ds_ri(0.99, -1, 1) == 0.0

    def test_mahalanobis(self):
        assert ds_mahalanobis([3, 4], [0, 0], np.eye(2)) == pytest.approx(5.0)
        assert ds_mahalanobis([1, 2], [1, 2], np.eye(2)) == 0.0
        assert ds_mahalanobis([2, 0], [0, 0], np.diag([4.0, 1.0])) == pytest.approx(1.0)

    def test_errors(self):
        with pytest.raises(ZeroSigma):
            ds_mstd(1, 0, 0)
        with pytest.raises(ZeroSigma):
            ds_mstd_nocap(1, 0, 0)
        with pytest.raises(IndeterminateScore):
            ds_q123(1, 2, 2)
        with pytest.raises(ZeroWidthInterval):
            ds_ri(1, 2, 2)


class TestScoreProperties:
    @given(finite, finite, positive)
    def test_mstd_range_and_zero_set(self, x, mu, sigma):
        s = ds_mstd(x, mu, sigma)
        assert 0 <= s < 1
        assert (s == 0) == (abs(x - mu) <= sigma)

    @given(finite, finite, positive, st.sampled_from([ds_q123, ds_ri]))
    def test_odd_about_midpoint(self, mid, delta, half, fn):
        lo, hi = mid - half, mid + half
        assume(lo < hi)
        np.testing.assert_allclose(fn(mid + delta, lo, hi), -fn(mid - delta, lo, hi),
                                   rtol=1e-9, atol=1e-9)

    @given(finite, positive, st.floats(0, 1))
    def test_ri_flat_inside(self, lo, width, frac):
        hi = lo + width
        assert ds_ri(min(lo + frac * width, hi), lo, hi) == 0.0

    @given(finite, positive, st.floats(0, 100), st.floats(0, 100))
    def test_monotone_above_band(self, lo, width, a, b):
        hi = lo + width
        x1, x2 = hi + min(a, b), hi + max(a, b)
        for s in (ds_ri(x1, lo, hi) <= ds_ri(x2, lo, hi),
                  ds_q123(x1, lo, hi) <= ds_q123(x2, lo, hi),
                  ds_mstd(x1, lo, width) <= ds_mstd(x2, lo, width),
                  ds_mstd_nocap(x1, lo, width) <= ds_mstd_nocap(x2, lo, width)):
            assert s

    @given(st.integers(0, 10 ** 6))
    def test_mahalanobis_affine_invariance(self, seed):
        rng = np.random.default_rng(seed)
        d = 3
        L = rng.normal(size=(d, d)) + 3 * np.eye(d)
        V = L @ L.T
        x, q2 = rng.normal(size=d), rng.normal(size=d)
        A = rng.normal(size=(d, d)) + 3 * np.eye(d)
        assume(abs(np.linalg.det(A)) > 1e-2)
        b = rng.normal(size=d)
        before = ds_mahalanobis(x, q2, V)
        after = ds_mahalanobis(A @ x + b, A @ q2 + b, A @ V @ A.T)
        assert after == pytest.approx(before, rel=1e-8, abs=1e-8)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(11)
        n = 2000
        x, mu = rng.normal(0, 3, n), rng.normal(0, 1, n)
        sigma = rng.uniform(0.1, 2, n)
        q1 = rng.normal(0, 1, n)
        q3 = q1 + rng.uniform(0.1, 2, n)
        np.testing.assert_allclose(ds_mstd(x, mu, sigma),
                                   [oracles.mstd(*t) for t in zip(x, mu, sigma)], rtol=1e-12)
        np.testing.assert_allclose(ds_q123(x, q1, q3),
                                   [oracles.band(*t) for t in zip(x, q1, q3)], rtol=1e-12)


class TestDeviationTable:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.ref = make_table(rng.normal(size=(200, 3)))
        self.summary = ReferenceSummary.from_table(self.ref)

    def test_suffixes_and_values(self):
        t = make_table([[3.0, 0.0, -3.0]])
        out = deviation_table(t, self.summary, "ri")
        assert out.schema == ("f0.dsri", "f1.dsri", "f2.dsri")
        s = self.summary
        assert out.rows[0].features["f0.dsri"] == pytest.approx(
            oracles.band(3.0, s.ri_lb["f0"], s.ri_ub["f0"]), rel=1e-12)

    def test_mahalanobis_single_column(self):
        t = make_table([[1.0, 2.0, 3.0]])
        out = deviation_table(t, self.summary, "mahalanobis")
        assert out.schema == (MAHALANOBIS_FEATURE,)
        s = self.summary
        expected = oracles.mahalanobis([1.0, 2.0, 3.0], [s.q2[f] for f in s.features],
                                       s.covariance)
        assert out.rows[0].features[MAHALANOBIS_FEATURE] == pytest.approx(expected, rel=1e-10)

    def test_raw_passthrough(self):
        t = make_table([[1.0, 2.0, 3.0]])
        assert deviation_table(t, self.summary, "raw", ["f1"]).schema == ("f1",)

    def test_zero_iqr_feature_dropped(self, caplog):
        X = np.random.default_rng(1).normal(size=(40, 2))
        X[:, 1] = 0.0
        X[:3, 1] = [1.0, 2.0, -1.0]
        summary = ReferenceSummary.from_table(make_table(X))
        out = deviation_table(make_table(X[:5]), summary, "q123")
        assert out.schema == ("f0.dsq123",)
        assert "dropped" in caplog.text

    def test_feature_dropped_in_one_partition_dropped_everywhere(self):
        rng = np.random.default_rng(2)
        good = ReferenceSummary.from_table(make_table(rng.normal(size=(40, 2))))
        X = rng.normal(size=(40, 2))
        X[:, 1] = 1.0
        flat = ReferenceSummary.from_table(make_table(X))
        t = make_table([[0.0, 0.0], [0.0, 0.0]], genders=["F", "M"])
        out = deviation_table(t, {("F", "sustained_vowel"): good,
                                  ("M", "sustained_vowel"): flat}, "ri")
        assert out.schema == ("f0.dsri",)

    def test_missing_values_stay_missing(self):
        t = make_table([[np.nan, 1.0, 1.0]])
        out = deviation_table(t, self.summary, "mstd")
        assert "f0.dsmstd" not in out.rows[0].features

    def test_summary_round_trip(self):
        assert ReferenceSummary.from_dict(self.summary.to_dict()) == self.summary
