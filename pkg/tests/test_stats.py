import numpy as np
import pytest
from scipy import stats as sst

from mkdvlab.harness.stats import (
    FAMILY_ALPHA,
    Statistic,
    batch_means_se,
    bonferroni,
    complex_mean_test,
    ensemble_stats,
    ks_one_sample,
    ks_two_sample,
)


def test_family_alpha_is_three_sigma():
    assert FAMILY_ALPHA == pytest.approx(0.0026997960632601866, rel=1e-12)
    assert bonferroni(4) == pytest.approx(FAMILY_ALPHA / 4)
    assert bonferroni(0) == FAMILY_ALPHA


def test_statistic_passes_and_dict():
    s = Statistic("x", 0.1, 0.05, 0.5, 0.01, {})
    d = s.to_dict()
    assert s.passes and d["passes"] and d["name"] == "x"
    assert not Statistic("y", 1, 0.1, 1e-5, 0.01, {}).passes


def test_complex_mean_null_and_alternative():
    rng = np.random.default_rng(0)
    z = rng.normal(size=5000) + 1j * rng.normal(size=5000)
    assert complex_mean_test(z, "null", 0.01).p_value > 0.01
    assert complex_mean_test(z + 0.2, "shifted", 0.01).p_value < 1e-10
    degenerate = complex_mean_test(np.zeros(10, dtype=complex), "zero", 0.01)
    assert degenerate.p_value == 1.0 and degenerate.effect == 0.0


def test_complex_mean_calibrated():
    rng = np.random.default_rng(1)
    p = [complex_mean_test(rng.normal(size=200) + 1j * rng.normal(size=200), "n", 0.05).p_value
         for _ in range(400)]
    assert sst.kstest(p, "uniform").pvalue > 1e-3


def test_ks_helpers():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=2000), rng.normal(size=2000)
    assert ks_two_sample(a, b, "ks", 0.01).passes
    assert not ks_two_sample(a, b + 0.3, "ks", 0.01).passes
    assert ks_one_sample(a, sst.norm.cdf, "ks1", 0.01).passes


def test_batch_means_se_iid_and_correlated():
    rng = np.random.default_rng(3)
    x = rng.normal(size=40_000)
    assert batch_means_se(x) == pytest.approx(1 / np.sqrt(x.size), rel=0.5)
    ar = np.zeros_like(x)
    for i in range(1, x.size):
        ar[i] = 0.9 * ar[i - 1] + x[i]
    # AR(1) inflates the SE well beyond the naive value
    assert batch_means_se(ar) > 3 * ar.std() / np.sqrt(ar.size)


def test_ensemble_stats_shapes_and_mass():
    rng = np.random.default_rng(4)
    q = rng.normal(size=(500, 32))
    es = ensemble_stats(q, 0.1, [np.ones(32), np.zeros(32)], bins=20)
    assert es.histogram.sum() == pytest.approx(1.0)
    assert es.char_values[1] == 1.0
    assert es.covariance[0] == pytest.approx(1.0, abs=0.05)
    assert len(es.covariance) == 17
