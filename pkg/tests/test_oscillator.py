import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mkdvlab.oscillator import (
    BoundaryLeakageError,
    OscillatorSpec,
    TruncationWarning,
    apply_heat,
    build_spectrum,
    collapse_distance,
    collapse_rate,
    covariance_curve,
    drift,
    heat_kernel,
    load_spectrum,
    save_spectrum,
    semigroup_residual,
    sinc_kinetic,
)

# frozen from a doubled-resolution solve (m = 2400, y_max = 6)
LAMBDA1_MU0 = 1.3696554696801928
DRIFT_MU0 = {0.5: -0.5758040075461981, 1.0: -1.4004264978086471, 1.5: -2.632735457208397}
VARIANCE_MU0 = 0.3620226487889602


def test_harmonic_eigenvalues_are_integers():
    sd = build_spectrum(OscillatorSpec(0.0, 10.0, 400, n_eigs=10), potential=lambda y: 0.5 * y * y - 0.5)
    np.testing.assert_allclose(sd.lambdas, np.arange(10), atol=1e-6)
    assert sd.v_shift == pytest.approx(0.0, abs=1e-6)


def test_constant_shift_is_absorbed():
    spec = OscillatorSpec(0.0, 6.0, 400, n_eigs=8)
    a = build_spectrum(spec)
    b = build_spectrum(spec, potential=lambda y: spec.potential(y) + 3.25)
    np.testing.assert_allclose(b.lambdas, a.lambdas, atol=1e-10)
    assert b.v_shift == pytest.approx(a.v_shift - 3.25, abs=1e-10)


def test_lambda1_matches_refined_solve(spectrum):
    assert spectrum.lambdas[1] == pytest.approx(LAMBDA1_MU0, abs=1e-8)


def test_spectral_invariants(spectrum):
    sd = spectrum
    assert abs(sd.lambdas[0]) <= 1e-9
    assert np.all(np.diff(sd.lambdas) > 0)
    gram = sd.h * sd.psis @ sd.psis.T
    off = gram - np.eye(len(gram))
    assert np.abs(off).max() < 1e-8
    psi0 = sd.ground_state
    # in the far tails psi_0 is at roundoff level; positivity is checked above it
    assert psi0.min() > -1e-13 * psi0.max()
    above = psi0 > 1e-12 * psi0.max()
    assert np.all(psi0[above] > 0) and above.sum() > 0.5 * psi0.size
    ham = sinc_kinetic(sd.y.size, sd.h)
    ham[np.diag_indices_from(ham)] += sd.spec.potential(sd.y) + sd.v_shift
    res = ham @ sd.psis.T - sd.psis.T * sd.lambdas
    assert np.sqrt(sd.h * (res**2).sum(axis=0)).max() < 1e-6


def test_boundary_leakage_detected():
    with pytest.raises(BoundaryLeakageError):
        build_spectrum(OscillatorSpec(0.0, 1.5, 200, n_eigs=8))


@pytest.mark.parametrize("kw", [{"y_max": -1.0}, {"m": 8}, {"m": 20, "n_eigs": 30}])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        OscillatorSpec(**kw)


@pytest.mark.parametrize("t", np.logspace(-2, 2, 9))
def test_heat_kernel_properties(spectrum, t):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        k = heat_kernel(spectrum, t)
    psi0 = spectrum.ground_state
    assert spectrum.h**2 * psi0 @ k @ psi0 == pytest.approx(1.0, abs=1e-10)
    assert np.abs(k - k.T).max() < 1e-12
    if t >= 0.1:
        assert k.min() >= -1e-10


def test_heat_truncation_warns(spectrum):
    with pytest.warns(TruncationWarning):
        heat_kernel(spectrum, 1e-3)


def test_heat_rejects_nonpositive_time(spectrum):
    with pytest.raises(ValueError):
        heat_kernel(spectrum, 0.0)


def test_semigroup(spectrum):
    assert semigroup_residual(spectrum, 0.3, 0.5) < 1e-8
    assert semigroup_residual(spectrum, 1.0, 2.0) < 1e-8


def test_rank_one_collapse_rate(spectrum):
    assert collapse_rate(spectrum) == pytest.approx(spectrum.gap, rel=0.05)
    assert collapse_distance(spectrum, 8.0) < collapse_distance(spectrum, 4.0)


def test_ground_state_is_heat_invariant(spectrum):
    psi0 = spectrum.ground_state
    np.testing.assert_allclose(apply_heat(spectrum, 0.7, psi0), psi0, atol=1e-10)


def test_drift_is_odd_and_matches_refined_solve(spectrum):
    b = drift(spectrum)
    assert abs(float(b(np.array(0.0)))) < 1e-8
    y = np.linspace(0.2, 2.0, 10)
    np.testing.assert_allclose(b(y), -b(-y), atol=1e-8)
    for y0, ref in DRIFT_MU0.items():
        assert float(b(np.array(y0))) == pytest.approx(ref, abs=1e-6)


def test_drift_tail_trend(spectrum):
    b = drift(spectrum)
    ys = np.array([1.5, 2.5, 3.5])
    gap = np.abs(b(ys) + ys**2)
    assert np.all(np.diff(gap / ys**2) < 0)


def test_drift_strict_window(spectrum):
    b = drift(spectrum)
    with pytest.raises(ValueError):
        b(np.array([b.window[1] + 1.0]), strict=True)


def test_covariance_at_zero_is_variance(spectrum):
    c0 = covariance_curve(spectrum, np.array([0.0]))[0]
    var = spectrum.inner(spectrum.y**2 * spectrum.ground_state, spectrum.ground_state)
    assert c0 == pytest.approx(var, rel=1e-10)
    assert c0 == pytest.approx(VARIANCE_MU0, rel=1e-6)


def test_save_load_roundtrip(spectrum, tmp_path):
    path = save_spectrum(spectrum, tmp_path / "spec")
    back = load_spectrum(path)
    np.testing.assert_array_equal(back.lambdas, spectrum.lambdas)
    np.testing.assert_array_equal(back.psis, spectrum.psis)
    (tmp_path / "spec.bin").write_bytes(b"\0" * 16)
    with pytest.raises(ValueError):
        load_spectrum(path)


@settings(max_examples=10, deadline=None)
@given(mu=st.floats(-2.0, 2.0))
def test_ground_energy_zero_for_any_mu(mu):
    sd = build_spectrum(OscillatorSpec(mu, 6.0, 300, n_eigs=4))
    assert abs(sd.lambdas[0]) <= 1e-9
    assert sd.lambdas[1] > 0
    psi0 = sd.ground_state
    assert psi0.min() > -1e-13 * psi0.max()
