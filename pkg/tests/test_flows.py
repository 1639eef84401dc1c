import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mkdvlab import spectral
from mkdvlab.conserved import alpha, mass
from mkdvlab.flows import (
    HkFlow,
    MkdvFlow,
    PicardError,
    StepRejected,
    flow_commutation,
    gamma_cancellation,
    green_residual_hk,
    green_residual_mkdv,
    hk_evolve,
    hk_flow,
    hk_step,
    hk_symbol,
    hk_vector_field,
    kappa_convergence,
    mkdv_evolve,
    mkdv_flow,
    mkdv_step,
    window_weight,
)
from mkdvlab.lattice import LatticeField

L = np.pi


def test_symbol_limits():
    n, kappa = 256, 8.0
    sym = hk_symbol(n, L, kappa)
    k = spectral.odd_wavenumbers(n, L)
    # low modes approach mKdV dispersion, high modes pure translation
    assert sym[1] / (1j * k[1] ** 3) == pytest.approx(1.0, rel=1e-2)
    assert sym[-2] / (4j * kappa**2 * k[-2]) == pytest.approx(1.0, rel=0.1)


def test_vector_field_of_constant_vanishes():
    assert np.abs(hk_vector_field(np.full(32, 0.8), 8.0, L)).max() < 1e-14


def test_constant_is_exact_fixed_point():
    c = LatticeField(L, np.full(64, 0.7))
    out = hk_step(c, 8.0, 1e-3)
    assert isinstance(out, LatticeField)
    assert np.abs(out.values - c.values).max() <= 1e-12
    assert np.all(mkdv_step(np.full(64, 0.7), 1e-3, L) == 0.7)


def test_conservation_over_100_steps(smooth_field):
    q = smooth_field(0, n=128)
    traj = hk_flow(q, 8.0, 0.1, 1e-3, L, ledger_kappas=(4.0, 16.0))
    drift = traj.check_ledger()
    assert len(traj.times) == 101
    assert drift["M"] < 1e-8
    assert drift["A@4"] < 1e-6 and drift["A@16"] < 1e-6
    assert not traj.flagged


def test_time_reversal(smooth_field):
    q = smooth_field(1, n=128)
    back = hk_step(hk_step(q, 8.0, 2e-3, L), 8.0, -2e-3, L)
    assert np.abs(back - q).max() < 1e-11


def test_group_property_refines(smooth_field):
    q = smooth_field(2, n=128)
    gaps = []
    for dt in (4e-3, 2e-3, 1e-3):
        two = hk_step(hk_step(q, 8.0, dt, L), 8.0, dt, L)
        one = hk_step(q, 8.0, 2 * dt, L)
        gaps.append(np.abs(two - one).max())
    assert gaps[0] / gaps[1] > 8 and gaps[1] / gaps[2] > 8


def test_hk_order_four(smooth_field):
    q = smooth_field(3, n=128)
    ref = hk_evolve(q, 8.0, 0.05, 1.25e-3, L)
    errs = [np.abs(hk_evolve(q, 8.0, 0.05, dt, L) - ref).max() for dt in (1e-2, 5e-3)]
    assert np.log2(errs[0] / errs[1]) > 3.5


def test_halving_rescues_large_step(smooth_field, caplog):
    q = smooth_field(4, n=128, amplitude=2.0)
    with caplog.at_level(logging.INFO, logger="mkdvlab.flows"):
        coarse = hk_evolve(q, 16.0, 0.02, 0.02, L)
    fine = hk_evolve(q, 16.0, 0.02, 1e-3, L)
    assert any("halving" in r.message for r in caplog.records)
    # the rescued step is still a coarse step: check it is sane, not fine-accurate
    assert np.isfinite(coarse).all()
    assert mass(coarse, L) == pytest.approx(mass(q, L), rel=1e-10)
    assert np.abs(coarse - fine).max() < 0.05 * np.abs(q).max()


def test_picard_failure_surfaces():
    q = 5.0 * np.sign(np.sin(spectral.grid(64, L) * 3))
    with pytest.raises(PicardError):
        hk_evolve(q, 64.0, 1.0, 1.0, L)


def test_mkdv_self_convergence(smooth_field):
    q = smooth_field(5, n=128)
    ref = mkdv_evolve(q, 0.1, 1.25e-4, L)
    errs = [np.abs(mkdv_evolve(q, 0.1, dt, L) - ref).max() for dt in (2e-3, 1e-3, 5e-4)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 3.5)


def test_kink_velocity():
    Lk, n, a = 16.0, 512, 1.0
    x = spectral.grid(n, Lk)
    q0 = a * (np.tanh(a * x) - np.tanh(a * (x - Lk)) - np.tanh(a * (x + Lk)))
    traj = mkdv_flow(q0, 0.1, 1e-3, Lk, record_every=10)
    for t, snap in zip(traj.times, traj.snapshots):
        exact = spectral.translate(q0, Lk, 2 * a * a * t)
        assert np.abs(snap - exact).max() < 1e-6


def test_mkdv_alpha_drift(smooth_field):
    q = smooth_field(6, n=128)
    traj = mkdv_flow(q, 0.1, 1e-4, L, record_every=100, ledger_kappas=(4.0, 16.0))
    drift = traj.check_ledger()
    assert drift["A@4"] < 1e-6 and drift["A@16"] < 1e-6


def test_mkdv_step_rejection():
    q = 50.0 * np.sin(spectral.grid(64, L))
    with pytest.raises(StepRejected):
        mkdv_step(q, 1e-2, L)


def test_commutation_trivial_cases(smooth_field):
    q = smooth_field(7, n=64)
    assert flow_commutation(q, 8.0, 8.0, 0.01, 0.01, 1e-3, L) < 1e-12
    assert flow_commutation(np.full(64, 0.3), 8.0, 16.0, 0.01, 0.01, 1e-3, L) == 0.0


@pytest.mark.parametrize("seed", range(2))
def test_commutation_smooth(smooth_field, seed):
    q = smooth_field(seed, n=128)
    assert flow_commutation(q, 8.0, 16.0, 0.05, 0.05, 1e-3, L) < 1e-6


def test_kappa_convergence_trivial():
    for q in (np.zeros(64), np.full(64, 0.5)):
        curve = kappa_convergence(q, 0.02, (4.0, 8.0), L, n_checkpoints=2)
        assert np.all(curve.errors < 1e-12)


def test_green_residual_constant_is_zero():
    traj = mkdv_flow(np.full(64, 0.4), 0.01, 1e-3, L)
    rep = green_residual_mkdv(traj, 8.0)
    assert rep.worst < 1e-13


def test_green_residual_mkdv_smooth(smooth_field):
    traj = mkdv_flow(smooth_field(8, n=128), 0.1, 1e-3, L)
    rep = green_residual_mkdv(traj, 8.0)
    assert rep.worst < 1e-5
    assert rep.window == (0.0, pytest.approx(0.1))


@pytest.mark.parametrize("probe", [4.0, 16.0])
def test_green_residual_hk_smooth(smooth_field, probe):
    traj = hk_flow(smooth_field(9, n=128), 8.0, 0.1, 1e-3, L)
    rep = green_residual_hk(traj, probe)
    assert set(rep.residuals) == {"gplus", "gminus", "gamma"}
    assert rep.worst < 1e-5


def test_green_residual_hk_rejects_equal_probe(smooth_field):
    traj = hk_flow(smooth_field(9, n=64), 8.0, 0.005, 1e-3, L)
    with pytest.raises(ValueError):
        green_residual_hk(traj, 8.0)
    with pytest.raises(ValueError):
        green_residual_hk(mkdv_flow(smooth_field(9, n=64), 0.005, 1e-3, L), 4.0)


def test_gamma_cancellation_trivial_and_constant():
    assert np.all(gamma_cancellation(np.zeros((3, 64)), (8, 16), 4.0).mean_norm == 0)
    c, kappas = 0.9, np.array([8.0, 16.0, 32.0, 64.0])
    curve = gamma_cancellation(np.full((2, 64), c), kappas, 4.0)
    closed = kappas**2 * (kappas / np.hypot(kappas, c) - 1) + 0.5 * c * c
    x = spectral.grid(64, 4.0)
    w = window_weight(x)
    expected = np.abs(closed) * np.sqrt(8.0 / 64 * np.sum(w * w))
    np.testing.assert_allclose(curve.mean_norm, expected, rtol=1e-6)
    # kappa^-2 decay
    assert curve.mean_norm[-2] / curve.mean_norm[-1] == pytest.approx(4.0, rel=0.01)


def test_trajectory_save(smooth_field, tmp_path):
    traj = hk_flow(smooth_field(10, n=32), 8.0, 0.005, 1e-3, L, ledger_kappas=(4.0,))
    out = traj.save(tmp_path / "run", seed=3)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 3 and manifest["kind"] == "hk" and manifest["n_snapshots"] == 6
    rows = (out / "snapshots.csv").read_text().splitlines()
    assert len(rows) == 7 and rows[0].startswith("t,")
    assert (out / "ledger.csv").exists()


def test_trajectory_flagged_when_drift_exceeds_tolerance(smooth_field):
    traj = mkdv_flow(smooth_field(11, n=64, amplitude=2.0), 0.01, 1e-3, L, tolerance=1e-300)
    assert traj.flagged


def test_estimators(smooth_field):
    X = np.stack([smooth_field(s, n=64) for s in range(2)])
    out = HkFlow(kappa=8.0, half_period=L, time=0.01, dt=1e-3).fit(X).transform(X)
    assert out.shape == X.shape
    np.testing.assert_allclose(mass(out, L), mass(X, L), rtol=1e-12)
    out2 = MkdvFlow(half_period=L, time=0.01, dt=1e-4).fit_transform(X)
    assert out2.shape == X.shape


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 1000), kappa=st.sampled_from([4.0, 8.0, 16.0]))
def test_translation_covariance(seed, kappa):
    rng = np.random.default_rng(seed)
    x = spectral.grid(64, L)
    q = 0.8 * np.tanh(rng.normal(size=3) @ np.array([np.cos(x), np.sin(x), np.cos(2 * x)]))
    a = hk_step(np.roll(q, 3), kappa, 2e-3, L)
    b = np.roll(hk_step(q, kappa, 2e-3, L), 3)
    assert np.abs(a - b).max() < 1e-11
    assert alpha(a, kappa, L) == pytest.approx(alpha(q, kappa, L), rel=1e-6)
