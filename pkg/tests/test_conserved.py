import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mkdvlab import spectral
from mkdvlab.conserved import (
    ConservationLedger,
    alpha,
    alpha_gradient_check,
    alpha_kappa_derivative_check,
    constant_alpha,
    constant_alpha_dc,
    constant_hk,
    h_mkdv,
    hk_hamiltonian,
    mass,
    relative_drift,
)
from mkdvlab.lattice import LatticeField


def test_mass_trivial_cases():
    L = 3.0
    assert mass(np.zeros(32), L) == 0.0
    assert mass(np.full(32, 1.5), L) == pytest.approx(1.5**2 * L, rel=1e-15)


def test_mass_of_sine():
    L = 2.5
    f = LatticeField.from_function(lambda x: np.sin(np.pi * x / L), 64, L)
    assert mass(f) == pytest.approx(L / 2, abs=1e-12)


def test_alpha_zero_and_constant():
    L, kappa = 4.0, 8.0
    assert alpha(np.zeros(32), kappa, L) == 0.0
    for c in (0.5, 1.0, 2.0):
        assert alpha(np.full(64, c), kappa, L) == pytest.approx(constant_alpha(c, kappa, L), abs=1e-8)
        assert hk_hamiltonian(np.full(64, c), kappa, L) == pytest.approx(constant_hk(c, kappa, L), abs=1e-6)
    assert hk_hamiltonian(np.zeros(16), kappa, L) == 0.0


def test_alpha_kappa_derivative(smooth_field):
    q = smooth_field(0, n=128, amplitude=1.5)
    for kappa in (4.0, 8.0, 16.0):
        chk = alpha_kappa_derivative_check(q, kappa, np.pi)
        assert chk.passes, chk


def test_alpha_gradient_random_directions(smooth_field):
    q = smooth_field(1, n=128)
    dirs = np.stack([smooth_field(10 + j, n=128) for j in range(5)])
    checks = alpha_gradient_check(q, 8.0, dirs, np.pi)
    assert all(c.passes for c in checks)
    assert len(checks) == 5


def test_alpha_gradient_zero_direction(smooth_field):
    chk = alpha_gradient_check(smooth_field(2, n=64), 8.0, np.zeros(64), np.pi)[0]
    assert chk.analytic == 0.0 and np.all(chk.finite_diff == 0.0)


def test_alpha_gradient_constant_field():
    L, kappa, c, n = 2.0, 8.0, 0.7, 64
    chk = alpha_gradient_check(np.full(n, c), kappa, np.ones(n), L)[0]
    assert chk.analytic == pytest.approx(constant_alpha_dc(c, kappa, L), abs=1e-10)
    assert chk.passes


def test_alpha_translation_invariance(smooth_field):
    q = smooth_field(4, n=64)
    a = alpha(q, 8.0, np.pi)
    for shift in (1, 7, 33):
        assert alpha(np.roll(q, shift), 8.0, np.pi) == pytest.approx(a, rel=1e-13)


def test_alpha_decays_in_kappa(smooth_field):
    q = smooth_field(5, n=64)
    vals = np.array([alpha(q, k, np.pi) for k in (8, 16, 32, 64)])
    assert np.all(np.diff(vals) < 0)
    # O(1/kappa)
    assert vals[-2] / vals[-1] == pytest.approx(2.0, rel=0.05)


def test_hamiltonian_approaches_mkdv(smooth_field):
    q = smooth_field(6, n=128)
    target = h_mkdv(q, np.pi)
    gaps = [abs(hk_hamiltonian(q, k, np.pi) - target) for k in (4, 8, 16, 32)]
    assert np.all(np.diff(gaps) < 0)


def test_relative_drift_definition():
    v = np.array([2.0, 2.5, 1.0])
    np.testing.assert_allclose(relative_drift(v), [0.0, 0.5 / 3, 1.0 / 3])


def test_ledger_columns_and_csv(smooth_field, tmp_path):
    q = smooth_field(7, n=64)
    led = ConservationLedger(np.pi, (4.0, 16.0), (8.0,))
    led.record(0.0, q)
    led.record(0.1, q)
    cols = led.columns()
    assert list(cols) == ["t", "M", "A@4", "A@16", "H@8"]
    assert all(v == 0 for v in led.max_drift().values())
    led.to_csv(tmp_path / "ledger.csv")
    header = (tmp_path / "ledger.csv").read_text().splitlines()[0].split(",")
    assert header[-1] == "drift_H@8"


def test_nonconverged_alpha_raises(smooth_field):
    from mkdvlab.greens import diag_greens

    q = smooth_field(0, amplitude=2.0)
    dg = diag_greens(q, np.pi, 2.0, max_iter=2)
    with pytest.raises(RuntimeError):
        alpha(q, 2.0, np.pi, dg=dg)


@settings(max_examples=20, deadline=None)
@given(c=st.floats(-3.0, 3.0), kappa=st.floats(1.0, 40.0))
def test_constant_alpha_derivative_closed_form(c, kappa):
    eps = 1e-6
    fd = (constant_alpha(c + eps, kappa, 1.0) - constant_alpha(c - eps, kappa, 1.0)) / (2 * eps)
    assert constant_alpha_dc(c, kappa, 1.0) == pytest.approx(fd, abs=1e-6)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_denominator_at_least_one(seed):
    rng = np.random.default_rng(seed)
    x = spectral.grid(64, np.pi)
    q = rng.normal(size=4) @ np.array([np.cos(x), np.sin(x), np.cos(2 * x), np.sin(3 * x)])
    from mkdvlab.greens import diag_greens

    dg = diag_greens(q, np.pi, 8.0)
    assert np.all(2.0 + dg.gamma >= 1.0)
