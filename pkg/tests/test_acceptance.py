"""Acceptance criteria 1-11, each at its stated tolerance.

Every test records a one-line verdict (see ``acceptance`` in conftest) that
is printed in the pytest summary, then asserts it.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from mkdvlab import spectral
from mkdvlab.conserved import (
    alpha,
    alpha_gradient_check,
    alpha_kappa_derivative_check,
    constant_alpha,
)
from mkdvlab.flows import (
    flow_commutation,
    gamma_cancellation,
    hk_evolve,
    hk_flow,
    kappa_convergence,
    mkdv_evolve,
    mkdv_flow,
)
from mkdvlab.gibbs import GibbsSampler
from mkdvlab.greens import (
    check_identities,
    constant_field_greens,
    diag_greens,
    diag_greens_oracle,
    resolvent_matrix,
)
from mkdvlab.harness import load, run
from mkdvlab.harness.experiments import kms_check, mixing_rate
from mkdvlab.lattice import smooth_random_field
from mkdvlab.oscillator import OscillatorSpec, build_spectrum, collapse_rate, semigroup_residual

CONFIGS = Path(__file__).parent.parent / "configs"
PI = np.pi


def _fields(count, n, half_period=PI, modes=8, amplitude=2.0, seed=0):
    return [smooth_random_field(np.random.default_rng([seed, i]), n, half_period, modes, amplitude)
            for i in range(count)]


def test_criterion_01_oscillator(acceptance):
    t0 = time.perf_counter()
    harm = build_spectrum(OscillatorSpec(0.0, 10.0, 400, n_eigs=10), potential=lambda y: 0.5 * y * y)
    eig_err = float(np.abs(harm.lambdas - np.arange(10)).max())
    sd = build_spectrum(OscillatorSpec())
    semi = semigroup_residual(sd, 0.3, 0.5)
    rate = collapse_rate(sd)
    rel = abs(rate - sd.gap) / sd.gap
    elapsed = time.perf_counter() - t0
    ok = eig_err < 1e-6 and semi < 1e-8 and rel < 0.05 and elapsed < 30
    assert acceptance(1, "oscillator", ok,
                      f"eig_err={eig_err:.1e} semigroup={semi:.1e} collapse_rel={rel:.3f} t={elapsed:.1f}s")


def test_criterion_02_greens(acceptance):
    t0 = time.perf_counter()
    kappa = 8.0
    route_gap = ident = 0.0
    margin = np.inf
    for q in _fields(20, 512):
        fp = diag_greens(q, PI, kappa)
        oracle = diag_greens_oracle(resolvent_matrix(q, PI, kappa))
        route_gap = max(route_gap, *(float(np.abs(getattr(fp, c) - getattr(oracle, c)).max())
                                     for c in ("gamma", "gplus", "gminus")))
        ident = max(ident, *(r["sup"] for r in check_identities(fp, q).values()))
        margin = min(margin, fp.inequality_margin())
    const = 0.0
    for c in (0.25, 0.5, 1.0, 2.0, 4.0):
        dg = diag_greens(np.full(512, c), PI, kappa)
        g, gp, gm = constant_field_greens(c, kappa)
        assert g == pytest.approx(kappa / np.hypot(kappa, c) - 1) and gp == 0
        assert gm == pytest.approx(c / np.hypot(kappa, c))
        const = max(const, *(float(np.abs(v - e).max()) for v, e in
                             ((dg.gamma, g), (dg.gplus, gp), (dg.gminus, gm))))
    elapsed = time.perf_counter() - t0
    ok = route_gap < 1e-6 and ident < 1e-6 and margin > 0 and const < 1e-8 and elapsed < 300
    assert acceptance(2, "green's functions", ok,
                      f"routes={route_gap:.1e} identities={ident:.1e} ineq_margin={margin:.2e} "
                      f"constant={const:.1e} t={elapsed:.0f}s")


def test_criterion_03_conserved(acceptance):
    checks = []
    for i, q in enumerate(_fields(3, 128, amplitude=1.5, modes=6, seed=3)):
        for kappa in (4.0, 8.0, 16.0):
            # kappa derivative is held to the stricter pure relative 1e-6
            checks.append(alpha_kappa_derivative_check(q, kappa, PI))
            dirs = np.stack(_fields(3, 128, modes=6, amplitude=1.0, seed=100 + i))
            checks += alpha_gradient_check(q, kappa, dirs, PI, atol=1e-6, rtol=1e-4)
    worst_fd = max(c.error / (c.atol + c.rtol * abs(c.analytic)) for c in checks)
    const = max(abs(alpha(np.full(64, c), k, L) - constant_alpha(c, k, L))
                for c in (0.3, 1.0, 2.5) for k in (4.0, 8.0, 16.0) for L in (PI, 4.0))
    ok = all(c.passes for c in checks) and const < 1e-8
    assert acceptance(3, "conserved quantities", ok,
                      f"fd_worst/tol={worst_fd:.1e} constant_A={const:.1e} n_checks={len(checks)}")


def test_criterion_04_hk_flow(acceptance):
    drift_worst = comm_worst = 0.0
    for q in _fields(3, 128, modes=4, amplitude=1.0, seed=4):
        traj = hk_flow(q, 8.0, 0.1, 1e-3, PI, ledger_kappas=(4.0, 8.0, 16.0))
        assert len(traj.times) == 101
        drift_worst = max(drift_worst, max(traj.check_ledger().values()))
        comm_worst = max(comm_worst, flow_commutation(q, 8.0, 16.0, 0.05, 0.05, 1e-3, PI))
    fixed = 0.0
    for c in (0.0, 0.5, 1.5):
        qc = np.full(128, c)
        fixed = max(fixed, float(np.abs(hk_evolve(qc, 8.0, 0.01, 1e-3, PI) - qc).max()))
    ok = drift_worst < 1e-6 and comm_worst < 1e-6 and fixed == 0.0
    assert acceptance(4, "H_kappa flow", ok,
                      f"drift={drift_worst:.1e} commutation={comm_worst:.1e} constant_motion={fixed:.0e}")


def test_criterion_05_mkdv(acceptance):
    q = _fields(1, 128, modes=4, amplitude=1.0, seed=5)[0]
    ref = mkdv_evolve(q, 0.1, 1.25e-4, PI)
    errs = np.array([np.abs(mkdv_evolve(q, 0.1, dt, PI) - ref).max() for dt in (2e-3, 1e-3, 5e-4)])
    orders = np.log2(errs[:-1] / errs[1:])
    Lk, n, a = 16.0, 512, 1.0
    x = spectral.grid(n, Lk)
    kink = a * (np.tanh(a * x) - np.tanh(a * (x - Lk)) - np.tanh(a * (x + Lk)))
    traj = mkdv_flow(kink, 0.1, 1e-3, Lk, record_every=10)
    kink_err = max(float(np.abs(s - spectral.translate(kink, Lk, 2 * a * a * t)).max())
                   for t, s in zip(traj.times, traj.snapshots))
    smooth = mkdv_flow(q, 0.1, 1e-4, PI, record_every=100, ledger_kappas=(4.0, 8.0, 16.0))
    a_drift = max(v for k, v in smooth.check_ledger().items() if k.startswith("A@"))
    ok = np.all(orders > 3.5) and kink_err < 1e-6 and a_drift < 1e-6
    assert acceptance(5, "mKdV reference", ok,
                      f"orders={np.round(orders, 2).tolist()} kink={kink_err:.1e} A_drift={a_drift:.1e}")


def test_criterion_06_kappa_convergence(acceptance):
    curves = [kappa_convergence(q, 0.1, (4.0, 8.0, 16.0, 32.0), PI)
              for q in _fields(2, 128, modes=4, amplitude=1.0, seed=6)]
    ok = all(c.strictly_decreasing for c in curves)
    assert acceptance(6, "kappa -> infinity", ok,
                      " | ".join(" ".join(f"{e:.1e}" for e in c.errors) for c in curves))


@pytest.mark.slow
def test_criterion_07_invariance(acceptance, tmp_path):
    t0 = time.perf_counter()
    cfg = load(CONFIGS / "invariance.json").with_overrides(output_dir=tmp_path)
    _, summary = run(cfg)
    elapsed = time.perf_counter() - t0
    checks = summary["checks"]
    stats_ok = all(s["passes"] for s in summary["statistics"])
    control = checks["control_scaled_nonlinearity"]["passes"]
    n_char = sum(s["name"].startswith("char_") for s in summary["statistics"])
    ok = summary["passes"] and stats_ok and control and n_char >= 5 and elapsed < 1800
    worst = min(s["p_value"] for s in summary["statistics"])
    assert acceptance(7, "invariance", ok,
                      f"min_p={worst:.2f} alpha={summary['statistics'][0]['alpha']:.1e} "
                      f"control_rejects={control} t={elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_08_kms(acceptance):
    cfg = load(CONFIGS / "kms.json")
    assert cfg.ensemble_size == 100_000
    report = kms_check(cfg)
    worst = min(s.p_value for s in report.statistics)
    ok = report.passes and len(report.statistics) == 30
    assert acceptance(8, "KMS identity", ok, f"tests={len(report.statistics)} min_p={worst:.3f}")


@pytest.mark.slow
def test_criterion_09_mixing(acceptance):
    fit = mixing_rate(load(CONFIGS / "sample.json"))
    ok = fit.relative_error <= 0.15
    assert acceptance(9, "mixing", ok,
                      f"rate={fit.rate:.4f} lambda1={fit.lambda1:.4f} rel={fit.relative_error:.3f}")


@pytest.mark.slow
def test_criterion_10_cancellation(acceptance):
    q = GibbsSampler(half_period=4.0, n_sites=128).fit().sample(1000, seed=10)
    curve = gamma_cancellation(q, (8.0, 16.0, 32.0, 64.0), 4.0)
    ok = curve.strictly_decreasing
    assert acceptance(10, "cancellation", ok, np.array2string(curve.mean_norm, precision=4))


@pytest.mark.slow
def test_criterion_11_miura_kdv(acceptance, tmp_path):
    cfg = load(CONFIGS / "kdv.json").with_overrides(output_dir=tmp_path)
    assert cfg.ensemble_size == 10_000
    _, summary = run(cfg)
    c = summary["checks"]
    names = ("hplus_semidefinite", "kdv_residual_smooth", "kdv_residual_halving", "miura_certificate",
             "white_noise_separated", "cauchy_schwarz")
    ok = all(c[k]["passes"] for k in names)
    ladder = np.array(c["kdv_residual_halving"]["value"])
    assert acceptance(11, "Miura/KdV", ok,
                      f"hplus_margin={c['hplus_semidefinite']['value']:.1e} "
                      f"smooth={c['kdv_residual_smooth']['value']:.1e} ladder={np.array2string(ladder, precision=2)} "
                      f"separated={c['white_noise_separated']['value']} cs_margin={c['cauchy_schwarz']['value']:.3f}")
