"""H_kappa flows, the mKdV reference integrator and their diagnostics.

The H_kappa vector field 4 kappa^2 q' + 8 kappa^4 gplus splits into the
Fourier multiplier

    Lambda(k) = i k * 4 kappa^2 k^2 / (4 kappa^2 + k^2)

(translation plus the part of gplus that is linear in q) and the remainder
8 kappa^4 m_plus * (q gamma)^. The linear part is integrated exactly and the
remainder by two-stage Gauss-Legendre collocation in the interaction
picture, solved by Picard iteration. With gamma = 0 this is the translation
Duhamel formula with Gauss quadrature; keeping the linear part of gplus in
the exponential makes the scheme symmetric, symplectic and far less stiff.

mKdV  q_t = -q''' + 6 q^2 q'  is stepped with integrating-factor RK4 and
2/3-rule dealiasing; it is meant for smooth fields only.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from . import spectral
from .conserved import ConservationLedger
from .greens import ContractionError, _multipliers, diag_greens
from .lattice import LatticeField, check_ensemble, unpack

log = logging.getLogger(__name__)

PICARD_TOL = 1e-12
PICARD_MAX_ITER = 60
MAX_HALVINGS = 6
MKDV_INCREMENT_LIMIT = 0.5

_SQ3 = np.sqrt(3.0) / 6.0
GAUSS_C = np.array([0.5 - _SQ3, 0.5 + _SQ3])
GAUSS_A = np.array([[0.25, 0.25 - _SQ3], [0.25 + _SQ3, 0.25]])
GAUSS_B = np.array([0.5, 0.5])


class PicardError(RuntimeError):
    """Picard iteration failed to contract even after halving the step."""


class StepRejected(RuntimeError):
    pass


def _l2(f: np.ndarray, half_period: float) -> np.ndarray:
    return np.sqrt(2.0 * half_period / f.shape[-1] * np.sum(f * f, axis=-1))


# ------------------------------------------------------------ H_kappa


def hk_symbol(n: int, half_period: float, kappa: float) -> np.ndarray:
    """Linear part of the H_kappa vector field as an rfft multiplier."""
    k = spectral.wavenumbers(n, half_period)
    kodd = spectral.odd_wavenumbers(n, half_period)
    return 1j * kodd * 4.0 * kappa**2 * k**2 / (4.0 * kappa**2 + k**2)


def hk_vector_field(q, kappa: float, half_period: float | None = None) -> np.ndarray:
    """4 kappa^2 q' + 8 kappa^4 gplus evaluated directly."""
    q, L = unpack(q, half_period)
    dg = diag_greens(q, L, kappa)
    return 4.0 * kappa**2 * spectral.derivative(q, L) + 8.0 * kappa**4 * dg.gplus


class _HkStepper:
    """Collocation stepper; the two scale factors exist for negative controls.

    ``gplus_scale`` multiplies the whole 8 kappa^4 gplus term and
    ``nonlinear_scale`` only its part beyond linear order in q.
    """

    def __init__(self, n: int, half_period: float, kappa: float,
                 gplus_scale: float = 1.0, nonlinear_scale: float = 1.0):
        self.n, self.half_period, self.kappa = n, half_period, kappa
        m_plus = 8.0 * kappa**4 * _multipliers(n, half_period, kappa)[1]
        kodd = spectral.odd_wavenumbers(n, half_period)
        self.symbol = 4.0 * kappa**2 * 1j * kodd + gplus_scale * m_plus
        self.m_plus = gplus_scale * nonlinear_scale * m_plus

    def nonlinear_hat(self, q: np.ndarray, gamma0: np.ndarray | None):
        dg = diag_greens(q, self.half_period, self.kappa, tol=PICARD_TOL, gamma0=gamma0)
        if not dg.converged:
            raise ContractionError("Green's functions did not converge at a Picard stage")
        return self.m_plus * spectral.rfft(q * dg.gamma), dg.gamma

    def try_step(self, q: np.ndarray, dt: float, gammas: list | None = None):
        """One collocation step; returns (q_new, iterations, stage gammas)."""
        n = self.n
        qh = spectral.rfft(q)
        lin = [np.exp(c * dt * self.symbol) for c in GAUSS_C]
        cross = [[np.exp((ci - cj) * dt * self.symbol) for cj in GAUSS_C] for ci in GAUSS_C]
        stages = [spectral.irfft(e * qh, n) for e in lin]
        gammas = list(gammas) if gammas is not None else [None, None]
        prev = np.inf
        for it in range(1, PICARD_MAX_ITER + 1):
            nl = []
            for j in range(2):
                nh, gammas[j] = self.nonlinear_hat(stages[j], gammas[j])
                nl.append(nh)
            new = [
                spectral.irfft(lin[i] * qh + dt * sum(GAUSS_A[i, j] * cross[i][j] * nl[j] for j in range(2)), n)
                for i in range(2)
            ]
            inc = max(float(np.abs(new[i] - stages[i]).max()) for i in range(2))
            stages = new
            if inc < PICARD_TOL:
                break
            if it >= 3 and inc > 0.9 * prev or not np.isfinite(inc):
                raise PicardError(f"Picard increment {inc:.2e} not contracting at dt = {dt:g}")
            prev = inc
        else:
            raise PicardError(f"Picard did not reach {PICARD_TOL:g} in {PICARD_MAX_ITER} iterations")
        # the update reuses the last stage nonlinearities (consistent to the tolerance)
        nl = [self.nonlinear_hat(stages[j], gammas[j])[0] for j in range(2)]
        full = np.exp(dt * self.symbol)
        out = full * qh + dt * sum(
            GAUSS_B[j] * np.exp((1.0 - GAUSS_C[j]) * dt * self.symbol) * nl[j] for j in range(2)
        )
        return spectral.irfft(out, n), it, gammas

    def step(self, q: np.ndarray, dt: float, depth: int = 0):
        try:
            q_new, it, _ = self.try_step(q, dt)
            return q_new, it
        except (PicardError, ContractionError) as exc:
            if depth >= MAX_HALVINGS:
                raise PicardError(f"step failed after {MAX_HALVINGS} halvings: {exc}") from exc
            log.info("halving dt = %g (%s)", dt, exc)
            q_mid, i1 = self.step(q, 0.5 * dt, depth + 1)
            q_new, i2 = self.step(q_mid, 0.5 * dt, depth + 1)
            return q_new, i1 + i2


def hk_step(q, kappa: float, dt: float, half_period: float | None = None):
    """Advance by one H_kappa step; returns the same type as ``q``.

    ``q`` may be an ensemble; all members share the step size.
    """
    values, L = unpack(q, half_period)
    q_new, _ = _HkStepper(values.shape[-1], L, kappa).step(values, dt)
    return LatticeField(L, q_new) if isinstance(q, LatticeField) else q_new


def hk_evolve(q, kappa: float, time: float, dt: float, half_period: float | None = None,
              gplus_scale: float = 1.0, nonlinear_scale: float = 1.0) -> np.ndarray:
    """Evolve a field or an ensemble to ``time`` with nominal step ``dt``.

    The scale factors perturb the vector field (see ``_HkStepper``) and are
    meant for negative controls only.
    """
    values, L = unpack(q, half_period)
    if time == 0:
        return values.copy()
    steps = max(1, int(np.ceil(abs(time) / dt - 1e-9)))
    h = time / steps
    stepper = _HkStepper(values.shape[-1], L, kappa, gplus_scale, nonlinear_scale)
    out = values
    for _ in range(steps):
        out, _ = stepper.step(out, h)
    return out


# ------------------------------------------------------------ mKdV


def _dealias_mask(n: int) -> np.ndarray:
    idx = np.arange(n // 2 + 1)
    return (idx <= n // 3).astype(float)


class _MkdvStepper:
    def __init__(self, n: int, half_period: float):
        self.n, self.half_period = n, half_period
        k = spectral.odd_wavenumbers(n, half_period)
        self.symbol = 1j * k**3
        self.ik = 1j * k * _dealias_mask(n)

    def nonlinear_hat(self, qh: np.ndarray) -> np.ndarray:
        q = spectral.irfft(qh, self.n)
        return 2.0 * self.ik * spectral.rfft(q**3)

    def step(self, q: np.ndarray, dt: float) -> np.ndarray:
        qh = spectral.rfft(q)
        half = np.exp(0.5 * dt * self.symbol)
        k1 = self.nonlinear_hat(qh)
        inc = np.abs(spectral.irfft(dt * k1, self.n)).max()
        if inc > MKDV_INCREMENT_LIMIT * (1.0 + np.abs(q).max()):
            raise StepRejected(f"nonlinear increment {inc:.2e} too large for dt = {dt:g}")
        k2 = self.nonlinear_hat(half * (qh + 0.5 * dt * k1))
        k3 = self.nonlinear_hat(half * qh + 0.5 * dt * k2)
        k4 = self.nonlinear_hat(half * half * qh + dt * half * k3)
        out = half * half * qh + dt / 6.0 * (half * half * k1 + 2.0 * half * (k2 + k3) + k4)
        return spectral.irfft(out, self.n)


def mkdv_step(q, dt: float, half_period: float | None = None):
    values, L = unpack(q, half_period)
    q_new = _MkdvStepper(values.shape[-1], L).step(values, dt)
    return LatticeField(L, q_new) if isinstance(q, LatticeField) else q_new


def mkdv_evolve(q, time: float, dt: float, half_period: float | None = None) -> np.ndarray:
    values, L = unpack(q, half_period)
    if time == 0:
        return values.copy()
    steps = max(1, int(np.ceil(abs(time) / dt - 1e-9)))
    h = time / steps
    stepper = _MkdvStepper(values.shape[-1], L)
    out = values
    for _ in range(steps):
        out = stepper.step(out, h)
    return out


# ------------------------------------------------------------ trajectories


@dataclass
class FlowTrajectory:
    """Snapshots of one flow on a fixed grid.

    ``kind`` is ``"hk"`` or ``"mkdv"``; ``kappa`` is None for mKdV.
    ``snapshots`` has shape (n_times, n_sites).
    """

    kind: str
    kappa: float | None
    dt: float
    half_period: float
    times: np.ndarray
    snapshots: np.ndarray
    ledger: ConservationLedger | None = None
    picard_iterations: list[int] = field(default_factory=list)
    tolerance: float = 1e-6
    flagged: bool = False

    @property
    def final(self) -> LatticeField:
        return LatticeField(self.half_period, self.snapshots[-1])

    def check_ledger(self) -> dict[str, float]:
        if self.ledger is None:
            return {}
        drift = self.ledger.max_drift()
        self.flagged = any(v > self.tolerance for v in drift.values())
        if self.flagged:
            log.warning("conservation drift above %g: %s", self.tolerance, drift)
        return drift

    def save(self, directory, seed: int | None = None) -> Path:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        x = spectral.grid(self.snapshots.shape[-1], self.half_period)
        with open(out / "snapshots.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [repr(float(v)) for v in x])
            for t, row in zip(self.times, self.snapshots):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
        if self.ledger is not None:
            self.ledger.to_csv(out / "ledger.csv")
        manifest = {
            "kind": self.kind,
            "kappa": self.kappa,
            "dt": self.dt,
            "half_period": self.half_period,
            "n_sites": int(self.snapshots.shape[-1]),
            "n_snapshots": int(self.snapshots.shape[0]),
            "seed": seed,
            "picard_tol": PICARD_TOL,
            "conservation_tol": self.tolerance,
            "flagged": self.flagged,
            "max_drift": self.check_ledger(),
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
        return out


def _run(kind, stepper_call, q0, L, kappa, dt, time, record_every, ledger, tolerance):
    q = check_ensemble(q0).copy()
    steps = max(1, int(np.ceil(abs(time) / dt - 1e-9))) if time else 0
    h = time / steps if steps else dt
    times, snaps, iters = [0.0], [q.copy()], []
    if ledger is not None:
        ledger.record(0.0, q)
    for s in range(1, steps + 1):
        q, it = stepper_call(q, h)
        iters.append(it)
        if s % record_every == 0 or s == steps:
            t = s * h
            times.append(t)
            snaps.append(q.copy())
            if ledger is not None:
                ledger.record(t, q)
    traj = FlowTrajectory(kind, kappa, h, L, np.array(times), np.array(snaps), ledger, iters, tolerance)
    traj.check_ledger()
    return traj


def hk_flow(
    q0,
    kappa: float,
    time: float,
    dt: float,
    half_period: float | None = None,
    record_every: int = 1,
    ledger_kappas=(),
    tolerance: float = 1e-6,
) -> FlowTrajectory:
    values, L = unpack(q0, half_period)
    stepper = _HkStepper(values.shape[-1], L, kappa)
    ledger = ConservationLedger(L, tuple(ledger_kappas), (kappa,)) if values.ndim == 1 else None
    return _run("hk", stepper.step, values, L, kappa, dt, time, record_every, ledger, tolerance)


def mkdv_flow(
    q0,
    time: float,
    dt: float,
    half_period: float | None = None,
    record_every: int = 1,
    ledger_kappas=(),
    tolerance: float = 1e-6,
) -> FlowTrajectory:
    values, L = unpack(q0, half_period)
    stepper = _MkdvStepper(values.shape[-1], L)
    ledger = ConservationLedger(L, tuple(ledger_kappas)) if values.ndim == 1 else None
    return _run("mkdv", lambda q, h: (stepper.step(q, h), 0), values, L, None, dt, time, record_every,
                ledger, tolerance)


# ------------------------------------------------------------ diagnostics


def flow_commutation(q0, kappa: float, kappa2: float, t: float, s: float, dt: float,
                     half_period: float | None = None) -> float:
    """L2 norm of Phi_kappa(t) Phi_kappa2(s) q0 - Phi_kappa2(s) Phi_kappa(t) q0."""
    q, L = unpack(q0, half_period)
    a = hk_evolve(hk_evolve(q, kappa2, s, dt, L), kappa, t, dt, L)
    b = hk_evolve(hk_evolve(q, kappa, t, dt, L), kappa2, s, dt, L)
    return float(_l2(a - b, L))


@dataclass(frozen=True)
class ConvergenceCurve:
    kappas: np.ndarray
    errors: np.ndarray
    reference_error: float

    @property
    def strictly_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.errors) < 0))


def kappa_convergence(
    q0,
    time: float,
    kappas,
    half_period: float | None = None,
    dt_hk: float = 1e-3,
    dt_mkdv: float = 1e-4,
    n_checkpoints: int = 10,
    reference_tol: float = 1e-9,
) -> ConvergenceCurve:
    """sup over checkpoints of ||Phi_kappa(t) q0 - Phi_mKdV(t) q0||_2 per kappa.

    The mKdV reference is accepted only if halving its step changes it by
    less than ``reference_tol``.
    """
    q, L = unpack(q0, half_period)
    ts = np.linspace(0.0, time, n_checkpoints + 1)[1:]
    ref, ref_fine = [], []
    a = b = q
    prev = 0.0
    for t in ts:
        a = mkdv_evolve(a, t - prev, dt_mkdv, L)
        b = mkdv_evolve(b, t - prev, 0.5 * dt_mkdv, L)
        ref.append(a)
        ref_fine.append(b)
        prev = t
    ref_err = max(float(_l2(x - y, L)) for x, y in zip(ref, ref_fine))
    if ref_err > reference_tol:
        raise RuntimeError(f"mKdV reference unresolved: step-halving change {ref_err:.2e}")
    errors = []
    for kappa in kappas:
        cur, prev, worst = q, 0.0, 0.0
        for t, r in zip(ts, ref_fine):
            cur = hk_evolve(cur, kappa, t - prev, dt_hk, L)
            worst = max(worst, float(_l2(cur - r, L)))
            prev = t
        errors.append(worst)
    return ConvergenceCurve(np.asarray(kappas, dtype=float), np.array(errors), ref_err)


@dataclass(frozen=True)
class GreenResidualReport:
    """H^{-2} residual norms of integrated Green's-function identities.

    ``residuals`` maps identity names to the largest residual over the time
    window; ``coarse`` holds the same with every other snapshot dropped, so
    that quadrature error can be separated from a genuine defect.
    """

    kappa_probe: float
    residuals: dict
    coarse: dict
    window: tuple[float, float]

    @property
    def worst(self) -> float:
        return max(self.residuals.values())


def _trapezoid_cumulative(f: np.ndarray, t: np.ndarray) -> np.ndarray:
    dt = np.diff(t)[:, None]
    inc = 0.5 * dt * (f[1:] + f[:-1])
    return np.concatenate([np.zeros_like(f[:1]), np.cumsum(inc, axis=0)])


def integrated_residual(values: np.ndarray, rates: np.ndarray, t: np.ndarray, half_period: float) -> float:
    """max_j ||values(t_j) - values(t_0) - int_{t_0}^{t_j} rates||_{H^-2}."""
    r = values - values[:1] - _trapezoid_cumulative(rates, t)
    return float(spectral.sobolev_norm(r, half_period, -2.0).max())


def _report(kappa, series: dict, t: np.ndarray, L: float) -> GreenResidualReport:
    full = {name: integrated_residual(v, r, t, L) for name, (v, r) in series.items()}
    if t.size >= 3:
        coarse = {name: integrated_residual(v[::2], r[::2], t[::2], L) for name, (v, r) in series.items()}
    else:
        coarse = dict(full)
    return GreenResidualReport(float(kappa), full, coarse, (float(t[0]), float(t[-1])))


def mkdv_green_rates(q: np.ndarray, kappa: float, half_period: float):
    """Right-hand sides of the mKdV evolution of gminus and gamma at ``kappa``."""
    L = half_period
    dg = diag_greens(q, L, kappa)
    d = lambda f, k=1: spectral.derivative(f, L, k)
    q2 = q * q
    rate_minus = -d(dg.gminus, 3) + 6.0 * q2 * d(dg.gminus)
    flux = 6.0 * q2 * (1.0 + dg.gamma) - 12.0 * kappa * q * dg.gminus - 12.0 * kappa**2 * dg.gamma
    rate_gamma = -d(dg.gamma, 3) + d(flux)
    return dg, rate_minus, rate_gamma


def green_residual_mkdv(traj: FlowTrajectory, kappa: float) -> GreenResidualReport:
    if kappa < 1:
        raise ValueError("probe kappa must be >= 1")
    dg, rm, rg = mkdv_green_rates(traj.snapshots, kappa, traj.half_period)
    series = {"gminus": (dg.gminus, rm), "gamma": (dg.gamma, rg)}
    return _report(kappa, series, traj.times, traj.half_period)


def hk_green_rates(q: np.ndarray, kappa: float, probe: float, half_period: float):
    """Right-hand sides of the H_kappa evolution of gplus, gminus, gamma at ``probe``."""
    if probe == kappa:
        raise ValueError("probe must differ from the flow parameter")
    L = half_period
    d = lambda f: spectral.derivative(f, L)
    a = diag_greens(q, L, kappa)
    b = diag_greens(q, L, probe)
    k2, p2 = kappa**2, probe**2
    cross = a.gplus * (1.0 + b.gamma) - (1.0 + a.gamma) * b.gplus
    rate_plus = 4.0 * k2 * d(b.gplus) + 4.0 * kappa**4 / (k2 - p2) * d(cross)
    rate_minus = 4.0 * k2 * d(b.gminus) - 8.0 * kappa**4 * probe / (k2 - p2) * cross
    rate_gamma = (
        4.0 * k2 * d(b.gamma)
        - 8.0 * kappa**5 * probe / (k2 - p2) ** 2 * d(a.gminus * b.gminus)
        + 4.0 * kappa**4 * (k2 + p2) / (k2 - p2) ** 2
        * d(a.gplus * b.gplus - a.gamma - b.gamma - a.gamma * b.gamma)
    )
    return b, rate_plus, rate_minus, rate_gamma


def green_residual_hk(traj: FlowTrajectory, probe: float) -> GreenResidualReport:
    if traj.kind != "hk":
        raise ValueError("trajectory is not an H_kappa flow")
    b, rp, rm, rg = hk_green_rates(traj.snapshots, traj.kappa, probe, traj.half_period)
    series = {"gplus": (b.gplus, rp), "gminus": (b.gminus, rm), "gamma": (b.gamma, rg)}
    return _report(probe, series, traj.times, traj.half_period)


def window_weight(x: np.ndarray, power: float = 8.0) -> np.ndarray:
    """<x>^{-power} centered at the origin of the torus."""
    return (1.0 + x * x) ** (-0.5 * power)


@dataclass(frozen=True)
class CancellationCurve:
    kappas: np.ndarray
    mean_norm: np.ndarray
    std_error: np.ndarray

    @property
    def strictly_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.mean_norm) < 0))


def gamma_cancellation(ensemble, kappas, half_period: float) -> CancellationCurve:
    """Ensemble mean of ||<x>^-8 (kappa^2 gamma + q^2 / 2)||_2 per kappa."""
    q = check_ensemble(ensemble)
    q = q.reshape(-1, q.shape[-1])
    x = spectral.grid(q.shape[-1], half_period)
    w = window_weight(x)
    means, errs = [], []
    for kappa in kappas:
        dg = diag_greens(q, half_period, kappa)
        norms = _l2(w * (kappa**2 * dg.gamma + 0.5 * q * q), half_period)
        means.append(norms.mean())
        errs.append(norms.std(ddof=1) / np.sqrt(len(norms)) if len(norms) > 1 else 0.0)
    return CancellationCurve(np.asarray(kappas, dtype=float), np.array(means), np.array(errs))


# ------------------------------------------------------------ estimators


class HkFlow(TransformerMixin, BaseEstimator):
    """Transformer evolving each row of ``X`` by the H_kappa flow to ``time``."""

    def __init__(self, kappa: float = 8.0, half_period: float = np.pi, time: float = 0.1, dt: float = 1e-3):
        self.kappa = kappa
        self.half_period = half_period
        self.time = time
        self.dt = dt

    def fit(self, X, y=None):
        self.n_features_in_ = check_array(X).shape[1]
        return self

    def transform(self, X):
        return hk_evolve(check_array(X), self.kappa, self.time, self.dt, self.half_period)


class MkdvFlow(TransformerMixin, BaseEstimator):
    """Transformer evolving smooth rows of ``X`` by mKdV to ``time``."""

    def __init__(self, half_period: float = np.pi, time: float = 0.1, dt: float = 1e-4):
        self.half_period = half_period
        self.time = time
        self.dt = dt

    def fit(self, X, y=None):
        self.n_features_in_ = check_array(X).shape[1]
        return self

    def transform(self, X):
        return mkdv_evolve(check_array(X), self.time, self.dt, self.half_period)
