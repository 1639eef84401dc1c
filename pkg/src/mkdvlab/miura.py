"""Miura map w = q' + q^2 and the Schrodinger-side diagnostics.

The lattice values of w use the spectral derivative and the pointwise
square, so that int w = int q^2 holds exactly. Operator-level quantities
(the H+ ground energy) use the exact Fourier coefficients of
w = q' + q^2 for the trigonometric interpolant of q, so no aliasing enters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from . import spectral
from .flows import FlowTrajectory, GreenResidualReport, _report
from .greens import DiagGreens, diag_greens
from .lattice import LatticeField, check_ensemble, unpack


@dataclass(frozen=True)
class KdvField:
    half_period: float
    values: np.ndarray
    source: np.ndarray | None = None

    @property
    def dx(self) -> float:
        return 2.0 * self.half_period / self.values.shape[-1]

    def mean_identity_error(self) -> np.ndarray:
        if self.source is None:
            raise ValueError("no source field attached")
        return self.dx * (np.sum(self.values, axis=-1) - np.sum(self.source**2, axis=-1))

    def fourier_coefficients(self) -> np.ndarray:
        """Coefficients w_k, k = -n..n, of e^{i k pi x / L} for a single field.

        With a source field these are exact for the interpolant of q;
        otherwise they are the lattice coefficients (|k| <= n/2).
        """
        if self.values.ndim != 1:
            raise ValueError("per-field quantity")
        n = self.values.size
        if self.source is None:
            c = np.fft.fft(self.values) / n
            c = np.fft.fftshift(c)  # k = -n/2 .. n/2 - 1
            out = np.zeros(2 * n + 1, dtype=complex)
            out[n - n // 2 : n + n // 2] = c
            return out
        return _exact_miura_coefficients(self.source, self.half_period)


def _interp_coefficients(q: np.ndarray) -> np.ndarray:
    """Coefficients c_k, k = -n/2..n/2, of the real interpolant (Nyquist split)."""
    n = q.size
    c = np.fft.fft(q) / n
    out = np.zeros(n + 1, dtype=complex)
    out[n // 2 :] = c[: n // 2 + 1]
    out[: n // 2] = c[n // 2 :]
    out[0] *= 0.5
    out[-1] = out[0]
    return out


def _exact_miura_coefficients(q: np.ndarray, half_period: float) -> np.ndarray:
    n = q.size
    c = _interp_coefficients(q)
    k = np.pi / half_period * np.arange(-n // 2, n // 2 + 1)
    sq = np.convolve(c, c)  # k = -n..n
    out = sq.copy()
    out[n // 2 : n // 2 + n + 1] += 1j * k * c
    return out


def miura(q, half_period: float | None = None) -> KdvField:
    values, L = unpack(q, half_period)
    w = spectral.derivative(values, L) + values * values
    return KdvField(L, w, values)


@dataclass(frozen=True)
class SchrodingerDiag:
    kappa: float
    gs_plus: np.ndarray
    gs_minus: np.ndarray


def schrodinger_diag(dg: DiagGreens) -> SchrodingerDiag:
    if not dg.converged:
        raise ValueError("Green's functions not converged")
    gp = (1.0 + dg.gamma + dg.gplus) / (2.0 * dg.kappa)
    gm = (1.0 + dg.gamma - dg.gplus) / (2.0 * dg.kappa)
    if np.any(gp <= 0):
        raise ValueError("diagonal Green's function of H+ is not positive; gamma bounds violated upstream")
    return SchrodingerDiag(dg.kappa, gp, gm)


def hplus_matrix(w: KdvField, modes: int | None = None) -> np.ndarray:
    """Galerkin matrix of -d^2 + w on e^{i k pi x / L}, |k| <= modes."""
    n = w.values.size
    coeffs = w.fourier_coefficients()
    modes = n // 2 if modes is None else modes
    if 2 * modes > n:
        raise ValueError("modes must not exceed n / 2")
    idx = np.arange(-modes, modes + 1)
    diff = np.subtract.outer(idx, idx)
    mat = coeffs[n + diff]
    mat[np.diag_indices_from(mat)] += (np.pi / w.half_period * idx) ** 2
    return mat


def hplus_ground_energy(w: KdvField, modes: int | None = None) -> float:
    mat = hplus_matrix(w, modes)
    try:
        return float(scipy.linalg.eigvalsh(mat, subset_by_index=[0, 0])[0])
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("eigensolve failed") from exc


def positivity_margin(energy: float, w: KdvField) -> float:
    """energy + 1e-6 (1 + ||w||_inf); nonnegative when the bound holds."""
    return energy + 1e-6 * (1.0 + float(np.abs(w.values).max()))


def kdv_rates(q: np.ndarray, kappa: float, half_period: float):
    """(g, d/dt g) along KdV for g = (1 + gamma + gplus) / (2 kappa).

    The product w g is expanded as (q g)' - q g' + q^2 g so that no rough
    field is differentiated and multiplied by another rough field.
    """
    L = half_period
    d = lambda f, k=1: spectral.derivative(f, L, k)
    dg = diag_greens(q, L, kappa)
    g = (1.0 + dg.gamma + dg.gplus) / (2.0 * kappa)
    wg = d(q * g) - q * d(g) + q * q * g
    return g, d(2.0 * d(g, 2) - 6.0 * wg - 12.0 * kappa**2 * g)


def kdv_green_residual(traj: FlowTrajectory, kappa: float) -> GreenResidualReport:
    g, rate = kdv_rates(traj.snapshots, kappa, traj.half_period)
    return _report(kappa, {"g": (g, rate)}, traj.times, traj.half_period)


# ------------------------------------------------------------ white noise


@dataclass(frozen=True)
class WhiteNoiseReport:
    lambdas: np.ndarray
    gradient_energy: float  # ||phi'||^2
    quartic: float  # ||phi||_4^4
    miura_pairings: np.ndarray
    noise_pairings: np.ndarray
    miura_violations: int
    noise_violations: int
    miura_log_average: np.ndarray
    noise_log_average: np.ndarray
    noise_log_se: np.ndarray
    gaussian_prediction: np.ndarray
    miura_bound: np.ndarray

    @property
    def certificate_holds(self) -> bool:
        return self.miura_violations == 0

    @property
    def separated(self) -> bool:
        """White noise breaks the certificate or the Miura exponential bound."""
        return self.noise_violations > 0 or bool(np.any(self.noise_log_average > self.miura_bound))


def miura_pairing(q: np.ndarray, phi: np.ndarray, dphi: np.ndarray, dx: float) -> np.ndarray:
    """<phi^2, q' + q^2> with the derivative moved onto phi^2."""
    return dx * np.sum(-2.0 * phi * dphi * q + phi * phi * q * q, axis=-1)


def log_mean_exp(a: np.ndarray) -> tuple[float, float]:
    """log of the sample mean of e^a and its delta-method standard error."""
    m = logsumexp(a) - np.log(a.size)
    rel = np.exp(a - m)
    return float(m), float(rel.std(ddof=1) / np.sqrt(a.size))


def whitenoise_discriminator(
    q,
    phi: np.ndarray,
    dphi: np.ndarray,
    half_period: float,
    rng: np.random.Generator,
    lambdas=(0.5, 1.0, 2.0, 4.0),
) -> WhiteNoiseReport:
    """Compare Miura images of ``q`` with matched lattice white noise.

    ``phi`` and ``dphi`` are a test function and its exact derivative on
    the grid.
    """
    q = check_ensemble(q)
    q = q.reshape(-1, q.shape[-1])
    n = q.shape[-1]
    dx = 2.0 * half_period / n
    grad = float(dx * np.sum(dphi * dphi))
    quartic = float(dx * np.sum(phi**4))
    pm = miura_pairing(q, phi, dphi, dx)
    noise = rng.standard_normal(q.shape) / np.sqrt(dx)
    pn = dx * noise @ (phi * phi)
    # the certificate is the sum of squares dx sum (phi q - phi')^2 >= 0
    miura_viol = int(np.sum(pm + grad < 0))
    noise_viol = int(np.sum(pn + grad < 0))
    lam = np.asarray(lambdas, dtype=float)
    ml = np.array([log_mean_exp(-l * pm)[0] for l in lam])
    nl = [log_mean_exp(-l * pn) for l in lam]
    return WhiteNoiseReport(
        lam, grad, quartic, pm, pn, miura_viol, noise_viol, ml,
        np.array([v for v, _ in nl]), np.array([s for _, s in nl]),
        0.5 * lam**2 * quartic, lam * grad,
    )


# ------------------------------------------------------------ injectivity


@dataclass(frozen=True)
class InjectivityReport:
    lengths: np.ndarray
    log_i_plus: np.ndarray  # (n_samples, n_lengths)
    log_i_minus: np.ndarray

    @property
    def log_margin(self) -> np.ndarray:
        """log I+ + log I- - 2 log X, nonnegative by Cauchy-Schwarz."""
        return self.log_i_plus + self.log_i_minus - 2.0 * np.log(self.lengths)

    @property
    def log_max(self) -> np.ndarray:
        return np.maximum(self.log_i_plus, self.log_i_minus)


def _log_trapezoid(log_f: np.ndarray, dx: float) -> np.ndarray:
    w = np.full(log_f.shape[-1], dx)
    w[0] = w[-1] = 0.5 * dx
    return logsumexp(log_f + np.log(w), axis=-1)


def injectivity_probe(q, spacing: float, lengths=(8.0, 16.0, 32.0)) -> InjectivityReport:
    """I+-(X) = int_0^X exp(-+2 int_0^s q) ds from samples q(j * spacing), j >= 0.

    Integrals use the trapezoid rule with all exponentials kept in log
    space, so the Cauchy-Schwarz bound I+ I- >= X^2 holds for the discrete
    sums themselves.
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    lengths = np.asarray(lengths, dtype=float)
    sites = np.rint(lengths / spacing).astype(int)
    if sites.max() >= q.shape[-1]:
        raise ValueError("samples do not cover the longest length")
    if not np.allclose(sites * spacing, lengths):
        raise ValueError("lengths must be multiples of the spacing")
    prim = np.concatenate(
        [np.zeros(q.shape[:-1] + (1,)), np.cumsum(0.5 * spacing * (q[..., 1:] + q[..., :-1]), axis=-1)], axis=-1
    )
    lp = np.stack([_log_trapezoid(-2.0 * prim[..., : s + 1], spacing) for s in sites], axis=-1)
    lm = np.stack([_log_trapezoid(2.0 * prim[..., : s + 1], spacing) for s in sites], axis=-1)
    return InjectivityReport(sites * spacing, lp, lm)


# ------------------------------------------------------------ estimator


class MiuraTransformer(TransformerMixin, BaseEstimator):
    """Map rows of ``X`` to their Miura images q' + q^2."""

    def __init__(self, half_period: float = np.pi):
        self.half_period = half_period

    def fit(self, X, y=None):
        self.n_features_in_ = check_array(X).shape[1]
        return self

    def transform(self, X):
        return miura(check_array(X), self.half_period).values
