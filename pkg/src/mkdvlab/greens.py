"""Diagonal Green's functions of the Dirac Lax operator on the torus.

For the operator L = [[-d/dx, q], [-q, d/dx]] and spectral parameter kappa,
the resolvent (L + kappa)^{-1} has a 2x2 kernel G(x, y). Along the diagonal
it is summarized by

    gminus = G21 - G12,   gplus = G21 + G12,   gamma = -1 + sqrt(1 + gplus^2 - gminus^2).

Two independent routes are provided. The production route iterates the
closed formulas for gminus and gplus as Fourier multipliers applied to
q (1 + gamma). The test route inverts a dense 2n x 2n discretization of
L + kappa.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from . import spectral
from .lattice import check_ensemble

log = logging.getLogger(__name__)

SIGMA1 = np.array([[0.0, 1.0], [1.0, 0.0]])
SIGMA3 = np.array([[1.0, 0.0], [0.0, -1.0]])


class ContractionError(RuntimeError):
    """The fixed-point radicand became nonpositive."""


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class DiagGreens:
    kappa: float
    half_period: float
    gamma: np.ndarray
    gplus: np.ndarray
    gminus: np.ndarray
    converged: bool = True
    iterations: int = 0

    @property
    def dx(self) -> float:
        return 2.0 * self.half_period / self.gamma.shape[-1]

    def inequality_margin(self) -> float:
        """Smallest slack in |gminus| < 1 and |gplus| < 1 + gamma."""
        a = 1.0 - np.abs(self.gminus)
        b = 1.0 + self.gamma - np.abs(self.gplus)
        return float(min(a.min(), b.min()))

    def to_csv(self, path, x: np.ndarray | None = None) -> None:
        if self.gamma.ndim != 1:
            raise ValueError("CSV export is per field")
        n = self.gamma.size
        x = spectral.grid(n, self.half_period) if x is None else x
        rows = np.column_stack([x, self.gamma, self.gplus, self.gminus])
        with open(path, "w") as fh:
            fh.write("x,gamma,gplus,gminus\n")
            for r in rows:
                fh.write(",".join(repr(float(v)) for v in r) + "\n")


# ------------------------------------------------------------ fixed point


def _multipliers(n: int, half_period: float, kappa: float):
    k = spectral.wavenumbers(n, half_period)
    kodd = spectral.odd_wavenumbers(n, half_period)
    res = 1.0 / (4.0 * kappa**2 + k**2)
    return 4.0 * kappa * res, -2j * kodd * res


def greens_from_gamma(q: np.ndarray, gamma: np.ndarray, half_period: float, kappa: float):
    """One application of the closed formulas for (gminus, gplus)."""
    n = q.shape[-1]
    m_minus, m_plus = _multipliers(n, half_period, kappa)
    fh = spectral.rfft(q * (1.0 + gamma))
    return spectral.irfft(m_minus * fh, n), spectral.irfft(m_plus * fh, n)


def diag_greens(
    q,
    half_period: float,
    kappa: float,
    tol: float = 1e-12,
    max_iter: int = 200,
    gamma0: np.ndarray | None = None,
) -> DiagGreens:
    """Fixed-point solve for (gamma, gplus, gminus).

    ``q`` is one field or an ensemble stacked along the leading axes.
    ``gamma0`` warm-starts the iteration (zero by default). The relaxation
    factor starts at 1 and drops to 0.5 once the increments grow.
    """
    q = check_ensemble(q)
    if abs(kappa) < 1:
        raise ValueError("kappa must satisfy |kappa| >= 1")
    n = q.shape[-1]
    m_minus, m_plus = _multipliers(n, half_period, kappa)
    gamma = np.zeros_like(q) if gamma0 is None else np.array(gamma0, dtype=float)
    relax = 1.0
    prev = np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        fh = spectral.rfft(q * (1.0 + gamma))
        gminus = spectral.irfft(m_minus * fh, n)
        gplus = spectral.irfft(m_plus * fh, n)
        rad = 1.0 + gplus**2 - gminus**2
        if np.any(rad <= 0):
            raise ContractionError(f"kappa = {kappa} below contraction regime (radicand {rad.min():.3e})")
        update = np.sqrt(rad) - 1.0
        step = np.abs(update - gamma).max()
        if step > prev and relax == 1.0:
            relax = 0.5
        gamma = gamma + relax * (update - gamma)
        prev = step
        if step < tol:
            converged = True
            break
    # final consistent triple from the converged gamma
    gminus, gplus = greens_from_gamma(q, gamma, half_period, kappa)
    gamma = np.sqrt(1.0 + gplus**2 - gminus**2) - 1.0
    if not converged:
        log.warning("fixed point did not reach tol=%g in %d iterations (kappa=%g)", tol, max_iter, kappa)
    return DiagGreens(kappa, half_period, gamma, gplus, gminus, converged, it)


def diag_greens_fixed_point(q, kappa: float, tol: float = 1e-12, max_iter: int = 200) -> DiagGreens:
    """Single-field form taking a ``LatticeField``."""
    return diag_greens(q.values, q.half_period, kappa, tol, max_iter)


# ------------------------------------------------------------ dense oracle


@dataclass(frozen=True)
class ResolventOracle:
    """Dense resolvent with component-major layout [[R11, R12], [R21, R22]].

    ``resolvent / dx`` holds the Green's samples G(x_i, x_j). For the
    transfer discretization the diagonal blocks are right limits
    G(x_i+, x_i).
    """

    kappa: float
    half_period: float
    method: str
    resolvent: np.ndarray
    residual: float

    @property
    def n(self) -> int:
        return self.resolvent.shape[0] // 2

    @property
    def dx(self) -> float:
        return 2.0 * self.half_period / self.n

    def block(self, i, j) -> np.ndarray:
        n, r = self.n, self.resolvent / self.dx
        return np.array([[r[i, j], r[i, n + j]], [r[n + i, j], r[n + i, n + j]]])

    def coinciding(self) -> tuple[np.ndarray, np.ndarray]:
        """(G12, G21) at coinciding points."""
        n = self.n
        r = self.resolvent / self.dx
        return np.diag(r[:n, n:]).copy(), np.diag(r[n:, :n]).copy()


def spectral_derivative_matrix(n: int, half_period: float) -> np.ndarray:
    eye = np.eye(n)
    return spectral.derivative(eye, half_period).T


def lax_matrix(q: np.ndarray, half_period: float) -> np.ndarray:
    n = q.size
    d = spectral_derivative_matrix(n, half_period)
    qd = np.diag(q)
    return np.block([[-d, qd], [-qd, d]])


def _expm_traceless(om: np.ndarray) -> np.ndarray:
    a, b, c = om[..., 0, 0], om[..., 0, 1], om[..., 1, 0]
    det = a * a + b * c
    r = np.sqrt(det.astype(complex))
    small = np.abs(det) < 1e-12
    ch = np.where(small, 1.0 + det / 2, np.cosh(r)).real
    sh = np.where(small, 1.0 + det / 6, np.sinh(r) / np.where(small, 1.0, r)).real
    out = sh[..., None, None] * om
    out[..., 0, 0] += ch
    out[..., 1, 1] += ch
    return out


def cell_propagators(q: np.ndarray, half_period: float, kappa: float, substeps: int = 8) -> np.ndarray:
    """Transfer matrices of u' = [[kappa, q], [q, -kappa]] u over each cell.

    The field is the trigonometric interpolant of the samples; each cell is
    integrated with the fourth-order Magnus method on ``substeps`` steps.
    """
    n = q.size
    dx = 2.0 * half_period / n
    hs = dx / substeps
    c = np.sqrt(3.0) / 6.0
    prop = np.tile(np.eye(2), (n, 1, 1))
    a = np.zeros((2, n, 2, 2))
    a[..., 0, 0], a[..., 1, 1] = kappa, -kappa
    for s in range(substeps):
        nodes = s * hs + (0.5 + np.array([-c, c])) * hs
        qs = spectral.translate(np.broadcast_to(q, (2, n)), half_period, nodes)
        a[..., 0, 1] = a[..., 1, 0] = qs
        a1, a2 = a[0], a[1]
        om = 0.5 * hs * (a1 + a2) + (np.sqrt(3.0) / 12.0) * hs**2 * (a2 @ a1 - a1 @ a2)
        prop = _expm_traceless(om) @ prop
    return prop


def resolvent_matrix(
    q,
    half_period: float,
    kappa: float,
    method: str = "transfer",
    substeps: int = 8,
    residual_tol: float = 1e-8,
) -> ResolventOracle:
    """Dense resolvent of L + kappa on the periodic grid.

    ``method="spectral"`` discretizes d/dx by the Fourier derivative; the
    matrix is exactly anti-selfadjoint but its diagonal Green's samples carry
    an O(1/n) truncation error. ``method="transfer"`` chains exact cell
    propagators, G(x_{i+1}, y) = T_i G(x_i, y) with the unit jump at y, so
    its samples are the continuum kernel up to the Magnus error.
    """
    q = np.asarray(q, dtype=float)
    if q.ndim != 1 or q.size % 2:
        raise ValueError("q must be a single field with an even number of sites")
    if abs(kappa) < 1:
        raise ValueError("kappa must satisfy |kappa| >= 1")
    n = q.size
    if method == "spectral":
        op = lax_matrix(q, half_period) + kappa * np.eye(2 * n)
        res = np.linalg.inv(op)
        residual = float(np.abs(op @ res - np.eye(2 * n)).max())
        dx = 2.0 * half_period / n
        resolvent = res
    elif method == "transfer":
        prop = cell_propagators(q, half_period, kappa, substeps)
        b = np.eye(2 * n)
        rows = np.arange(n)
        for r in range(2):
            for s in range(2):
                b[2 * rows + r, 2 * ((rows - 1) % n) + s] -= prop[(rows - 1) % n, r, s]
        jump = -np.kron(np.eye(n), SIGMA3)
        g = np.linalg.solve(b, jump)
        residual = float(np.abs(b @ g - jump).max())
        dx = 2.0 * half_period / n
        comp = g.reshape(n, 2, n, 2).transpose(1, 0, 3, 2).reshape(2 * n, 2 * n)
        resolvent = comp * dx
    else:
        raise ValueError(f"unknown method {method!r}")
    if not residual < residual_tol:
        raise OracleError(f"resolvent residual {residual:.2e} exceeds {residual_tol:.0e}")
    return ResolventOracle(float(kappa), float(half_period), method, resolvent, residual)


def diag_greens_oracle(oracle: ResolventOracle) -> DiagGreens:
    g12, g21 = oracle.coinciding()
    gminus = g21 - g12
    gplus = g21 + g12
    rad = 1.0 + gplus**2 - gminus**2
    bad = np.nonzero(rad <= 0)[0]
    if bad.size:
        raise OracleError(f"nonpositive radicand at site {int(bad[0])}")
    gamma = np.sqrt(rad) - 1.0
    return DiagGreens(oracle.kappa, oracle.half_period, gamma, gplus, gminus, True, 0)


def diag_greens_robust(q, half_period: float, kappa: float, **kw) -> DiagGreens:
    """Fixed point per field, falling back to the transfer oracle on failure."""
    q = check_ensemble(q)
    flat = q.reshape(-1, q.shape[-1])
    try:
        dg = diag_greens(flat, half_period, kappa, **kw)
        if dg.converged:
            return _reshape(dg, q.shape)
    except ContractionError:
        pass
    out = []
    for row in flat:
        try:
            dg = diag_greens(row, half_period, kappa, **kw)
            if not dg.converged:
                raise ContractionError("not converged")
        except ContractionError:
            log.warning("fixed point failed at kappa=%g; using the dense oracle", kappa)
            dg = diag_greens_oracle(resolvent_matrix(row, half_period, kappa))
        out.append(dg)
    stack = DiagGreens(
        kappa,
        half_period,
        np.stack([d.gamma for d in out]),
        np.stack([d.gplus for d in out]),
        np.stack([d.gminus for d in out]),
        True,
        max(d.iterations for d in out),
    )
    return _reshape(stack, q.shape)


def _reshape(dg: DiagGreens, shape) -> DiagGreens:
    return DiagGreens(
        dg.kappa,
        dg.half_period,
        dg.gamma.reshape(shape),
        dg.gplus.reshape(shape),
        dg.gminus.reshape(shape),
        dg.converged,
        dg.iterations,
    )


# ------------------------------------------------------------ diagnostics


def constant_field_greens(c: float, kappa: float) -> tuple[float, float, float]:
    """(gamma, gplus, gminus) for q identically equal to c."""
    s = np.hypot(kappa, c)
    return kappa / s - 1.0, 0.0, c / s


def free_kernel(x: np.ndarray, y: np.ndarray, kappa: float, half_period: float | None = None) -> np.ndarray:
    """Free 2x2 kernel G0(x, y) with shape (..., 2, 2).

    With ``half_period`` the kernel is periodized over the torus.
    """
    d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
    out = np.zeros(d.shape + (2, 2))
    s = np.sign(kappa)
    a = abs(kappa)
    if half_period is None:
        out[..., 0, 0] = s * np.exp(-a * np.abs(d)) * (kappa * d > 0)
        out[..., 1, 1] = s * np.exp(-a * np.abs(d)) * (kappa * d <= 0)
        return out
    period = 2.0 * half_period
    norm = 1.0 / (1.0 - np.exp(-a * period))
    fwd = np.mod(d, period)  # distance going right from x to y
    bwd = np.mod(-d, period)
    if kappa > 0:
        out[..., 0, 0] = np.where(fwd > 0, np.exp(-a * fwd), np.exp(-a * period)) * norm
        out[..., 1, 1] = np.exp(-a * bwd) * norm
    else:
        out[..., 0, 0] = -np.where(bwd > 0, np.exp(-a * bwd), np.exp(-a * period)) * norm
        out[..., 1, 1] = -np.exp(-a * fwd) * norm
    return out


def check_identities(dg: DiagGreens, q) -> dict[str, dict[str, float]]:
    """Residuals of the derivative identities and the quadratic relation."""
    q = np.asarray(q, dtype=float)
    L, k = dg.half_period, dg.kappa
    d = lambda f: spectral.derivative(f, L)
    res = {
        "gamma_prime": d(dg.gamma) - 2.0 * q * dg.gplus,
        "gplus_prime": d(dg.gplus) + 2.0 * k * dg.gminus - 2.0 * q * (1.0 + dg.gamma),
        "gminus_prime": d(dg.gminus) + 2.0 * k * dg.gplus,
        "quadratic": dg.gamma + 0.5 * dg.gamma**2 - 0.5 * (dg.gplus**2 - dg.gminus**2),
    }
    dx = dg.dx
    return {
        name: {"l2": float(np.sqrt(dx * np.sum(r**2))), "sup": float(np.abs(r).max())}
        for name, r in res.items()
    }


def antiselfadjoint_residual(oracle: ResolventOracle) -> float:
    """max |R + R^T - 2 kappa R^T R| for the resolvent matrix R."""
    r = oracle.resolvent
    return float(np.abs(r + r.T - 2.0 * oracle.kappa * r.T @ r).max())


def sigma1_residual(q, half_period: float, kappa: float, method: str = "spectral", stride: int = 1) -> float:
    """max |R(-kappa) + S R(kappa) S| with S swapping the two components."""
    rp = resolvent_matrix(q, half_period, kappa, method).resolvent
    rm = resolvent_matrix(q, half_period, -kappa, method).resolvent
    n = rp.shape[0] // 2
    swap = np.kron(SIGMA1, np.eye(n))
    diff = rm + swap @ rp @ swap
    idx = np.concatenate([np.arange(0, n, stride), n + np.arange(0, n, stride)])
    return float(np.abs(diff[np.ix_(idx, idx)]).max())


@dataclass(frozen=True)
class DecayFit:
    rate: float
    slope: float
    threshold: float
    passes: bool
    separations: np.ndarray
    log_magnitude: np.ndarray


def offdiag_decay(oracle: ResolventOracle, origin: int = 0) -> DecayFit:
    """Least-squares decay rate of |G(x0, x0 +- d)| over d in [2/kappa, L/2]."""
    n, dx, kappa = oracle.n, oracle.dx, abs(oracle.kappa)
    g = oracle.resolvent / dx
    steps = np.arange(1, n // 2)
    sep = steps * dx
    keep = (sep >= 2.0 / kappa) & (sep <= oracle.half_period / 2.0)
    if keep.sum() < 3:
        raise ValueError("not enough separations in [2/kappa, L/2]")
    steps, sep = steps[keep], sep[keep]
    mags = []
    for s in steps:
        fwd = np.linalg.norm(_block(g, n, origin, (origin + s) % n))
        bwd = np.linalg.norm(_block(g, n, origin, (origin - s) % n))
        mags.append(max(fwd, bwd))
    logm = np.log(np.array(mags))
    if np.any(~np.isfinite(logm)) or logm[-1] < np.log(1e-290):
        raise ValueError("kernel reaches the floating-point floor inside the fit window")
    slope = float(np.polyfit(sep, logm, 1)[0])
    threshold = -kappa / 6.0
    return DecayFit(-slope, slope, threshold, slope <= threshold, sep, logm)


def _block(g: np.ndarray, n: int, i: int, j: int) -> np.ndarray:
    return np.array([[g[i, j], g[i, n + j]], [g[n + i, j], g[n + i, n + j]]])


# ------------------------------------------------------------ estimator


class GreensTransformer(TransformerMixin, BaseEstimator):
    """Map an ensemble of fields to diagonal Green's functions.

    ``output`` selects one of ``"gamma"``, ``"gplus"``, ``"gminus"`` or
    ``"all"`` (the three stacked along the feature axis in that order).
    """

    def __init__(self, kappa: float = 8.0, half_period: float = np.pi, output: str = "gminus",
                 tol: float = 1e-12, max_iter: int = 200):
        self.kappa = kappa
        self.half_period = half_period
        self.output = output
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y=None):
        X = check_array(X)
        if X.shape[1] % 2:
            raise ValueError("number of sites must be even")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = check_array(X)
        dg = diag_greens(X, self.half_period, self.kappa, self.tol, self.max_iter)
        parts = {"gamma": dg.gamma, "gplus": dg.gplus, "gminus": dg.gminus}
        if self.output == "all":
            return np.hstack([dg.gamma, dg.gplus, dg.gminus])
        if self.output not in parts:
            raise ValueError(f"unknown output {self.output!r}")
        return parts[self.output]
