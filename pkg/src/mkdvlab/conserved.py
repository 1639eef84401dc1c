"""Conserved functionals M, A(kappa) and H_kappa on the periodic lattice.

    M(q)        = 1/2 int q^2
    A(kappa; q) = int q gminus / (2 + gamma)
    H_kappa(q)  = 4 kappa^2 M(q) - 4 kappa^3 A(kappa; q)

All functionals accept a ``LatticeField`` or an ensemble array together
with its half period, and reduce over the last axis.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import spectral
from .greens import DiagGreens, diag_greens
from .lattice import unpack

FD_STEPS = (1e-4, 1e-5, 1e-6)


def _dx(q: np.ndarray, half_period: float) -> float:
    return 2.0 * half_period / q.shape[-1]


def mass(q, half_period: float | None = None):
    q, L = unpack(q, half_period)
    return 0.5 * _dx(q, L) * np.sum(q * q, axis=-1)


def alpha(q, kappa: float, half_period: float | None = None, dg: DiagGreens | None = None):
    q, L = unpack(q, half_period)
    if dg is None:
        dg = diag_greens(q, L, kappa)
    if not dg.converged:
        raise RuntimeError(f"Green's functions did not converge at kappa = {kappa}")
    return _dx(q, L) * np.sum(q * dg.gminus / (2.0 + dg.gamma), axis=-1)


def hk_hamiltonian(q, kappa: float, half_period: float | None = None, dg: DiagGreens | None = None):
    q, L = unpack(q, half_period)
    return 4.0 * kappa**2 * mass(q, L) - 4.0 * kappa**3 * alpha(q, kappa, L, dg)


def h_mkdv(q, half_period: float | None = None):
    """int 1/2 q'^2 + 1/2 q^4, meaningful for smooth fields only."""
    q, L = unpack(q, half_period)
    dq = spectral.derivative(q, L)
    return _dx(q, L) * np.sum(0.5 * dq**2 + 0.5 * q**4, axis=-1)


# ------------------------------------------------------------ closed forms


def constant_alpha(c: float, kappa: float, half_period: float) -> float:
    return 2.0 * half_period * c**2 / (kappa + np.hypot(kappa, c))


def constant_alpha_dc(c: float, kappa: float, half_period: float) -> float:
    """d/dc of ``constant_alpha``."""
    s = np.hypot(kappa, c)
    return 2.0 * half_period * c * (2.0 * (kappa + s) - c * c / s) / (kappa + s) ** 2


def constant_hk(c: float, kappa: float, half_period: float) -> float:
    return 4.0 * kappa**2 * c**2 * half_period - 4.0 * kappa**3 * constant_alpha(c, kappa, half_period)


# ------------------------------------------------------------ variational checks


@dataclass(frozen=True)
class DerivativeCheck:
    """Finite-difference derivative against its analytic value.

    ``finite_diff`` and ``abs_error`` hold one entry per step in ``steps``;
    ``best`` indexes the step with the smallest error.
    """

    analytic: float
    finite_diff: np.ndarray
    steps: tuple[float, ...]
    abs_error: np.ndarray
    best: int
    atol: float
    rtol: float

    @property
    def error(self) -> float:
        return float(self.abs_error[self.best])

    @property
    def passes(self) -> bool:
        return self.error <= self.atol + self.rtol * abs(self.analytic)


def _check(analytic, fd, steps, atol, rtol) -> DerivativeCheck:
    fd = np.asarray(fd, dtype=float)
    err = np.abs(fd - analytic)
    return DerivativeCheck(float(analytic), fd, tuple(steps), err, int(np.argmin(err)), atol, rtol)


def alpha_kappa_derivative_check(
    q, kappa: float, half_period: float | None = None, steps=FD_STEPS, rtol: float = 1e-6
) -> DerivativeCheck:
    """Central difference of A in kappa against int gamma."""
    q, L = unpack(q, half_period)
    dg = diag_greens(q, L, kappa)
    analytic = _dx(q, L) * np.sum(dg.gamma)
    fd = [(alpha(q, kappa + e, L) - alpha(q, kappa - e, L)) / (2.0 * e) for e in steps]
    return _check(analytic, fd, steps, 0.0, rtol)


def alpha_gradient_check(
    q,
    kappa: float,
    directions,
    half_period: float | None = None,
    steps=FD_STEPS,
    atol: float = 1e-6,
    rtol: float = 1e-4,
) -> list[DerivativeCheck]:
    """Directional derivatives of A against the pairing <f, gminus>."""
    q, L = unpack(q, half_period)
    dg = diag_greens(q, L, kappa)
    dx = _dx(q, L)
    out = []
    for f in np.atleast_2d(np.asarray(directions, dtype=float)):
        analytic = dx * np.dot(f, dg.gminus)
        fd = [(alpha(q + e * f, kappa, L) - alpha(q - e * f, kappa, L)) / (2.0 * e) for e in steps]
        out.append(_check(analytic, fd, steps, atol, rtol))
    return out


# ------------------------------------------------------------ ledger


def relative_drift(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return np.abs(values - values[0]) / (1.0 + np.abs(values[0]))


@dataclass
class ConservationLedger:
    """Time series of M, A(kappa) and H_kappa along a trajectory."""

    half_period: float
    alpha_kappas: tuple[float, ...] = ()
    hamiltonian_kappas: tuple[float, ...] = ()
    times: list[float] = field(default_factory=list)
    mass: list[float] = field(default_factory=list)
    alpha: dict[float, list[float]] = field(default_factory=dict)
    hamiltonian: dict[float, list[float]] = field(default_factory=dict)

    def record(self, t: float, q: np.ndarray) -> None:
        L = self.half_period
        self.times.append(float(t))
        self.mass.append(float(mass(q, L)))
        for k in self.alpha_kappas:
            self.alpha.setdefault(k, []).append(float(alpha(q, k, L)))
        for k in self.hamiltonian_kappas:
            self.hamiltonian.setdefault(k, []).append(float(hk_hamiltonian(q, k, L)))

    def columns(self) -> dict[str, np.ndarray]:
        cols = {"t": np.asarray(self.times), "M": np.asarray(self.mass)}
        for k, v in self.alpha.items():
            cols[f"A@{k:g}"] = np.asarray(v)
        for k, v in self.hamiltonian.items():
            cols[f"H@{k:g}"] = np.asarray(v)
        return cols

    def drifts(self) -> dict[str, np.ndarray]:
        return {name: relative_drift(v) for name, v in self.columns().items() if name != "t"}

    def max_drift(self) -> dict[str, float]:
        return {name: float(d.max()) for name, d in self.drifts().items()}

    def to_csv(self, path) -> None:
        cols = self.columns()
        drifts = self.drifts()
        header = list(cols) + [f"drift_{name}" for name in drifts]
        rows = zip(*cols.values(), *drifts.values())
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([repr(float(v)) for v in r])
