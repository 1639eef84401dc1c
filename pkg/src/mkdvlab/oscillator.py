"""Anharmonic oscillator -1/2 d^2/dy^2 + V(y) on a truncated value grid.

The operator is discretized in the sinc (Dirichlet box) basis on the interior
nodes of [-y_max, y_max]. The matrix is dense and symmetric and the quadrature
weight of every node is the spacing h. Eigenvalues are shifted so that the
ground energy is exactly zero.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg
from scipy.interpolate import CubicSpline

SCHEMA_VERSION = 1
SPECTRAL_TOL = 1e-9
BOUNDARY_TOL = 1e-8
TRUNCATION_TOL = 1e-10


class BoundaryLeakageError(RuntimeError):
    pass


class TruncationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class OscillatorSpec:
    mu: float = 0.0
    y_max: float = 6.0
    m: int = 1200
    n_eigs: int = 64

    def __post_init__(self):
        if not self.y_max > 0:
            raise ValueError("y_max must be positive")
        if self.m < 16:
            raise ValueError("m must be at least 16")
        if not 1 <= self.n_eigs <= self.m:
            raise ValueError("n_eigs must lie in [1, m]")

    def potential(self, y: np.ndarray) -> np.ndarray:
        """Unshifted potential 1/2 y^4 - mu/2 y^2."""
        return 0.5 * y**4 - 0.5 * self.mu * y**2

    def potential_derivative(self, y: np.ndarray) -> np.ndarray:
        return 2.0 * y**3 - self.mu * y


@dataclass(frozen=True)
class SpectralData:
    spec: OscillatorSpec
    y: np.ndarray
    h: float
    lambdas: np.ndarray
    psis: np.ndarray  # (n_eigs, m), row k is psi_k on the grid
    v_shift: float
    boundary_leakage: np.ndarray = field(repr=False)
    schema_version: int = SCHEMA_VERSION

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.y.size, self.h)

    @property
    def ground_state(self) -> np.ndarray:
        return self.psis[0]

    @property
    def gap(self) -> float:
        return float(self.lambdas[1] - self.lambdas[0])

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        return float(self.h * np.dot(f, g))

    def interior_modes(self, tol: float = BOUNDARY_TOL) -> int:
        """Number of leading modes whose boundary values are below ``tol``."""
        bad = np.nonzero(self.boundary_leakage >= tol)[0]
        return int(bad[0]) if bad.size else len(self.lambdas)


def sinc_kinetic(m: int, h: float) -> np.ndarray:
    """Matrix of -1/2 d^2/dy^2 in the sinc basis with spacing h."""
    d = np.subtract.outer(np.arange(m), np.arange(m))
    off = np.where(d == 0, 1, d).astype(float)
    t = np.where(d == 0, np.pi**2 / 3.0, 2.0 * (-1.0) ** np.abs(d) / off**2)
    return t / (2.0 * h * h)


def sinc_derivative(m: int, h: float) -> np.ndarray:
    """Matrix of d/dy in the sinc basis with spacing h (antisymmetric)."""
    d = np.subtract.outer(np.arange(m), np.arange(m))
    off = np.where(d == 0, 1, d).astype(float)
    return np.where(d == 0, 0.0, (-1.0) ** np.abs(d) / (off * h))


def value_grid(spec: OscillatorSpec) -> tuple[np.ndarray, float]:
    h = 2.0 * spec.y_max / (spec.m + 1)
    return -spec.y_max + h * np.arange(1, spec.m + 1), h


def build_spectrum(
    spec: OscillatorSpec,
    potential: Callable[[np.ndarray], np.ndarray] | None = None,
    check_boundary: bool = True,
) -> SpectralData:
    """Diagonalize the oscillator and shift the ground energy to zero.

    ``potential`` replaces the quartic well (used for the harmonic test).
    Every retained mode must vanish at the box edges to ``BOUNDARY_TOL``,
    otherwise ``BoundaryLeakageError`` is raised. With ``check_boundary``
    off only the ground state is checked; this is how the full discrete
    basis used for short-time kernels is built.
    """
    y, h = value_grid(spec)
    pot = spec.potential if potential is None else potential
    ham = sinc_kinetic(spec.m, h)
    ham[np.diag_indices_from(ham)] += pot(y)
    raw, vecs = scipy.linalg.eigh(ham, subset_by_index=[0, spec.n_eigs - 1])
    if not np.all(np.isfinite(raw)):
        raise RuntimeError("eigensolve did not converge")
    v_shift = -float(raw[0])
    lambdas = raw + v_shift
    psis = vecs.T / np.sqrt(h)
    # fix signs: the ground state is positive, others start positive from the left
    for k, psi in enumerate(psis):
        ref = np.sum(psi) if k == 0 else psi[np.argmax(np.abs(psi) > 1e-3 * np.abs(psi).max())]
        if ref < 0:
            psis[k] = -psi
    peak = np.abs(psis).max(axis=1)
    leakage = np.maximum(np.abs(psis[:, 0]), np.abs(psis[:, -1])) / peak
    checked = leakage if check_boundary else leakage[:1]
    bad = np.nonzero(checked >= BOUNDARY_TOL)[0]
    if bad.size:
        k = int(bad[0])
        raise BoundaryLeakageError(
            f"mode {k} reaches {leakage[k]:.2e} of its peak at |y| = y_max; enlarge y_max"
        )
    if abs(lambdas[0]) > SPECTRAL_TOL:
        raise RuntimeError("ground energy shift failed")
    return SpectralData(spec, y, h, lambdas, psis, v_shift, leakage)


def heat_kernel(sd: SpectralData, t: float, tol: float = TRUNCATION_TOL) -> np.ndarray:
    """Grid matrix of K_t(y, y') = sum_k exp(-lambda_k t) psi_k(y) psi_k(y')."""
    if not t > 0:
        raise ValueError("t must be positive")
    decay = np.exp(-sd.lambdas * t)
    if decay[-1] > tol:
        warnings.warn(
            f"heat kernel truncated: exp(-lambda_max t) = {decay[-1]:.2e} at t = {t}",
            TruncationWarning,
            stacklevel=2,
        )
    return sd.psis.T @ (decay[:, None] * sd.psis)


def apply_heat(sd: SpectralData, t: float, f: np.ndarray) -> np.ndarray:
    """Apply e^{-t L} to a grid function using the retained modes."""
    coeffs = sd.h * (sd.psis @ f)
    return sd.psis.T @ (np.exp(-sd.lambdas * t) * coeffs)


def semigroup_residual(sd: SpectralData, s: float, t: float) -> float:
    ks, kt, kst = heat_kernel(sd, s), heat_kernel(sd, t), heat_kernel(sd, s + t)
    return float(np.abs(kst - sd.h * ks @ kt).max())


def collapse_distance(sd: SpectralData, t: float) -> float:
    """Hilbert-Schmidt distance between K_t and the ground-state projector."""
    proj = np.outer(sd.ground_state, sd.ground_state)
    return float(sd.h * np.linalg.norm(heat_kernel(sd, t) - proj))


def collapse_rate(sd: SpectralData, times: np.ndarray | None = None) -> float:
    """Fitted exponential rate of the rank-one collapse of K_t."""
    if times is None:
        times = np.linspace(2.0, 10.0, 9) / sd.gap
    dist = np.array([collapse_distance(sd, t) for t in times])
    slope = np.polyfit(times, np.log(dist), 1)[0]
    return float(-slope)


@dataclass(frozen=True)
class Drift:
    """b = psi_0'/psi_0 tabulated on the value grid with its trusted window."""

    y: np.ndarray
    values: np.ndarray
    window: tuple[float, float]
    mu: float

    def __post_init__(self):
        object.__setattr__(self, "_spline", CubicSpline(self.y, self.values))

    def __call__(self, q: np.ndarray, strict: bool = False) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        lo, hi = self.window
        outside = (q < lo) | (q > hi)
        if strict and np.any(outside):
            raise ValueError("drift evaluated outside its trusted window")
        inside = self._spline(np.clip(q, lo, hi))
        tail = -np.sign(q) * (q * q - 0.5 * self.mu)
        return np.where(outside, tail, inside)


def drift(sd: SpectralData, floor: float = 1e-8) -> Drift:
    """Drift of the stationary diffusion, trusted where psi_0 > floor * max."""
    psi0 = sd.ground_state
    dpsi = sinc_derivative(psi0.size, sd.h) @ psi0
    trusted = psi0 > floor * psi0.max()
    idx = np.nonzero(trusted)[0]
    sl = slice(idx[0], idx[-1] + 1)
    y = sd.y[sl]
    b = dpsi[sl] / psi0[sl]
    return Drift(y, b, (float(y[0]), float(y[-1])), sd.spec.mu)


def covariance_curve(sd: SpectralData, x: np.ndarray, f: np.ndarray | None = None) -> np.ndarray:
    """Stationary covariance Cov(f(q(0)), f(q(x))) from the spectral sum."""
    f = sd.y if f is None else f
    psi0 = sd.ground_state
    coeffs = sd.h * (sd.psis @ (f * psi0))
    c2 = coeffs[1:] ** 2
    return np.exp(-np.outer(np.asarray(x, dtype=float), sd.lambdas[1:])) @ c2


def save_spectrum(sd: SpectralData, path: str | Path) -> Path:
    """Write ``<path>.json`` with metadata and ``<path>.bin`` with the arrays."""
    path = Path(path)
    blob = np.concatenate([sd.y, sd.lambdas, sd.psis.ravel(order="C")]).astype("<f8").tobytes()
    bin_path = path.with_suffix(".bin")
    bin_path.write_bytes(blob)
    meta = {
        "schema_version": sd.schema_version,
        "spec": asdict(sd.spec),
        "h": sd.h,
        "v_shift": sd.v_shift,
        "shape": {"m": sd.y.size, "n_eigs": sd.lambdas.size},
        "layout": ["y", "lambdas", "psis (row-major, n_eigs x m)"],
        "dtype": "<f8",
        "sidecar": bin_path.name,
        "sha256": hashlib.sha256(blob).hexdigest(),
        "boundary_leakage": sd.boundary_leakage.tolist(),
    }
    json_path = path.with_suffix(".json")
    json_path.write_text(json.dumps(meta, indent=2))
    return json_path


def load_spectrum(path: str | Path) -> SpectralData:
    json_path = Path(path).with_suffix(".json")
    meta = json.loads(json_path.read_text())
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported spectral data schema {meta.get('schema_version')}")
    blob = (json_path.parent / meta["sidecar"]).read_bytes()
    if hashlib.sha256(blob).hexdigest() != meta["sha256"]:
        raise ValueError("spectral data sidecar checksum mismatch")
    m, n_eigs = meta["shape"]["m"], meta["shape"]["n_eigs"]
    arr = np.frombuffer(blob, dtype="<f8").astype(float)
    y, lambdas, psis = arr[:m], arr[m : m + n_eigs], arr[m + n_eigs :].reshape(n_eigs, m)
    return SpectralData(
        OscillatorSpec(**meta["spec"]),
        y,
        float(meta["h"]),
        lambdas,
        psis,
        float(meta["v_shift"]),
        np.asarray(meta["boundary_leakage"]),
    )
