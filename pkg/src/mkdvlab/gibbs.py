"""Exact lattice marginals of the Gibbs process and the stationary diffusion.

All samplers work on the oscillator value grid. A tabulated density is read
as piecewise constant on the grid cells, with cell mass given by the
trapezoid rule, so its CDF is the linear interpolant of the cumulative
trapezoid sums. Conditioning on an off-grid value interpolates kernel rows
linearly in that value.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import rng as rng_mod
from .oscillator import OscillatorSpec, SpectralData, build_spectrum, drift

DENOMINATOR_FLOOR = 1e-300
MAX_RETRIES = 8
CHUNK = 2048


class ReflectionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ChainSpec:
    spacing: float
    seed: int = 0
    refinement_depth: int = 0

    def __post_init__(self):
        if not 0 < self.spacing <= 1:
            raise ValueError("spacing must lie in (0, 1]")
        if self.refinement_depth < 0:
            raise ValueError("refinement_depth must be nonnegative")


def full_basis(spec: OscillatorSpec) -> SpectralData:
    """All m eigenpairs of the discrete oscillator, for short-time kernels."""
    return build_spectrum(replace(spec, n_eigs=spec.m), check_boundary=False)


# ---------------------------------------------------------------- tabulation


def cell_masses(dens: np.ndarray, h: float) -> np.ndarray:
    """Trapezoid cell masses of densities tabulated along the last axis."""
    d = np.clip(dens, 0.0, None)
    return 0.5 * h * (d[..., 1:] + d[..., :-1])


def inverse_cdf(masses: np.ndarray, u: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Draw from piecewise-constant cell densities, one row per uniform."""
    cdf = np.cumsum(masses, axis=-1)
    total = cdf[..., -1]
    target = u * total
    j = np.minimum((cdf < target[..., None]).sum(axis=-1), masses.shape[-1] - 1)
    upper = np.take_along_axis(cdf, j[..., None], -1)[..., 0]
    mass = np.take_along_axis(masses, j[..., None], -1)[..., 0]
    frac = np.clip(1.0 - (upper - target) / np.where(mass > 0, mass, 1.0), 0.0, 1.0)
    return y[j] + frac * (y[1] - y[0])


class RowSampler:
    """Fast inverse-CDF draws from a fixed table of row densities."""

    def __init__(self, rows: np.ndarray, y: np.ndarray):
        h = y[1] - y[0]
        masses = cell_masses(rows, h)
        totals = masses.sum(axis=1, keepdims=True)
        cdf = np.cumsum(masses / np.where(totals > 0, totals, 1.0), axis=1)
        cdf[:, -1] = 1.0
        self.y = y
        self.n_cells = masses.shape[1]
        self._flat = (cdf + 2.0 * np.arange(rows.shape[0])[:, None]).ravel()
        self._lower = np.concatenate([np.zeros((rows.shape[0], 1)), cdf[:, :-1]], axis=1)
        self._cdf = cdf

    def draw(self, row: np.ndarray, u: np.ndarray) -> np.ndarray:
        pos = np.searchsorted(self._flat, u + 2.0 * row, side="right")
        j = np.minimum(pos - row * self.n_cells, self.n_cells - 1)
        lo = self._lower[row, j]
        hi = self._cdf[row, j]
        frac = np.clip((u - lo) / np.where(hi > lo, hi - lo, 1.0), 0.0, 1.0)
        return self.y[j] + frac * (self.y[1] - self.y[0])


def _row_coordinates(y: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h = y[1] - y[0]
    pos = np.clip((values - y[0]) / h, 0.0, y.size - 1 - 1e-12)
    i = np.floor(pos).astype(int)
    return i, pos - i


def _interp_rows(table: np.ndarray, y: np.ndarray, values: np.ndarray) -> np.ndarray:
    i, w = _row_coordinates(y, values)
    return (1.0 - w)[:, None] * table[i] + w[:, None] * table[i + 1]


class KernelCache:
    """Heat kernels of the full discrete basis, computed once per time."""

    def __init__(self, basis: SpectralData):
        self.basis = basis
        self._get = lru_cache(maxsize=32)(self._kernel)

    def _kernel(self, t: float) -> np.ndarray:
        b = self.basis
        k = b.psis.T @ (np.exp(-b.lambdas * t)[:, None] * b.psis)
        return np.clip(k, 0.0, None)

    def __call__(self, t: float) -> np.ndarray:
        return self._get(float(t))


# ------------------------------------------------------------ infinite volume


def transition_matrix(basis: SpectralData, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """Rows p(y_i, .) of the infinite-volume chain and the trusted-row mask."""
    k = basis.psis.T @ (np.exp(-basis.lambdas * spacing)[:, None] * basis.psis)
    psi0 = basis.ground_state
    trusted = psi0 > 1e-8 * psi0.max()
    safe = np.where(trusted, psi0, 1.0)
    p = k * psi0[None, :] / safe[:, None]
    return p, trusted


def transition_row_error(basis: SpectralData, spacing: float) -> float:
    """Largest deviation of a trusted transition row's mass from one."""
    p, trusted = transition_matrix(basis, spacing)
    return float(np.abs(basis.h * p[trusted].sum(axis=1) - 1.0).max())


def detailed_balance_error(basis: SpectralData, spacing: float) -> float:
    p, trusted = transition_matrix(basis, spacing)
    rho = basis.ground_state**2
    flux = rho[:, None] * p
    sub = np.ix_(trusted, trusted)
    return float(np.abs(flux[sub] - flux[sub].T).max())


@dataclass
class InfiniteChain:
    basis: SpectralData
    spacing: float
    _start: RowSampler = field(init=False, repr=False)
    _step: RowSampler = field(init=False, repr=False)

    def __post_init__(self):
        p, trusted = transition_matrix(self.basis, self.spacing)
        # rows that are never reached in practice still need a valid law
        p[~trusted] = np.clip(p[~trusted], 0.0, None)
        self._start = RowSampler(self.basis.ground_state[None, :] ** 2, self.basis.y)
        self._step = RowSampler(np.clip(p, 0.0, None), self.basis.y)

    def sample(self, n_sites: int, n_samples: int, gen: np.random.Generator) -> np.ndarray:
        out = np.empty((n_samples, n_sites))
        zeros = np.zeros(n_samples, dtype=int)
        out[:, 0] = self._start.draw(zeros, gen.random(n_samples))
        y = self.basis.y
        for j in range(1, n_sites):
            i, w = _row_coordinates(y, out[:, j - 1])
            row = i + (gen.random(n_samples) < w)
            out[:, j] = self._step.draw(row, gen.random(n_samples))
        return out


def sample_infinite(
    sd: SpectralData,
    n_sites: int,
    spacing: float,
    rng,
    n_samples: int = 1,
) -> np.ndarray:
    """Draw ``n_samples`` chains (q(x_1), ..., q(x_n)) at lattice ``spacing``.

    ``sd`` should hold the full discrete basis (see ``full_basis``) so the
    short-time kernel is not truncated.
    """
    chain = InfiniteChain(sd, spacing)
    return chain.sample(n_sites, n_samples, rng_mod.as_generator(rng))


# ------------------------------------------------------------------ periodic


def periodic_marginal(sd: SpectralData, half_period: float) -> np.ndarray:
    """Site density diag(K_{2L}) / tr K_{2L} on the value grid."""
    decay = np.exp(-2.0 * half_period * sd.lambdas)
    diag = decay @ sd.psis**2
    return diag / (sd.h * diag.sum())


def _bridge(kh: np.ndarray, y: np.ndarray, ya: np.ndarray, yb: np.ndarray, u: np.ndarray):
    h = y[1] - y[0]
    dens = _interp_rows(kh, y, ya) * _interp_rows(kh, y, yb)
    masses = cell_masses(dens, h)
    ok = masses.sum(axis=1) > DENOMINATOR_FLOOR
    return inverse_cdf(masses, u, y), ok


@dataclass
class PeriodicSampler:
    basis: SpectralData
    half_period: float
    n_sites: int
    kernels: KernelCache = field(init=False, repr=False)

    def __post_init__(self):
        n = self.n_sites
        if n < 2 or n & (n - 1):
            raise ValueError("n_sites must be a power of two (at least 2)")
        self.kernels = KernelCache(self.basis)
        self._start = RowSampler(periodic_marginal(self.basis, self.half_period)[None, :], self.basis.y)

    @property
    def truncation_bound(self) -> float:
        return float(math.exp(-2.0 * self.half_period * self.basis.lambdas[-1]))

    def _fill(self, gen: np.random.Generator, n_samples: int) -> tuple[np.ndarray, np.ndarray]:
        n, y = self.n_sites, self.basis.y
        out = np.empty((n_samples, n))
        out[:, 0] = self._start.draw(np.zeros(n_samples, dtype=int), gen.random(n_samples))
        ok = np.ones(n_samples, dtype=bool)
        stride = n
        while stride > 1:
            half = stride // 2
            kh = self.kernels(half * 2.0 * self.half_period / n)
            left = np.arange(0, n, stride)
            right = (left + stride) % n
            mid = left + half
            ya = out[:, left].ravel()
            yb = out[:, right].ravel()
            u = gen.random(ya.size)
            draws = np.empty_like(ya)
            good = np.empty(ya.size, dtype=bool)
            for s in range(0, ya.size, CHUNK):
                sl = slice(s, s + CHUNK)
                draws[sl], good[sl] = _bridge(kh, y, ya[sl], yb[sl], u[sl])
            out[:, mid] = draws.reshape(n_samples, -1)
            ok &= good.reshape(n_samples, -1).all(axis=1)
            stride = half
        return out, ok

    def sample(self, n_samples: int, gen: np.random.Generator) -> np.ndarray:
        out, ok = self._fill(gen, n_samples)
        for _ in range(MAX_RETRIES):
            if ok.all():
                return out
            redo, ok_redo = self._fill(gen, int((~ok).sum()))
            out[~ok] = redo
            ok[~ok] = ok_redo
        if not ok.all():
            raise RuntimeError("bridge denominators underflowed after repeated retries")
        return out


def sample_periodic(
    sd: SpectralData,
    half_period: float,
    n_sites: int,
    rng,
    n_samples: int = 1,
) -> np.ndarray:
    """Periodic Gibbs fields on the grid x_j = -L + j * 2L / n_sites."""
    sampler = PeriodicSampler(sd, half_period, n_sites)
    return sampler.sample(n_samples, rng_mod.as_generator(rng))


# ----------------------------------------------------------------- diffusion


@dataclass
class SdeResult:
    paths: np.ndarray
    reflections: int
    window: tuple[float, float]


def sample_sde(
    sd: SpectralData,
    x_max: float,
    dx: float,
    rng,
    n_paths: int = 1,
    record_every: int = 1,
) -> SdeResult:
    """Euler-Maruyama paths of dq = b(q) dx + dB started from psi_0^2."""
    if dx > 1e-3:
        raise ValueError("dx must not exceed 1e-3")
    gen = rng_mod.as_generator(rng)
    b = drift(sd)
    lo, hi = b.window
    start = RowSampler(sd.ground_state[None, :] ** 2, sd.y)
    q = start.draw(np.zeros(n_paths, dtype=int), gen.random(n_paths))
    n_steps = int(round(x_max / dx))
    rows = [q.copy()]
    reflections = 0
    sqdx = math.sqrt(dx)
    for j in range(1, n_steps + 1):
        q = q + b(q) * dx + sqdx * gen.standard_normal(n_paths)
        out = (q < lo) | (q > hi)
        if out.any():
            reflections += int(out.sum())
            q = np.where(q > hi, 2 * hi - q, np.where(q < lo, 2 * lo - q, q))
        if j % record_every == 0:
            rows.append(q.copy())
    if reflections:
        warnings.warn(f"{reflections} steps left the trusted drift window and were reflected", ReflectionWarning)
    return SdeResult(np.stack(rows, axis=1), reflections, (lo, hi))


# ----------------------------------------------------------------- coupling


def maximal_couple(f_x: np.ndarray, f_y: np.ndarray, x_draw, rng, y: np.ndarray) -> np.ndarray:
    """Maximal coupling of X ~ f_x with a draw Y ~ f_y on the grid ``y``.

    Densities are read as piecewise constant on grid cells (the law produced
    by ``inverse_cdf``). Y = X whenever U f_x(X) <= min(f_x, f_y)(X);
    otherwise Y is drawn from the normalized residual f_y - min(f_x, f_y).
    """
    f_x = np.asarray(f_x, dtype=float)
    f_y = np.asarray(f_y, dtype=float)
    if f_x.shape != f_y.shape or f_x.shape != y.shape:
        raise ValueError("densities must be tabulated on the same grid")
    h = y[1] - y[0]
    cx = cell_masses(f_x, h) / h
    cy = cell_masses(f_y, h) / h
    for c in (cx, cy):
        if abs(c.sum() * h - 1.0) > 1e-6:
            raise ValueError("densities must integrate to one within 1e-6")
    gen = rng_mod.as_generator(rng)
    x = np.atleast_1d(np.asarray(x_draw, dtype=float))
    cell = np.clip(((x - y[0]) / h).astype(int), 0, cx.size - 1)
    overlap = np.minimum(cx, cy)
    accept = gen.random(x.size) * cx[cell] <= overlap[cell]
    residual = (cy - overlap) * h
    out = x.copy()
    n_rej = int((~accept).sum())
    if n_rej:
        if residual.sum() <= 0:
            raise RuntimeError("rejection with zero residual mass")
        out[~accept] = inverse_cdf(np.broadcast_to(residual, (n_rej, residual.size)), gen.random(n_rej), y)
    return out


def sample_density(f: np.ndarray, y: np.ndarray, rng, size: int) -> np.ndarray:
    sampler = RowSampler(np.asarray(f, dtype=float)[None, :], y)
    gen = rng_mod.as_generator(rng)
    return sampler.draw(np.zeros(size, dtype=int), gen.random(size))


def tv_distance(f_x: np.ndarray, f_y: np.ndarray, y: np.ndarray) -> float:
    """Total variation of the cell-constant laws of two tabulated densities."""
    h = y[1] - y[0]
    return float(0.5 * np.abs(cell_masses(f_x, h) - cell_masses(f_y, h)).sum())


def grid_cdf(f: np.ndarray, y: np.ndarray):
    """CDF of the cell-constant law, as a callable on real arguments."""
    masses = cell_masses(np.asarray(f, dtype=float), y[1] - y[0])
    c = np.concatenate([[0.0], np.cumsum(masses)])
    c /= c[-1]
    return lambda t: np.interp(t, y, c)


# ----------------------------------------------------------------- estimator


class GibbsSampler(BaseEstimator):
    """Lattice samples of the periodic or infinite-volume Gibbs process.

    Parameters
    ----------
    mu : float
        Chemical potential.
    half_period : float
        Half-length L of the torus (periodic kind) or of the sampled window.
    n_sites : int
        Number of lattice sites; a power of two for the periodic kind.
    kind : {"periodic", "infinite"}
        Trace-class torus marginals or the stationary chain on a line segment.
    y_max, m : float, int
        Value grid of the oscillator.
    random_state : int or None
        Seed of the counter-based block streams.
    """

    def __init__(
        self,
        mu: float = 0.0,
        half_period: float = 4.0,
        n_sites: int = 128,
        kind: str = "periodic",
        y_max: float = 6.0,
        m: int = 1200,
        random_state: int | None = 0,
    ):
        self.mu = mu
        self.half_period = half_period
        self.n_sites = n_sites
        self.kind = kind
        self.y_max = y_max
        self.m = m
        self.random_state = random_state

    def fit(self, X=None, y=None):
        if self.kind not in ("periodic", "infinite"):
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.n_sites < 2 or self.n_sites % 2:
            raise ValueError("n_sites must be even")
        spec = OscillatorSpec(mu=self.mu, y_max=self.y_max, m=self.m)
        self.spectrum_ = build_spectrum(spec)
        self.basis_ = full_basis(spec)
        self.spacing_ = 2.0 * self.half_period / self.n_sites
        if self.kind == "periodic":
            self.engine_ = PeriodicSampler(self.basis_, self.half_period, self.n_sites)
        else:
            self.engine_ = InfiniteChain(self.basis_, self.spacing_)
        return self

    def sample(self, n_samples: int = 1, seed: int | None = None) -> np.ndarray:
        """Return an ``(n_samples, n_sites)`` array of independent fields.

        Block ``i`` of ``rng.BLOCK_SIZE`` members always uses stream ``i``
        of the seed, so the output does not depend on scheduling.
        """
        check_is_fitted(self, "engine_")
        if n_samples < 1:
            raise ValueError("n_samples must be positive")
        seed = self.random_state if seed is None else seed
        slices = rng_mod.block_slices(n_samples)
        gens = rng_mod.block_generators(seed, len(slices))
        out = np.empty((n_samples, self.n_sites))
        for sl, gen in zip(slices, gens):
            count = sl.stop - sl.start
            if self.kind == "periodic":
                out[sl] = self.engine_.sample(count, gen)
            else:
                out[sl] = self.engine_.sample(self.n_sites, count, gen)
        return out

    def marginal_density(self) -> np.ndarray:
        check_is_fitted(self, "engine_")
        if self.kind == "periodic":
            return periodic_marginal(self.basis_, self.half_period)
        return self.basis_.ground_state**2
