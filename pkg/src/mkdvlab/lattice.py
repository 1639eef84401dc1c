from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import spectral


@dataclass(frozen=True)
class LatticeField:
    """Samples of a real field on the periodic grid of ``[-L, L)``."""

    half_period: float
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise ValueError("LatticeField holds a single field; use 2-D arrays for ensembles")
        if values.size < 2 or values.size % 2:
            raise ValueError(f"number of sites must be even and positive, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        if self.half_period <= 0:
            raise ValueError("half_period must be positive")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def dx(self) -> float:
        return 2.0 * self.half_period / self.n

    @property
    def x(self) -> np.ndarray:
        return spectral.grid(self.n, self.half_period)

    @classmethod
    def from_function(cls, func, n: int, half_period: float) -> "LatticeField":
        return cls(half_period, func(spectral.grid(n, half_period)))


def check_ensemble(q, min_sites: int = 2) -> np.ndarray:
    """Coerce ``q`` to a float array whose last axis has an even length."""
    q = np.asarray(q, dtype=float)
    if q.ndim == 0:
        raise ValueError("expected an array of field samples")
    n = q.shape[-1]
    if n < min_sites or n % 2:
        raise ValueError(f"number of sites must be even and >= {min_sites}, got {n}")
    if not np.all(np.isfinite(q)):
        raise ValueError("field values must be finite")
    return q


def unpack(q, half_period: float | None = None) -> tuple[np.ndarray, float]:
    """Return ``(values, half_period)`` from a ``LatticeField`` or a raw array."""
    if isinstance(q, LatticeField):
        if half_period is not None and half_period != q.half_period:
            raise ValueError("half_period disagrees with the field")
        return q.values, q.half_period
    if half_period is None:
        raise ValueError("half_period is required for raw arrays")
    return check_ensemble(q), float(half_period)


def smooth_random_field(rng: np.random.Generator, n: int, half_period: float, modes: int = 4,
                        amplitude: float = 1.0) -> np.ndarray:
    """Band-limited random field with ``modes`` Fourier modes, 1/j^2 spectrum and sup norm ``amplitude``."""
    x = spectral.grid(n, half_period)
    j = np.arange(1, modes + 1)
    a, b = rng.normal(size=(2, modes)) / j**2
    phase = np.pi / half_period * np.outer(j, x)
    f = a @ np.cos(phase) + b @ np.sin(phase)
    return amplitude * f / np.abs(f).max()
