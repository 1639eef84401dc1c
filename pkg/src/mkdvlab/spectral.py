"""Fourier tools on the periodic grid x_j = -L + j * 2L / n.

All routines act on the last axis so that ensembles of fields, stored as
``(n_samples, n_sites)`` arrays, are handled in one call.
"""

from __future__ import annotations

import numpy as np


def grid(n: int, half_period: float) -> np.ndarray:
    return -half_period + (2.0 * half_period / n) * np.arange(n)


def wavenumbers(n: int, half_period: float) -> np.ndarray:
    """Nonnegative wavenumbers matching ``np.fft.rfft`` of length ``n``."""
    return np.pi / half_period * np.arange(n // 2 + 1)


def odd_wavenumbers(n: int, half_period: float) -> np.ndarray:
    """Wavenumbers for odd-order symbols: the Nyquist entry is zeroed."""
    k = wavenumbers(n, half_period)
    if n % 2 == 0:
        k[-1] = 0.0
    return k


def rfft(f: np.ndarray) -> np.ndarray:
    return np.fft.rfft(f, axis=-1)


def irfft(fh: np.ndarray, n: int) -> np.ndarray:
    return np.fft.irfft(fh, n=n, axis=-1)


def derivative(f: np.ndarray, half_period: float, order: int = 1) -> np.ndarray:
    n = f.shape[-1]
    k = odd_wavenumbers(n, half_period) if order % 2 else wavenumbers(n, half_period)
    return irfft((1j * k) ** order * rfft(f), n)


def apply_symbol(f: np.ndarray, symbol: np.ndarray) -> np.ndarray:
    """Apply a Fourier multiplier given on the ``rfft`` wavenumbers."""
    return irfft(symbol * rfft(f), f.shape[-1])


def translate(f: np.ndarray, half_period: float, shift) -> np.ndarray:
    """Return ``x -> f(x + shift)`` of the trigonometric interpolant.

    ``shift`` may be a scalar or an array broadcastable against the leading
    axes of ``f`` (one shift per ensemble member).
    """
    n = f.shape[-1]
    k = wavenumbers(n, half_period)
    shift = np.asarray(shift, dtype=float)[..., None]
    return irfft(np.exp(1j * k * shift) * rfft(f), n)


def upsample(f: np.ndarray, n_fine: int) -> np.ndarray:
    """Evaluate the trigonometric interpolant of ``f`` on a finer grid.

    The Nyquist coefficient is split evenly between +k and -k so that the
    interpolant is real and agrees with ``f`` on the coarse grid.
    """
    n = f.shape[-1]
    fh = rfft(f)
    pad = np.zeros(f.shape[:-1] + (n_fine // 2 + 1,), dtype=complex)
    pad[..., : n // 2 + 1] = fh
    if n % 2 == 0:
        pad[..., n // 2] *= 0.5
    return irfft(pad, n_fine) * (n_fine / n)


def downsample(f: np.ndarray, n: int) -> np.ndarray:
    """Truncate the spectrum of a fine-grid field to ``n`` modes."""
    n_fine = f.shape[-1]
    fh = rfft(f)[..., : n // 2 + 1].copy()
    if n % 2 == 0:
        fh[..., n // 2] *= 2.0
    return irfft(fh, n) * (n / n_fine)


def dealiased_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Product of two trigonometric interpolants, truncated to the grid modes."""
    n = a.shape[-1]
    n_fine = 2 * n
    return downsample(upsample(a, n_fine) * upsample(b, n_fine), n)


def sobolev_norm(f: np.ndarray, half_period: float, s: float) -> np.ndarray:
    """Discrete H^s norm, ``(2L sum_k (1 + k^2)^s |f_k|^2)^(1/2)``."""
    n = f.shape[-1]
    k = wavenumbers(n, half_period)
    fh = rfft(f) / n
    w = np.full(k.shape, 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    power = np.sum(w * (1.0 + k**2) ** s * np.abs(fh) ** 2, axis=-1)
    return np.sqrt(2.0 * half_period * power)
