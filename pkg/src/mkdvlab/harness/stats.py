"""Ensemble statistics with standard errors.

Every test returns a ``Statistic`` carrying its effect size, standard
error, p-value and the threshold it was judged against.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

# two-sided family-wise level of a 3-sigma rule
FAMILY_ALPHA = 2.0 * stats.norm.sf(3.0)


@dataclass(frozen=True)
class Statistic:
    name: str
    effect: float
    std_error: float
    p_value: float
    alpha: float
    detail: dict

    @property
    def passes(self) -> bool:
        return self.p_value > self.alpha

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passes"] = self.passes
        return d


def bonferroni(n_tests: int, family_alpha: float = FAMILY_ALPHA) -> float:
    return family_alpha / max(1, n_tests)


def pairing(q: np.ndarray, phi: np.ndarray, dx: float) -> np.ndarray:
    """Riemann pairing <q, phi> = dx sum_j q_j phi_j over the last axis."""
    return dx * (q @ phi)


def characteristic(q: np.ndarray, phi: np.ndarray, dx: float) -> np.ndarray:
    return np.exp(1j * pairing(q, phi, dx))


def complex_mean_test(z: np.ndarray, name: str, alpha: float, scale: float | None = None) -> Statistic:
    """Test E[z] = 0 for i.i.d. complex samples with a 2-dof Hotelling statistic.

    ``effect`` is |mean z| and ``std_error`` the standard error of the
    component along the mean direction.
    """
    z = np.asarray(z).ravel()
    n = z.size
    xy = np.column_stack([z.real, z.imag])
    mean = xy.mean(axis=0)
    cov = np.cov(xy, rowvar=False) / n
    if np.allclose(cov, 0.0) and np.allclose(mean, 0.0):
        return Statistic(name, 0.0, 0.0, 1.0, alpha, {"n": n, "t2": 0.0})
    # pseudo-inverse guards against exactly degenerate components
    t2 = float(mean @ np.linalg.pinv(cov) @ mean)
    rank = np.linalg.matrix_rank(cov)
    p = float(stats.chi2.sf(t2, df=max(rank, 1)))
    direction = mean / (np.linalg.norm(mean) or 1.0)
    se = float(np.sqrt(direction @ cov @ direction))
    detail = {"n": n, "t2": t2, "mean_real": float(mean[0]), "mean_imag": float(mean[1])}
    if scale is not None:
        detail["scale"] = scale
    return Statistic(name, float(np.hypot(*mean)), se, p, alpha, detail)


def ks_two_sample(a: np.ndarray, b: np.ndarray, name: str, alpha: float) -> Statistic:
    res = stats.ks_2samp(a, b)
    n, m = len(a), len(b)
    se = float(np.sqrt((n + m) / (n * m)))  # scale of the null statistic
    return Statistic(name, float(res.statistic), se, float(res.pvalue), alpha, {"n": n, "m": m})


def ks_one_sample(a: np.ndarray, cdf, name: str, alpha: float) -> Statistic:
    res = stats.kstest(a, cdf)
    se = float(1.0 / np.sqrt(len(a)))
    return Statistic(name, float(res.statistic), se, float(res.pvalue), alpha, {"n": len(a)})


def batch_means_se(x: np.ndarray, n_batches: int = 20) -> float:
    """Standard error of the mean of a possibly correlated series."""
    x = np.asarray(x, dtype=float).ravel()
    n_batches = min(n_batches, x.size)
    batches = np.array_split(x, n_batches)
    means = np.array([b.mean() for b in batches])
    return float(means.std(ddof=1) / np.sqrt(n_batches))


@dataclass(frozen=True)
class EnsembleStats:
    """Summary of an ensemble of lattice fields."""

    bin_edges: np.ndarray
    histogram: np.ndarray  # probability mass per bin, sums to 1
    char_values: np.ndarray  # complex estimates, one per test function
    char_std_errors: np.ndarray
    separations: np.ndarray
    covariance: np.ndarray
    covariance_std_errors: np.ndarray


def ensemble_stats(q: np.ndarray, dx: float, phis, bins: int = 60, max_lag: int | None = None,
                   n_batches: int = 20) -> EnsembleStats:
    q = np.atleast_2d(q)
    counts, edges = np.histogram(q.ravel(), bins=bins)
    hist = counts / counts.sum()
    chars, ses = [], []
    for phi in phis:
        c = characteristic(q, phi, dx)
        chars.append(c.mean())
        ses.append(np.hypot(batch_means_se(c.real, n_batches), batch_means_se(c.imag, n_batches)))
    n = q.shape[-1]
    max_lag = n // 2 if max_lag is None else max_lag
    lags = np.arange(max_lag + 1)
    qc = q - q.mean()
    cov, cov_se = [], []
    for lag in lags:
        prod = np.mean(qc[:, : n - lag] * qc[:, lag:], axis=-1)
        cov.append(prod.mean())
        cov_se.append(batch_means_se(prod, n_batches))
    return EnsembleStats(edges, hist, np.array(chars), np.array(ses), lags * dx, np.array(cov), np.array(cov_se))
