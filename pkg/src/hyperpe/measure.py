"""White-noise (enstrophy) measure: sampling and marginal statistics."""

import json
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.special import kolmogorov, ndtr

from .rng import STREAM_INIT, derive_seed, mode_normals
from .spectral import SpectralField, disk_mask

__all__ = [
    "EnsembleSample",
    "MarginalReport",
    "sample_mu",
    "sample_mu_array",
    "sample_ensemble",
    "coupling",
    "marginal_stats",
    "ks_columns",
    "write_manifest",
]


def sample_mu_array(m: int, seeds) -> np.ndarray:
    """i.i.d. N(0,1) coefficients on the disk for each seed, shape (R, m+1, m+1).

    Coefficient ``k`` of replica ``r`` depends only on ``(seeds[r], k)``, so
    restricting to a smaller cutoff reproduces the smaller sample exactly.
    """
    if m < 1:
        raise ValueError(f"cutoff must be positive, got m={m}")
    seeds = np.atleast_1d(np.asarray(seeds, dtype=np.uint64))
    mask = disk_mask(m)
    k1, k2 = np.nonzero(mask)
    out = np.zeros((len(seeds), m + 1, m + 1))
    out[:, k1, k2] = mode_normals(seeds, k1, k2, 0, STREAM_INIT)
    return out


def sample_mu(m: int, seed: int) -> SpectralField:
    """One draw from mu truncated at m.  Deterministic in ``(m, seed)``."""
    return SpectralField(m, sample_mu_array(m, [seed])[0])


@dataclass(frozen=True)
class EnsembleSample:
    fields: List[SpectralField]
    seed_manifest: List[int]
    master_seed: int = None

    def __post_init__(self):
        if len(self.fields) != len(self.seed_manifest):
            raise ValueError("seed list length must equal ensemble size")
        if len({f.m for f in self.fields}) > 1:
            raise ValueError("all ensemble members must share one cutoff")

    @property
    def m(self) -> int:
        return self.fields[0].m

    def __len__(self):
        return len(self.fields)

    def stack(self) -> np.ndarray:
        return np.stack([f.coeffs for f in self.fields])


def sample_ensemble(m: int, master_seed: int, size: int) -> EnsembleSample:
    seeds = [derive_seed(master_seed, r) for r in range(size)]
    arr = sample_mu_array(m, seeds)
    return EnsembleSample([SpectralField(m, a) for a in arr], seeds, master_seed)


def write_manifest(ensemble: EnsembleSample, path) -> None:
    doc = {
        "master_seed": ensemble.master_seed,
        "m": ensemble.m,
        "size": len(ensemble),
        "replica_seeds": [int(s) for s in ensemble.seed_manifest],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)


def coupling(f: SpectralField, g: SpectralField) -> float:
    """<f, g> = sum_k f_k g_k over the common support."""
    m = min(f.m, g.m)
    return float(np.sum(f.coeffs[: m + 1, : m + 1] * g.coeffs[: m + 1, : m + 1]))


@dataclass
class MarginalReport:
    modes: np.ndarray  # (n_modes, 2)
    mean: np.ndarray
    variance: np.ndarray
    ks_statistic: np.ndarray
    p_value: np.ndarray
    size: int = 0
    extra: dict = field(default_factory=dict)


def ks_columns(samples: np.ndarray):
    """Two-sided one-sample KS against N(0,1), column by column.

    Returns ``(D, p)``; ``p`` uses the asymptotic Kolmogorov distribution and
    is NaN for fewer than 100 samples.
    """
    x = np.sort(np.asarray(samples, dtype=np.float64), axis=0)
    n = x.shape[0]
    cdf = ndtr(x)
    i = np.arange(1, n + 1)[:, None]
    d = np.maximum((i / n - cdf).max(axis=0), (cdf - (i - 1) / n).max(axis=0))
    if n >= 100:
        p = kolmogorov(np.sqrt(n) * d)
    else:
        p = np.full(d.shape, np.nan)
    return d, p


def marginal_stats(ensemble) -> MarginalReport:
    """Per-mode mean, variance and KS test of an ensemble against N(0,1).

    ``ensemble`` may be an :class:`EnsembleSample` or an array of shape
    ``(R, m+1, m+1)``.
    """
    arr = ensemble.stack() if isinstance(ensemble, EnsembleSample) else np.asarray(ensemble)
    if arr.ndim != 3 or arr.shape[0] == 0:
        raise ValueError("ensemble is empty")
    if arr.shape[0] < 2:
        raise ValueError("marginal statistics need at least two replicas")
    m = arr.shape[-1] - 1
    k1, k2 = np.nonzero(disk_mask(m))
    cols = arr[:, k1, k2]
    d, p = ks_columns(cols)
    return MarginalReport(
        modes=np.stack([k1, k2], axis=1),
        mean=cols.mean(axis=0),
        variance=cols.var(axis=0, ddof=1),
        ks_statistic=d,
        p_value=p,
        size=arr.shape[0],
    )
