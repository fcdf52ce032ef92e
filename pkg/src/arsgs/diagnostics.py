"""Autocorrelations, batch-means asymptotic variances and the Kipnis-Varadhan check."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import TooShort, ZeroVariance

MIN_LENGTH = 100


@dataclass
class AcfResult:
    lags: np.ndarray
    values: np.ndarray


@dataclass
class AsvarReport:
    per_coordinate: np.ndarray  # nan for excluded coordinates
    max_value: float
    max_index: int
    excluded: list = field(default_factory=list)
    names: Optional[list] = None

    def to_dict(self) -> dict:
        names = self.names or [f"x_{j + 1}" for j in range(len(self.per_coordinate))]
        return {
            "per_coordinate": {n: (None if math.isnan(v) else float(v)) for n, v in zip(names, self.per_coordinate)},
            "max_value": float(self.max_value),
            "max_index": int(self.max_index),
            "max_name": names[self.max_index] if self.max_index >= 0 else None,
            "excluded": [names[j] for j in self.excluded],
        }


def acf(series, max_lag: int) -> AcfResult:
    """Biased sample autocorrelation ``c_k / c_0`` for ``k = 0..max_lag``."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if max_lag < 0 or n <= max_lag:
        raise TooShort(f"series of length {n} is too short for lag {max_lag}")
    xc = x - x.mean()
    c0 = float(xc @ xc) / n
    if c0 <= 0.0:
        raise ZeroVariance("constant series has no autocorrelation")
    nfft = 1 << int(math.ceil(math.log2(2 * n)))
    spec = np.fft.rfft(xc, nfft)
    cov = np.fft.irfft(spec * np.conj(spec), nfft)[: max_lag + 1] / n
    values = np.clip(cov / c0, -1.0, 1.0)
    values[0] = 1.0
    return AcfResult(lags=np.arange(max_lag + 1), values=values)


def batch_means_asvar(series) -> float:
    """Batch size ``floor(sqrt(N))``; returns ``batch_size * var(batch means)``."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if n < MIN_LENGTH:
        raise TooShort(f"need at least {MIN_LENGTH} points, got {n}")
    size = math.isqrt(n)
    count = n // size
    means = x[: size * count].reshape(count, size).mean(axis=1)
    return float(size * means.var(ddof=1))


def worst_linear_asvar(states, names: Optional[Sequence[str]] = None, columns: Optional[Sequence[int]] = None) -> AsvarReport:
    """Asymptotic variance of each ``x_j / sd(x_j)``; the maximum marks the worst linear probe.

    Constant coordinates are listed in ``excluded`` instead of raising.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.shape[0] == 0:
        raise TooShort("empty chain")
    d = states.shape[1]
    use = range(d) if columns is None else columns
    per = np.full(d, np.nan)
    excluded = []
    for j in use:
        col = states[:, j]
        sd = col.std(ddof=1) if col.size > 1 else 0.0
        if not sd > 0.0:
            excluded.append(j)
            continue
        per[j] = batch_means_asvar((col - col.mean()) / sd)
    if np.all(np.isnan(per)):
        return AsvarReport(per, float("nan"), -1, excluded, list(names) if names else None)
    idx = int(np.nanargmax(per))
    return AsvarReport(per, float(per[idx]), idx, excluded, list(names) if names else None)


@dataclass
class KvCheck:
    lhs: float
    rhs: float
    satisfied: bool


def kv_bound_check(asvar: float, gap: float, var_pi: float, slack: float = 0.2) -> KvCheck:
    """``asvar <= (2 - gap) / gap * var_pi``, allowing a relative statistical slack."""
    if not 0.0 < gap <= 1.0:
        raise ValueError("gap must lie in (0, 1]")
    rhs = (2.0 - gap) / gap * var_pi
    return KvCheck(lhs=float(asvar), rhs=float(rhs), satisfied=bool(asvar <= rhs * (1.0 + slack)))


def ljung_box(series, lags: int = 20) -> float:
    """``N (N + 2) sum_k rho_k^2 / (N - k)`` over the first ``lags`` autocorrelations."""
    x = np.asarray(series, dtype=float)
    n = x.size
    rho = acf(x, lags).values[1:]
    return float(n * (n + 2) * np.sum(rho**2 / (n - np.arange(1, lags + 1))))


def write_acf_csv(path, curves: dict) -> None:
    """One column per series, first column the lag."""
    names = list(curves)
    if not names:
        raise ValueError("no ACF curves to write")
    lags = curves[names[0]].lags
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lag"] + names)
        for k, lag in enumerate(lags):
            w.writerow([int(lag)] + [repr(float(curves[n].values[k])) for n in names])
