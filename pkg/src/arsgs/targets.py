"""Target distributions with exact block full conditionals.

Every target works on a flat float state vector ``x`` and implements

* ``sample_block(x, i, rng)`` - redraw block ``i`` in place from its full conditional;
* ``run_gibbs(x, blocks, rng, out)`` - apply a sequence of block updates, writing
  the state after each update into ``out`` (fast path used by the drivers);
* ``log_conditional_ratio(x, i, value)`` - ``log pi(value | x_-i) - log pi(x_i | x_-i)``
  for coordinatewise Metropolis-within-Gibbs (continuous targets only).
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from scipy.special import log_ndtr, ndtri

from . import linalg
from .blockmodel import BlockPartition
from .errors import NotPositiveDefinite, NumericalUnderflow

TAIL_SWITCH = 5.0
LOG_TINY = math.log(1e-300)
_SQRT_HALF = math.sqrt(0.5)


def _ndtr(x: float) -> float:
    return 0.5 * math.erfc(-x * _SQRT_HALF)


class Target:
    """Base class; subclasses fill in ``d``, ``partition`` and the conditionals."""

    d: int
    partition: BlockPartition
    supports_mwg: bool = True

    def initial_point(self) -> np.ndarray:
        return np.zeros(self.d)

    def column_names(self) -> list:
        return [f"x_{j + 1}" for j in range(self.d)]

    def regimes_of(self, x) -> Optional[np.ndarray]:
        """Discrete part of the state, if the target has one."""
        return None

    def default_ridge(self) -> float:
        return 0.0

    def sample_block(self, x: np.ndarray, i: int, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def run_gibbs(self, x: np.ndarray, blocks, rng: np.random.Generator, out: Optional[np.ndarray] = None) -> None:
        for t, i in enumerate(blocks):
            self.sample_block(x, int(i), rng)
            if out is not None:
                out[t] = x

    def log_conditional_ratio(self, x: np.ndarray, i: int, value: float) -> float:
        raise NotImplementedError(f"{type(self).__name__} has no Metropolis conditional")


class GaussianTarget(Target):
    """``N(mean, Q^{-1})`` with exact block conditionals

    ``x_i | x_-i ~ N(mu_i - Q_ii^{-1} Q_{i,-i} (x_-i - mu_-i), Q_ii^{-1})``.
    """

    def __init__(self, precision, mean=None, partition: Optional[BlockPartition] = None):
        self.precision = linalg.as_symmetric(precision, "precision")
        self.d = self.precision.shape[0]
        self.mean = np.zeros(self.d) if mean is None else np.asarray(mean, dtype=float)
        if self.mean.shape != (self.d,):
            raise ValueError("mean has the wrong length")
        self.partition = BlockPartition.coordinatewise(self.d) if partition is None else partition
        if self.partition.d != self.d:
            raise ValueError("partition does not match the dimension")
        linalg.cholesky(self.precision)  # PD check
        self._coef, self._shift, self._chol, self._cov = [], [], [], []
        for i in range(self.partition.s):
            sl = self.partition.slice(i)
            cov = linalg.invert_spd(self.precision[sl, sl])
            coef = cov @ self.precision[sl, :]
            self._cov.append(cov)
            self._coef.append(coef)
            self._shift.append(coef @ self.mean)
            self._chol.append(linalg.cholesky(cov))
        if self.partition.is_coordinatewise():
            self._coef_rows = np.array([c[0] for c in self._coef])
            self._shift_vec = np.array([s[0] for s in self._shift])
            self._sd = np.sqrt(np.array([c[0, 0] for c in self._cov]))

    @classmethod
    def from_covariance(cls, covariance, mean=None, partition=None) -> "GaussianTarget":
        return cls(linalg.invert_spd(covariance), mean, partition)

    def initial_point(self) -> np.ndarray:
        return self.mean.copy()

    def covariance(self) -> np.ndarray:
        return linalg.invert_spd(self.precision)

    def conditional(self, x, i: int):
        """Mean and covariance of block ``i`` given the rest."""
        x = np.asarray(x, dtype=float)
        sl = self.partition.slice(i)
        return x[sl] - self._coef[i] @ x + self._shift[i], self._cov[i]

    def sample_block(self, x, i, rng):
        mean, _ = self.conditional(x, i)
        sl = self.partition.slice(i)
        x[sl] = mean + self._chol[i] @ rng.standard_normal(self.partition.sizes[i])

    def run_gibbs(self, x, blocks, rng, out=None):
        blocks = np.asarray(blocks)
        if not self.partition.is_coordinatewise():
            rmax = max(self.partition.sizes)
            noise = rng.standard_normal((blocks.size, rmax))
            for t, i in enumerate(blocks):
                sl = self.partition.slice(i)
                x[sl] += self._shift[i] - self._coef[i] @ x + self._chol[i] @ noise[t, : self.partition.sizes[i]]
                if out is not None:
                    out[t] = x
            return
        noise = rng.standard_normal(blocks.size) * self._sd[blocks]
        coef, shift = self._coef_rows, self._shift_vec
        for t, i in enumerate(blocks.tolist()):
            x[i] += shift[i] - coef[i] @ x + noise[t]
            if out is not None:
                out[t] = x

    def log_conditional_ratio(self, x, i, value):
        m = x[i] - self._coef_rows[i] @ x + self._shift_vec[i]
        prec = self.precision[i, i]
        return -0.5 * prec * ((value - m) ** 2 - (x[i] - m) ** 2)


def truncnorm_standard(a: float, b: float, rng: np.random.Generator) -> float:
    """Draw from the standard normal restricted to ``[a, b]``.

    Inverse CDF (on the tail side that avoids cancellation) unless the whole
    interval sits more than 5 standard deviations out, where an exponential
    rejection sampler is used instead.
    """
    if not a < b:
        raise ValueError(f"empty interval [{a}, {b}]")
    if a > TAIL_SWITCH:
        return _tail_draw(a, b, rng)
    if b < -TAIL_SWITCH:
        return -_tail_draw(-b, -a, rng)
    u = rng.random()
    if a >= 0.0:
        sa, sb = _ndtr(-a), _ndtr(-b)
        mass = sa - sb
        if mass < 1e-300:
            raise NumericalUnderflow(f"interval [{a}, {b}] carries no mass")
        z = -float(ndtri(sa - u * mass))
    else:
        fa, fb = _ndtr(a), _ndtr(b)
        mass = fb - fa
        if mass < 1e-300:
            raise NumericalUnderflow(f"interval [{a}, {b}] carries no mass")
        z = float(ndtri(fa + u * mass))
    return min(max(z, a), b)


def _tail_draw(a: float, b: float, rng: np.random.Generator) -> float:
    la, lb = float(log_ndtr(-a)), float(log_ndtr(-b))
    log_mass = la + math.log1p(-math.exp(lb - la)) if lb < la else -math.inf
    if log_mass < LOG_TINY:
        raise NumericalUnderflow(f"interval [{a}, {b}] carries no mass")
    lam = 0.5 * (a + math.sqrt(a * a + 4.0))
    span = 1.0 - math.exp(-lam * (b - a)) if math.isfinite(b) else 1.0
    while True:
        z = a - math.log1p(-rng.random() * span) / lam
        if z <= b and math.log(rng.random()) <= -0.5 * (z - lam) ** 2:
            return z


def truncnorm_draw(mean: float, sd: float, lower: float, upper: float, rng: np.random.Generator) -> float:
    return mean + sd * truncnorm_standard((lower - mean) / sd, (upper - mean) / sd, rng)


class TmvnTarget(Target):
    """``N(0, sigma0)`` truncated to the box ``lower <= x <= upper`` (coordinatewise Gibbs)."""

    def __init__(self, sigma0, lower, upper):
        self.sigma0 = linalg.as_symmetric(sigma0, "sigma0")
        self.d = self.sigma0.shape[0]
        self.lower = np.broadcast_to(np.asarray(lower, dtype=float), (self.d,)).copy()
        self.upper = np.broadcast_to(np.asarray(upper, dtype=float), (self.d,)).copy()
        if np.any(self.lower >= self.upper):
            raise ValueError("lower bounds must be strictly below upper bounds")
        self.precision = linalg.invert_spd(self.sigma0)
        self.partition = BlockPartition.coordinatewise(self.d)
        diag = np.diag(self.precision)
        self._coef_rows = self.precision / diag[:, None]
        self._sd = 1.0 / np.sqrt(diag)

    def initial_point(self) -> np.ndarray:
        lo, hi = self.lower, self.upper
        x = np.where(np.isfinite(lo) & np.isfinite(hi), 0.5 * (lo + hi), 0.0)
        x = np.where(np.isfinite(lo) & ~np.isfinite(hi), lo + 1.0, x)
        x = np.where(~np.isfinite(lo) & np.isfinite(hi), hi - 1.0, x)
        return x

    def conditional(self, x, i: int):
        """Untruncated conditional mean and standard deviation of coordinate ``i``."""
        x = np.asarray(x, dtype=float)
        return x[i] - self._coef_rows[i] @ x, self._sd[i]

    def sample_block(self, x, i, rng):
        mean, sd = self.conditional(x, i)
        x[i] = truncnorm_draw(mean, sd, self.lower[i], self.upper[i], rng)

    def run_gibbs(self, x, blocks, rng, out=None):
        coef, sds, lo, hi = self._coef_rows, self._sd, self.lower, self.upper
        for t, i in enumerate(np.asarray(blocks).tolist()):
            mean = x[i] - coef[i] @ x
            sd = sds[i]
            x[i] = mean + sd * truncnorm_standard((lo[i] - mean) / sd, (hi[i] - mean) / sd, rng)
            if out is not None:
                out[t] = x

    def log_conditional_ratio(self, x, i, value):
        if not self.lower[i] <= value <= self.upper[i]:
            return -math.inf
        m = x[i] - self._coef_rows[i] @ x
        return -0.5 * ((value - m) ** 2 - (x[i] - m) ** 2) / self._sd[i] ** 2


class MsmTarget(Target):
    """Posterior of a two-regime Markov switching random walk observed with noise.

    State layout: ``x[:n]`` holds the latent ``X_1..X_n``; ``x[n:]`` holds the
    regimes ``r(1)..r(n)`` as floats in ``{0, 1}``. The model is

    * ``r(1)`` from the stationary law of the regime chain, transitions
      ``P(0 -> 1) = a1``, ``P(1 -> 0) = a2``;
    * ``X_i ~ N(X_{i-1}, sigma_{r(i)}^2)`` for ``i >= 2`` (flat on ``X_1``);
    * ``Y_i ~ N(X_i, beta^2)``.
    """

    supports_mwg = False

    def __init__(self, y, a1: float, a2: float, sigma0_sq: float, sigma1_sq: float, beta_sq: float):
        self.y = np.asarray(y, dtype=float)
        self.n = self.y.size
        if self.n < 1:
            raise ValueError("need at least one observation")
        if not (0 < a1 < 1 and 0 < a2 < 1):
            raise ValueError("switching probabilities must lie in (0, 1)")
        if min(sigma0_sq, sigma1_sq, beta_sq) <= 0:
            raise ValueError("variances must be positive")
        self.a1, self.a2 = float(a1), float(a2)
        self.var = (float(sigma0_sq), float(sigma1_sq))
        self.beta_sq = float(beta_sq)
        self.d = 2 * self.n
        self.partition = BlockPartition.coordinatewise(self.d)
        self.log_trans = np.log(np.array([[1 - a1, a1], [a2, 1 - a2]]))
        self.log_init = np.log(np.array([a2, a1]) / (a1 + a2))
        self._log_var = (math.log(self.var[0]), math.log(self.var[1]))

    def column_names(self) -> list:
        return [f"x_{j + 1}" for j in range(self.n)] + [f"r_{j + 1}" for j in range(self.n)]

    def initial_point(self) -> np.ndarray:
        return np.concatenate([self.y, np.zeros(self.n)])

    def regimes_of(self, x) -> np.ndarray:
        return np.asarray(x[self.n :]).astype(int)

    def default_ridge(self) -> float:
        return 1.0 / self.d**3

    def state_conditional(self, x, j: int):
        """Mean and variance of ``X_{j+1}`` given everything else (``j`` zero-based)."""
        n = self.n
        r = x[n:]
        prec = 1.0 / self.beta_sq
        num = self.y[j] / self.beta_sq
        if j > 0:
            v = self.var[int(r[j])]
            prec += 1.0 / v
            num += x[j - 1] / v
        if j < n - 1:
            v = self.var[int(r[j + 1])]
            prec += 1.0 / v
            num += x[j + 1] / v
        q = 1.0 / prec
        return q * num, q

    def regime_log_weights(self, x, j: int) -> np.ndarray:
        """Unnormalised log full-conditional of ``r(j+1)`` at values 0 and 1."""
        n = self.n
        r = x[n:]
        lw = np.zeros(2)
        if j == 0:
            lw += self.log_init
        else:
            lw += self.log_trans[int(r[j - 1]), :]
            diff2 = (x[j] - x[j - 1]) ** 2
            for k in (0, 1):
                lw[k] += -0.5 * self._log_var[k] - 0.5 * diff2 / self.var[k]
        if j < n - 1:
            lw += self.log_trans[:, int(r[j + 1])]
        return lw

    def regime_probability(self, x, j: int) -> float:
        """``P(r(j+1) = 1 | rest)``."""
        lw = self.regime_log_weights(x, j)
        return 1.0 / (1.0 + math.exp(lw[0] - lw[1]))

    def sample_block(self, x, i, rng):
        n = self.n
        if i < n:
            mean, q = self.state_conditional(x, i)
            x[i] = mean + math.sqrt(q) * rng.standard_normal()
        else:
            x[i] = 1.0 if rng.random() < self.regime_probability(x, i - n) else 0.0

    def run_gibbs(self, x, blocks, rng, out=None):
        blocks = np.asarray(blocks)
        noise = rng.standard_normal(blocks.size)
        unif = rng.random(blocks.size)
        n = self.n
        for t, i in enumerate(blocks.tolist()):
            if i < n:
                mean, q = self.state_conditional(x, i)
                x[i] = mean + math.sqrt(q) * noise[t]
            else:
                x[i] = 1.0 if unif[t] < self.regime_probability(x, i - n) else 0.0
            if out is not None:
                out[t] = x

    def log_joint(self, xs, regimes) -> float:
        """Unnormalised log posterior density at latent path ``xs`` and regimes."""
        xs = np.asarray(xs, dtype=float)
        r = np.asarray(regimes, dtype=int)
        total = self.log_init[r[0]]
        for i in range(1, self.n):
            total += self.log_trans[r[i - 1], r[i]]
            v = self.var[r[i]]
            total += -0.5 * math.log(2 * math.pi * v) - 0.5 * (xs[i] - xs[i - 1]) ** 2 / v
        total += np.sum(-0.5 * np.log(2 * math.pi * self.beta_sq) - 0.5 * (self.y - xs) ** 2 / self.beta_sq)
        return float(total)


def simulate_msm(n: int, a1: float, a2: float, sigma0_sq: float, sigma1_sq: float, beta_sq: float,
                 rng: np.random.Generator, regimes: Optional[Sequence[int]] = None):
    """Draw ``(X, r, Y)`` from the generative model; ``regimes`` may be fixed by the caller."""
    if regimes is None:
        r = np.empty(n, dtype=int)
        r[0] = int(rng.random() < a1 / (a1 + a2))
        for i in range(1, n):
            flip = a1 if r[i - 1] == 0 else a2
            r[i] = 1 - r[i - 1] if rng.random() < flip else r[i - 1]
    else:
        r = np.asarray(regimes, dtype=int)
    sd = np.sqrt(np.where(r == 1, sigma1_sq, sigma0_sq))
    xs = np.cumsum(sd * rng.standard_normal(n))
    ys = xs + math.sqrt(beta_sq) * rng.standard_normal(n)
    return xs, r, ys


def make_example1(rho) -> np.ndarray:
    """Block-diagonal precision with 2x2 blocks ``[[1, rho_i], [rho_i, 1]]``."""
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    k = rho.size
    q = np.zeros((2 * k, 2 * k))
    for i, r in enumerate(rho):
        q[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = [[1.0, r], [r, 1.0]]
    return q


def make_example2(d: int, c) -> np.ndarray:
    """Arrowhead correlation: unit diagonal, ``C_1i = C_i1 = c_i`` for ``i >= 2``.

    Positive definite iff ``sqrt(sum c_i^2) < 1`` (the smallest eigenvalue is
    ``1 - sqrt(sum c_i^2)``).
    """
    c = np.broadcast_to(np.asarray(c, dtype=float), (d - 1,))
    radius = math.sqrt(float(np.sum(c * c)))
    if radius >= 1.0:
        raise NotPositiveDefinite(f"arrowhead with sqrt(sum c^2) = {radius:.4f} >= 1 is not positive definite")
    out = np.eye(d)
    out[0, 1:] = c
    out[1:, 0] = c
    return out


def correlation_of(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    sd = np.sqrt(np.diag(m))
    out = m / np.outer(sd, sd)
    np.fill_diagonal(out, 1.0)
    return 0.5 * (out + out.T)


def make_tmvn_sigma(d: int, rng: np.random.Generator, variant: int = 1) -> np.ndarray:
    """``Corr(0.01 I + v v^T)`` with ``v_i ~ Beta(0.1, 0.2)``; variant 2 divides ``v_i`` by ``log(i + 1)``."""
    v = rng.beta(0.1, 0.2, size=d)
    if variant == 2:
        v = v / np.log(np.arange(2, d + 2))
    elif variant != 1:
        raise ValueError("variant must be 1 or 2")
    return correlation_of(0.01 * np.eye(d) + np.outer(v, v))


def random_arrowhead(d: int, rng: np.random.Generator, radius: float = 0.95) -> np.ndarray:
    """Arrowhead correlation with random non-negative spokes rescaled to ``sqrt(sum c^2) = radius``."""
    c = rng.uniform(0.5, 1.0, size=d - 1)
    c *= radius / np.linalg.norm(c)
    return make_example2(d, c)
