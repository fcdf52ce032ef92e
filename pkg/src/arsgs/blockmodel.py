"""Block bookkeeping, the D/R matrix families and the streaming covariance estimator."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import linalg
from .errors import InvalidEpsilon, NotPositiveDefinite, SingularBlock


@dataclass(frozen=True)
class BlockPartition:
    """Split of ``d`` coordinates into consecutive Gibbs blocks."""

    sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(r) for r in self.sizes)
        if not sizes or any(r < 1 for r in sizes):
            raise ValueError(f"block sizes must be positive integers, got {self.sizes}")
        object.__setattr__(self, "sizes", sizes)

    @classmethod
    def coordinatewise(cls, d: int) -> "BlockPartition":
        return cls((1,) * d)

    @property
    def s(self) -> int:
        return len(self.sizes)

    @property
    def d(self) -> int:
        return sum(self.sizes)

    @property
    def offsets(self) -> tuple:
        return tuple(int(o) for o in np.concatenate([[0], np.cumsum(self.sizes)[:-1]]))

    def slice(self, i: int) -> slice:
        start = self.offsets[i]
        return slice(start, start + self.sizes[i])

    def block_of(self) -> np.ndarray:
        """Block index for every coordinate."""
        return np.repeat(np.arange(self.s), self.sizes)

    def is_coordinatewise(self) -> bool:
        return all(r == 1 for r in self.sizes)


def check_epsilon(eps: float, s: int) -> float:
    if not 0.0 < eps < 1.0 / (s + 1):
        raise InvalidEpsilon(f"epsilon must lie in (0, 1/(s+1)) = (0, {1.0 / (s + 1):.6g}), got {eps}")
    return float(eps)


@dataclass(frozen=True)
class WeightVector:
    """Point of the contracted simplex: ``w_i >= eps`` and ``1 - sum(w) >= eps``."""

    w: np.ndarray
    epsilon: float

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        eps = check_epsilon(self.epsilon, w.size)
        slack = 1e-12
        if np.any(w < eps - slack) or 1.0 - w.sum() < eps - slack:
            raise ValueError(f"weights {w} are outside the contracted simplex (eps={eps})")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def residual(self) -> float:
        return 1.0 - float(self.w.sum())

    def probabilities(self) -> np.ndarray:
        """Selection probabilities ``w / sum(w)``."""
        return self.w / self.w.sum()


def validate_probabilities(p, s: int | None = None) -> np.ndarray:
    p = np.array(p, dtype=float)
    if p.ndim != 1 or (s is not None and p.size != s):
        raise ValueError(f"expected {s} selection probabilities, got shape {p.shape}")
    if np.any(p <= 0.0) or abs(p.sum() - 1.0) > 1e-12:
        raise ValueError(f"selection probabilities must be positive and sum to one, got {p}")
    return p


def _block_inverses(q: np.ndarray, part: BlockPartition) -> list:
    out = []
    for i in range(part.s):
        sl = part.slice(i)
        try:
            out.append(linalg.invert_spd(q[sl, sl]))
        except NotPositiveDefinite as exc:
            raise SingularBlock(f"diagonal block {i} is not positive definite") from exc
    return out


def build_d_p(q, part: BlockPartition, p) -> np.ndarray:
    """Block-diagonal ``diag(p_1 Q_11^{-1}, ..., p_s Q_ss^{-1})``."""
    q = linalg.as_symmetric(q, "precision")
    p = np.asarray(p, dtype=float)
    out = np.zeros_like(q)
    for i, inv in enumerate(_block_inverses(q, part)):
        sl = part.slice(i)
        out[sl, sl] = p[i] * inv
    return out


def build_d_i(q, part: BlockPartition, i: int) -> np.ndarray:
    """``D_i``: ``Q_ii^{-1}`` in block ``i``, zeros elsewhere."""
    q = linalg.as_symmetric(q, "precision")
    sl = part.slice(i)
    try:
        inv = linalg.invert_spd(q[sl, sl])
    except NotPositiveDefinite as exc:
        raise SingularBlock(f"diagonal block {i} is not positive definite") from exc
    out = np.zeros_like(q)
    out[sl, sl] = inv
    return out


def r_diagonal(w, part: BlockPartition, i: int) -> np.ndarray:
    """Diagonal of the directional operator ``R_i(w)`` (length ``d + 1``)."""
    w = np.asarray(w, dtype=float)
    diag = np.zeros(part.d + 1)
    diag[part.slice(i)] = 1.0 / w[i]
    diag[-1] = -1.0 / (1.0 - w.sum())
    return diag


def build_r_i(w, part: BlockPartition, i: int) -> np.ndarray:
    return np.diag(r_diagonal(w, part, i))


def bordered(a: np.ndarray, corner: float = 1.0) -> np.ndarray:
    """``diag(a, corner)``."""
    n = a.shape[0]
    out = np.zeros((n + 1, n + 1))
    out[:n, :n] = a
    out[n, n] = corner
    return out


@dataclass
class ExtendedMatrices:
    """Bordered ``(d+1)``-dimensional matrices at a fixed weight vector.

    ``l`` is the Cholesky factor of ``(D^ext(w))^{-1}``, whose blocks are
    ``Q_ii / w_i`` and whose corner is ``1 / (1 - sum(w))``.
    """

    sigma_ext: np.ndarray
    q_ext: np.ndarray
    d_ext: np.ndarray
    l: np.ndarray
    part: BlockPartition
    w: np.ndarray
    q_blocks: list  # Q_ii
    q_block_inverses: list  # Q_ii^{-1}

    def d_ext_inv(self) -> np.ndarray:
        return self.l @ self.l.T

    def z_operator(self) -> np.ndarray:
        """``L^T Sigma^ext L`` (symmetric)."""
        m = self.l.T @ self.sigma_ext @ self.l
        return 0.5 * (m + m.T)

    def y_operator(self) -> np.ndarray:
        """``(D^ext)^{-1} Sigma^ext`` (not symmetric in general)."""
        return self.d_ext_inv() @ self.sigma_ext


def extend(sigma_hat, q_hat, part: BlockPartition, w) -> ExtendedMatrices:
    """Build the bordered covariance/precision and the Cholesky factor at ``w``.

    The factor is assembled block by block, which is what makes it cheap.
    """
    sigma_hat = linalg.as_symmetric(sigma_hat, "covariance")
    q_hat = linalg.as_symmetric(q_hat, "precision")
    w = np.asarray(w, dtype=float)
    d = part.d
    if sigma_hat.shape != (d, d) or q_hat.shape != (d, d) or w.size != part.s:
        raise ValueError("dimension mismatch between matrices, partition and weights")
    residual = 1.0 - w.sum()
    d_ext = np.zeros((d + 1, d + 1))
    l = np.zeros((d + 1, d + 1))
    q_blocks, q_inv = [], []
    for i in range(part.s):
        sl = part.slice(i)
        qii = q_hat[sl, sl]
        try:
            inv = linalg.invert_spd(qii)
        except NotPositiveDefinite as exc:
            raise SingularBlock(f"diagonal block {i} is not positive definite") from exc
        q_blocks.append(qii)
        q_inv.append(inv)
        d_ext[sl, sl] = w[i] * inv
        l[sl, sl] = linalg.cholesky(qii / w[i])
    d_ext[d, d] = residual
    l[d, d] = np.sqrt(1.0 / residual)
    return ExtendedMatrices(
        sigma_ext=bordered(sigma_hat),
        q_ext=bordered(q_hat),
        d_ext=d_ext,
        l=l,
        part=part,
        w=w.copy(),
        q_blocks=q_blocks,
        q_block_inverses=q_inv,
    )


@dataclass
class CovarianceEstimate:
    """Streaming mean/scatter accumulator.

    ``n`` counts every point ingested. The emitted matrix is
    ``(sum x x^T - n * mean mean^T) / (n - 1)``, i.e. the naive estimator
    with points ``X_0 .. X_{n-1}``, plus ``ridge * I``.
    """

    dim: int
    ridge: float = 0.0
    n: int = 0
    mean: np.ndarray = field(default=None)
    scatter: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.mean is None:
            self.mean = np.zeros(self.dim)
        if self.scatter is None:
            self.scatter = np.zeros((self.dim, self.dim))
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")

    def update(self, x) -> "CovarianceEstimate":
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected a {self.dim}-vector, got shape {x.shape}")
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.scatter += np.outer(delta, x - self.mean)
        return self

    def update_batch(self, xs) -> "CovarianceEstimate":
        """Merge a block of points (rows) in one go (Chan et al. pairwise update)."""
        xs = np.asarray(xs, dtype=float)
        if xs.ndim != 2 or xs.shape[1] != self.dim:
            raise ValueError(f"expected rows of length {self.dim}, got shape {xs.shape}")
        m = xs.shape[0]
        if m == 0:
            return self
        bmean = xs.mean(axis=0)
        centred = xs - bmean
        bscatter = centred.T @ centred
        total = self.n + m
        delta = bmean - self.mean
        self.scatter += bscatter + np.outer(delta, delta) * (self.n * m / total)
        self.mean += delta * (m / total)
        self.n = total
        return self

    def covariance(self, ridge: float | None = None) -> np.ndarray:
        """Emit the estimate (no ridge applied when ``n < 2``)."""
        ridge = self.ridge if ridge is None else ridge
        if self.n < 2:
            out = np.zeros((self.dim, self.dim))
        else:
            out = self.scatter / (self.n - 1)
        out = 0.5 * (out + out.T)
        return out + ridge * np.eye(self.dim)

    def snapshot(self) -> "CovarianceEstimate":
        return copy.deepcopy(self)


def naive_covariance(xs) -> np.ndarray:
    """Batch form of the naive estimator over all rows of ``xs``."""
    xs = np.asarray(xs, dtype=float)
    count = xs.shape[0]
    xbar = xs.mean(axis=0)
    return (xs.T @ xs - count * np.outer(xbar, xbar)) / (count - 1)


def read_matrix_csv(path) -> np.ndarray:
    """Plain numeric CSV, one matrix row per line, no header."""
    text = Path(path).read_text()
    rows = [line for line in text.splitlines() if line.strip() and not line.lstrip().startswith("#")]
    try:
        data = [[float(tok) for tok in row.split(",")] for row in rows]
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric entry") from exc
    if not data or len({len(r) for r in data}) != 1:
        raise ValueError(f"{path}: ragged or empty matrix")
    return np.array(data, dtype=float)


def write_matrix_csv(path, a: np.ndarray) -> None:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    lines = [",".join(repr(float(v)) for v in row) for row in a]
    Path(path).write_text("\n".join(lines) + "\n")


def partition_from_spec(spec, d: int) -> BlockPartition:
    """Partition from ``None`` (coordinatewise) or a sequence of block sizes."""
    if spec is None:
        return BlockPartition.coordinatewise(d)
    part = BlockPartition(tuple(spec))
    if part.d != d:
        raise ValueError(f"partition covers {part.d} coordinates, matrix has {d}")
    return part


def sizes_from_string(text: str) -> Sequence[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]
