"""Dense symmetric linear algebra used by the gap computations and the optimiser.

Matrices are plain 2-D ``numpy`` arrays. Everything here is pure: inputs are
never modified in place.
"""

from __future__ import annotations

import math
from typing import Callable, NamedTuple, Union

import numpy as np

from .errors import NoConvergence, NotPositiveDefinite, ZeroVector

LinearMap = Union[np.ndarray, Callable[[np.ndarray], np.ndarray]]

SYM_TOL = 1e-12
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
SQRT_EIG_FLOOR = 1e-14


class EigenDecomposition(NamedTuple):
    values: np.ndarray  # ascending
    vectors: np.ndarray  # eigenvectors in columns


def as_symmetric(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a float array after checking it is square and symmetric."""
    a = np.array(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError(f"{name} must be a non-empty square matrix, got shape {a.shape}")
    tol = SYM_TOL * np.maximum(1.0, np.abs(a))
    if np.any(np.abs(a - a.T) > tol):
        raise ValueError(f"{name} is not symmetric")
    return a


def cholesky(a) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == a``.

    Raises:
        NotPositiveDefinite: if a pivot is not strictly positive.
    """
    a = as_symmetric(a)
    n = a.shape[0]
    L = np.zeros_like(a)
    for j in range(n):
        row = L[j, :j]
        pivot = a[j, j] - row @ row
        if not pivot > 0.0:
            raise NotPositiveDefinite(f"non-positive pivot {pivot:.3e} at index {j}")
        ljj = np.sqrt(pivot)
        L[j, j] = ljj
        if j + 1 < n:
            L[j + 1 :, j] = (a[j + 1 :, j] - L[j + 1 :, :j] @ row) / ljj
    return L


def solve_lower(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Forward substitution for ``L x = b`` (``b`` may be a matrix)."""
    b = np.array(b, dtype=float)
    x = np.zeros_like(b)
    for i in range(L.shape[0]):
        x[i] = (b[i] - L[i, :i] @ x[:i]) / L[i, i]
    return x


def jacobi_eigen(a, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS) -> EigenDecomposition:
    """Full spectrum of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps stop once the off-diagonal Frobenius norm is at most
    ``tol * ||a||_F``. Values are returned ascending (stable sort).
    """
    a = as_symmetric(a).copy()
    n = a.shape[0]
    v = np.eye(n)
    scale = np.linalg.norm(a)
    target = tol * scale

    def off_norm() -> float:
        return float(np.linalg.norm(a - np.diag(np.diag(a))))

    sweeps = 0
    while off_norm() > target:
        if sweeps >= max_sweeps:
            raise NoConvergence(f"Jacobi did not converge in {max_sweeps} sweeps")
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q]
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :]
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq

    values = np.diag(a).copy()
    order = np.argsort(values, kind="stable")
    return EigenDecomposition(values[order], v[:, order])


def eigh(a) -> EigenDecomposition:
    """LAPACK-backed symmetric eigendecomposition, used on hot paths.

    Same contract as :func:`jacobi_eigen`; the test-suite checks the two agree.
    """
    a = np.asarray(a, dtype=float)
    values, vectors = np.linalg.eigh(0.5 * (a + a.T))
    return EigenDecomposition(values, vectors)


def sym_sqrt(a, method: str = "jacobi") -> np.ndarray:
    """Symmetric positive-definite square root ``V diag(sqrt(lam)) V^T``."""
    decomp = jacobi_eigen(a) if method == "jacobi" else eigh(as_symmetric(a))
    if decomp.values[0] <= SQRT_EIG_FLOOR:
        raise NotPositiveDefinite(f"smallest eigenvalue {decomp.values[0]:.3e} is not positive")
    vecs = decomp.vectors
    root = (vecs * np.sqrt(decomp.values)) @ vecs.T
    return 0.5 * (root + root.T)


def invert_spd(a) -> np.ndarray:
    """Inverse of an SPD matrix through its Cholesky factor."""
    L = cholesky(a)
    linv = solve_lower(L, np.eye(L.shape[0]))
    inv = linv.T @ linv
    return 0.5 * (inv + inv.T)


def _apply(op: LinearMap, v: np.ndarray) -> np.ndarray:
    return op @ v if isinstance(op, np.ndarray) else np.asarray(op(v), dtype=float)


def random_unit(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform point on the unit sphere (normalised standard Gaussian)."""
    while True:
        xi = rng.standard_normal(dim)
        norm = np.linalg.norm(xi)
        if norm > 0.0:
            return xi / norm


def perturb_normalize(u: np.ndarray, b: float, rng: np.random.Generator) -> np.ndarray:
    """``normalize(u + b * xi)`` with ``xi`` uniform on the sphere.

    A near-zero result triggers one fresh ``xi``; a second failure raises.
    """
    for _ in range(2):
        xi = random_unit(u.shape[0], rng)
        out = u + b * xi
        norm = np.linalg.norm(out)
        if norm >= 1e-300:
            return out / norm
    raise ZeroVector("power step produced a zero vector")


def power_step(apply: LinearMap, v: np.ndarray, b: float, rng: np.random.Generator) -> np.ndarray:
    """One perturbed power-iteration multiply: ``normalize(apply(v) + b * xi)``."""
    v = np.asarray(v, dtype=float)
    if b < 0:
        raise ValueError("perturbation scale must be non-negative")
    return perturb_normalize(_apply(apply, v), b, rng)
