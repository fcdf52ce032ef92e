"""Exact spectral and pseudo-spectral gaps and the exact pseudo-optimal weights.

All gap evaluations go through the symmetric similarity ``K D_p K`` with
``K = sqrt(Q)`` rather than the non-symmetric product ``D_p Q``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import linalg
from .blockmodel import BlockPartition, build_d_i, build_d_p, check_epsilon, validate_probabilities
from .errors import NoConvergence

log = logging.getLogger(__name__)

STEP_SCALE = 10.0
STEP_OFFSET = 10
STABLE_ITERATIONS = 50
STAGNATION_WINDOW = 2000
STAGNATION_RTOL = 1e-10


@dataclass
class GapReport:
    gap_value: float
    weights: np.ndarray  # selection probabilities
    iterations: int
    converged: bool
    w: Optional[np.ndarray] = None  # unnormalised optimiser iterate in the contracted simplex
    objective: Optional[float] = None  # f(w)


def _eig(a: np.ndarray, method: str) -> linalg.EigenDecomposition:
    return linalg.jacobi_eigen(a) if method == "jacobi" else linalg.eigh(a)


def gaussian_gap(q, part: BlockPartition, p, method: str = "lapack") -> float:
    """``1 - lambda_max(I - K (sum_i p_i D_i) K)`` for a Gaussian target with precision ``q``."""
    q = linalg.as_symmetric(q, "precision")
    p = np.asarray(p, dtype=float)
    k = linalg.sym_sqrt(q, method="jacobi" if method == "jacobi" else "lapack")
    mix = sum(p[i] * build_d_i(q, part, i) for i in range(part.s))
    f1 = np.eye(q.shape[0]) - k @ mix @ k
    return 1.0 - float(_eig(0.5 * (f1 + f1.T), method).values[-1])


def pseudo_gap(q, part: BlockPartition, p, method: str = "lapack") -> float:
    """``lambda_min(D_p Q)``, evaluated as ``lambda_min(K D_p K)``."""
    q = linalg.as_symmetric(q, "precision")
    k = linalg.sym_sqrt(q, method="jacobi" if method == "jacobi" else "lapack")
    m = k @ build_d_p(q, part, p) @ k
    return float(_eig(0.5 * (m + m.T), method).values[0])


class GapProblem:
    """Caches ``sqrt(Q)`` and the block-diagonal of ``Q_ii^{-1}`` for repeated evaluations."""

    def __init__(self, q, part: BlockPartition):
        self.q = linalg.as_symmetric(q, "precision")
        self.part = part
        d = self.q.shape[0]
        if d != part.d:
            raise ValueError("partition does not match the matrix dimension")
        self.k = linalg.sym_sqrt(self.q, method="lapack")
        self.block_inv = np.zeros_like(self.q)
        for i in range(part.s):
            sl = part.slice(i)
            self.block_inv[sl, sl] = linalg.invert_spd(self.q[sl, sl])
        self._block_of = part.block_of()
        self._offsets = np.asarray(part.offsets)

    @classmethod
    def from_covariance(cls, sigma, part: BlockPartition) -> "GapProblem":
        return cls(linalg.invert_spd(sigma), part)

    def d_matrix(self, w) -> np.ndarray:
        """``D_w``: block ``i`` equals ``w_i Q_ii^{-1}``."""
        return self.block_inv * np.asarray(w, dtype=float)[self._block_of][:, None]

    def similarity(self, w) -> np.ndarray:
        m = self.k @ self.d_matrix(w) @ self.k
        return 0.5 * (m + m.T)

    def pg(self, p) -> float:
        return float(np.linalg.eigvalsh(self.similarity(p))[0])

    def objective(self, w) -> float:
        """``f(w) = lambda_min(sqrt(Q^ext) D^ext_w sqrt(Q^ext))``."""
        w = np.asarray(w, dtype=float)
        return min(self.pg(w), 1.0 - float(w.sum()))

    def supergradient(self, w):
        """Return ``(f(w), lambda_min(K D_w K), g)`` with ``g`` a supergradient of ``f`` at ``w``.

        ``g_i = <dD^ext/dw_i y, y>`` with ``y = sqrt(Q^ext) x``, ``x`` the first
        eigenvector of the sorted decomposition of the bordered similarity matrix
        (the bordered matrix is ``diag(K D_w K, 1 - sum(w))``).
        """
        w = np.asarray(w, dtype=float)
        values, vectors = np.linalg.eigh(self.similarity(w))
        residual = 1.0 - float(w.sum())
        inner = float(values[0])
        if inner <= residual:
            y = self.k @ vectors[:, 0]
            grad = np.add.reduceat(y * (self.block_inv @ y), self._offsets)
        else:
            grad = -np.ones(self.part.s)
        return min(inner, residual), inner, grad


def default_epsilon(d: int, s: int) -> float:
    """``1/d^2``, pulled inside ``(0, 1/(s+1))`` when that bound would be violated."""
    eps = 1.0 / d**2
    if eps >= 1.0 / (s + 1):
        eps = 0.5 / (s + 1)
    return eps


def pseudo_optimal_exact(
    sigma,
    part: BlockPartition,
    eps: Optional[float] = None,
    tol: float = 1e-5,
    max_iter: int = 100_000,
    w0=None,
    step_scale: float = STEP_SCALE,
    step_offset: int = STEP_OFFSET,
    raise_on_failure: bool = False,
) -> GapReport:
    """Subgradient ascent of ``f`` over the contracted simplex with exact eigenvectors.

    Steps are ``step_scale / (m + step_offset)``. The run stops once the
    iterate moves less than ``tol`` (sup-norm) for 50 consecutive iterations,
    or once the best gap has not improved (relative 1e-10) for 2000
    iterations, which covers kinks where the iterate keeps oscillating.
    The returned probabilities are the normalised best iterate seen.
    """
    from .adapt import _project, project_simplex_eps

    problem = GapProblem.from_covariance(sigma, part)
    s = part.s
    eps = default_epsilon(part.d, s) if eps is None else check_epsilon(eps, s)
    w = np.full(s, 1.0 / (s + 1)) if w0 is None else np.asarray(w0, dtype=float)
    w = project_simplex_eps(w, eps).w

    best_pg, best_w, best_f = -np.inf, w.copy(), -np.inf
    stable = 0
    anchor_pg, anchor_m = -np.inf, 0
    converged = False
    m = 0
    for m in range(1, max_iter + 1):
        f, inner, grad = problem.supergradient(w)
        pg = inner / w.sum()
        if pg > best_pg:
            best_pg, best_w, best_f = pg, w.copy(), f
        if best_pg > anchor_pg * (1.0 + STAGNATION_RTOL) + 1e-300:
            anchor_pg, anchor_m = best_pg, m
        elif m - anchor_m >= STAGNATION_WINDOW:
            converged = True
            break
        norm = np.abs(grad).sum()
        if norm == 0.0:
            converged = True
            break
        step = step_scale / (m + step_offset)
        w_next = _project(w + step * grad / norm, eps)
        moved = float(np.max(np.abs(w_next - w)))
        w = w_next
        stable = stable + 1 if moved < tol else 0
        if stable >= STABLE_ITERATIONS:
            converged = True
            break

    f, inner, _ = problem.supergradient(w)
    if inner / w.sum() > best_pg:
        best_pg, best_w, best_f = inner / w.sum(), w.copy(), f
    p = best_w / best_w.sum()
    report = GapReport(
        gap_value=problem.pg(p),
        weights=p,
        iterations=m,
        converged=converged,
        w=best_w,
        objective=best_f,
    )
    if not converged:
        log.warning("subgradient ascent stopped after %d iterations without stabilising", m)
        if raise_on_failure:
            raise NoConvergence(f"no convergence after {max_iter} iterations")
    return report


def closed_form_pairs(rho):
    """Pseudo-optimal weights and gap for the block-pair precision of ``make_example1``.

    Returns ``(p, pg)`` with ``p_{2i-1} = p_{2i} = alpha_i / 2``.
    """
    rho = np.asarray(rho, dtype=float)
    if np.any(rho >= 1.0) or np.any(rho < 0.0):
        raise ValueError("correlations must lie in [0, 1)")
    one_minus = 1.0 - rho
    k = rho.size
    leave_one_out = np.array([np.prod(np.delete(one_minus, i)) for i in range(k)])
    total = leave_one_out.sum()
    alpha = leave_one_out / total
    p = np.repeat(alpha / 2.0, 2)
    pg = float(np.prod(one_minus) / (2.0 * total))
    return p, pg


def upper_bound_check(q, part: BlockPartition, p, qvec):
    """``(PG(p), max_i(p_i / qvec_i) * PG(qvec))``; the first never exceeds the second."""
    p = validate_probabilities(p, part.s)
    qvec = validate_probabilities(qvec, part.s)
    problem = GapProblem(q, part)
    return problem.pg(p), float(np.max(p / qvec)) * problem.pg(qvec)
