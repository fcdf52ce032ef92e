"""Online adaptation of the selection weights.

One adaptation epoch performs a single perturbed power-iteration multiply to
approximate the extremal eigenvector, turns it into an ascent direction for
the minimum-eigenvalue objective, takes a step and projects back onto the
contracted simplex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import linalg
from .blockmodel import BlockPartition, ExtendedMatrices, WeightVector, check_epsilon, extend
from .errors import NotPositiveDefinite, SkippedEpoch, ZeroDirection

VARIANTS = ("z", "y")


def _project(v: np.ndarray, eps: float) -> np.ndarray:
    s = v.size
    aux = np.maximum(v, eps)
    # a few ulps of slack so points already on the face map to themselves
    if 1.0 - aux.sum() >= eps - 4 * s * np.finfo(float).eps:
        return aux
    shrink = 1.0 - eps * (s + 1)
    temp = (aux - eps) / shrink
    u = np.sort(temp)[::-1]
    csum = np.cumsum(u)
    j = np.arange(1, s + 1)
    rho = int(np.nonzero(u + (1.0 - csum) / j > 0)[0][-1]) + 1
    lam = (1.0 - csum[rho - 1]) / rho
    return eps + shrink * np.maximum(temp + lam, 0.0)


def project_simplex_eps(v, eps: float) -> WeightVector:
    """Euclidean projection of ``v`` onto ``{w : w_i >= eps, 1 - sum(w) >= eps}``.

    Coordinates below ``eps`` are lifted first; if the lifted point still has
    too much mass it is rescaled onto the unit simplex, projected there by the
    sort-and-threshold rule, and mapped back.
    """
    v = np.asarray(v, dtype=float)
    eps = check_epsilon(eps, v.size)
    return WeightVector(_project(v, eps), eps)


def supergradient_z(z, w, part: BlockPartition) -> np.ndarray:
    """Components ``<R_i(w) z, z>`` for ``i = 1..s`` (not normalised)."""
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    sq = z * z
    block_mass = np.add.reduceat(sq[:-1], np.asarray(part.offsets))
    return block_mass / w - sq[-1] / (1.0 - w.sum())


def supergradient_y(y, w, part: BlockPartition, q_block_inverses) -> np.ndarray:
    """Components ``<dD^ext/dw_i y, y>`` with ``dD^ext/dw_i = diag(0, Q_ii^{-1}, 0, -1)``."""
    y = np.asarray(y, dtype=float)
    out = np.empty(part.s)
    last = y[-1] ** 2
    for i, inv in enumerate(q_block_inverses):
        yb = y[part.slice(i)]
        out[i] = yb @ inv @ yb - last
    return out


def normalize_direction(d) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    norm = np.abs(d).sum()
    if not norm > 1e-300:
        raise ZeroDirection("ascent direction vanished")
    return d / norm


class StepRule:
    """Positive sequence ``m -> value`` used for step sizes and perturbations.

    kinds: ``log`` (``log(c + m) / (c + m)``), ``harmonic`` (``scale / (m + offset)``),
    ``constant`` (``value``).
    """

    def __init__(self, kind: str = "log", offset: float = 0.0, scale: float = 1.0, value: float = 0.0):
        if kind not in ("log", "harmonic", "constant"):
            raise ValueError(f"unknown step rule {kind!r}")
        self.kind = kind
        self.offset = float(offset)
        self.scale = float(scale)
        self.value = float(value)

    def __call__(self, m: int) -> float:
        if self.kind == "log":
            c = self.offset + m
            return self.scale * math.log(c) / c
        if self.kind == "harmonic":
            return self.scale / (m + self.offset)
        return self.value

    def __repr__(self):
        return f"StepRule(kind={self.kind!r}, offset={self.offset}, scale={self.scale}, value={self.value})"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "offset": self.offset, "scale": self.scale, "value": self.value}


@dataclass
class Schedule:
    eps: float
    step: StepRule
    perturbation: StepRule
    epoch_length: int = 5000

    @classmethod
    def default(cls, d: int, s: Optional[int] = None, epoch_length: int = 5000) -> "Schedule":
        """``a_m = b_m = log(50 sqrt(d) + m) / (50 sqrt(d) + m)``, ``eps = 1/d^2``."""
        from .gapcore import default_epsilon

        s = d if s is None else s
        rule = StepRule("log", offset=50.0 * math.sqrt(d))
        return cls(eps=default_epsilon(d, s), step=rule, perturbation=rule, epoch_length=epoch_length)

    def a(self, m: int) -> float:
        return self.step(m)

    def b(self, m: int) -> float:
        return self.perturbation(m)

    def k(self, i: int) -> int:
        return int(self.epoch_length)


@dataclass
class AdaptationState:
    w: np.ndarray
    vector: np.ndarray  # unit (d+1)-vector: z or y depending on variant
    variant: str = "z"
    epoch: int = 0
    samples_seen: int = 0
    pg_estimate: float = float("nan")
    eps: float = 0.0

    @classmethod
    def initial(cls, part: BlockPartition, eps: float, rng: np.random.Generator, variant: str = "z", w0=None):
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        s = part.s
        check_epsilon(eps, s)
        w = np.full(s, 1.0 / (s + 1)) if w0 is None else project_simplex_eps(w0, eps).w.copy()
        return cls(w=np.array(w, dtype=float), vector=linalg.random_unit(part.d + 1, rng), variant=variant, eps=eps)

    @property
    def p(self) -> np.ndarray:
        return self.w / self.w.sum()


def operator(ext: ExtendedMatrices, variant: str) -> np.ndarray:
    return ext.z_operator() if variant == "z" else ext.y_operator()


def pg_estimate(state: AdaptationState, ext: ExtendedMatrices) -> float:
    """``((sum w) * ||M v||)^{-1}`` where ``M`` is the variant's power-iteration operator."""
    mv = operator(ext, state.variant) @ state.vector
    return 1.0 / (state.w.sum() * np.linalg.norm(mv))


def extended_for(sigma_hat, part: BlockPartition, w) -> ExtendedMatrices:
    """Precision by inversion, then the bordered matrices; degenerate input raises SkippedEpoch."""
    try:
        q_hat = linalg.invert_spd(sigma_hat)
        return extend(sigma_hat, q_hat, part, w)
    except NotPositiveDefinite as exc:
        raise SkippedEpoch(f"covariance estimate unusable: {exc}") from exc


def adapt_epoch(
    state: AdaptationState,
    sigma_hat,
    part: BlockPartition,
    sched: Schedule,
    rng: np.random.Generator,
    samples_seen: Optional[int] = None,
) -> AdaptationState:
    """One adaptation epoch; returns a new state and leaves ``state`` untouched.

    Raises:
        SkippedEpoch: if ``sigma_hat`` (after ridge) is not positive definite.
    """
    m = state.epoch + 1
    a, b = sched.a(m), sched.b(m)
    ext = extended_for(sigma_hat, part, state.w)
    mv = operator(ext, state.variant) @ state.vector
    estimate = 1.0 / (state.w.sum() * np.linalg.norm(mv))
    vector = linalg.perturb_normalize(mv, b, rng)
    if state.variant == "z":
        raw = supergradient_z(vector, state.w, part)
    else:
        raw = supergradient_y(vector, state.w, part, ext.q_block_inverses)
    seen = state.samples_seen if samples_seen is None else samples_seen
    try:
        direction = normalize_direction(raw)
    except ZeroDirection:
        return replace(state, vector=vector, epoch=m, samples_seen=seen, pg_estimate=estimate)
    w_new = _project(state.w + a * direction, state.eps)
    return replace(state, w=w_new, vector=vector, epoch=m, samples_seen=seen, pg_estimate=estimate)


@dataclass
class TraceRecord:
    epoch: int
    n: int
    w: np.ndarray
    p: np.ndarray
    pg_estimate: float
    skipped: bool = False
    sample_seconds: float = 0.0
    adapt_seconds: float = 0.0


@dataclass
class AdaptationTrace:
    records: list = field(default_factory=list)

    def append(self, rec: TraceRecord) -> None:
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, idx):
        return self.records[idx]

    def weights(self) -> np.ndarray:
        return np.array([r.w for r in self.records])

    def probabilities(self) -> np.ndarray:
        return np.array([r.p for r in self.records])

    def pg_estimates(self) -> np.ndarray:
        return np.array([r.pg_estimate for r in self.records])
