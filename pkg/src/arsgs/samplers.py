"""Sampling kernels and the adaptive drivers.

Every driver works in epochs: ``k`` sampler steps with the selection
probabilities held fixed, then (for the adaptive algorithms) one weight
update. Block indices for an epoch are drawn up front, which is exact
because ``p`` only changes at epoch boundaries.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .adapt import AdaptationState, AdaptationTrace, Schedule, TraceRecord, adapt_epoch
from .blockmodel import CovarianceEstimate, validate_probabilities
from .errors import SkippedEpoch, WorkerPanic
from .targets import Target

log = logging.getLogger(__name__)

ALGORITHMS = ("rsgs", "arsgs", "arsgs_ergodic", "rwmwg", "arwmwg", "arwmwag")
TARGET_ACCEPTANCE = 0.44
BETA_DECAY = 0.7


@dataclass
class ChainState:
    x: np.ndarray
    step: int = 0
    regimes: Optional[np.ndarray] = None


@dataclass
class ProposalScales:
    """Random-walk proposal standard deviations ``beta`` and the fallback mixture."""

    beta: np.ndarray
    q_mix: float = 1.0
    sigma_fallback: float = 5.0

    def __post_init__(self):
        self.beta = np.array(self.beta, dtype=float)
        if np.any(self.beta <= 0) or not np.all(np.isfinite(self.beta)):
            raise ValueError("proposal scales must be positive")
        if not 0.0 < self.q_mix <= 1.0:
            raise ValueError("q_mix must lie in (0, 1]")
        if self.sigma_fallback <= 0:
            raise ValueError("sigma_fallback must be positive")


@dataclass
class RunConfig:
    algorithm: str = "arsgs"
    total_samples: int = 10_000
    thinning: int = 1
    seed: int = 0
    schedule: Optional[Schedule] = None
    epoch_length: int = 5000  # used only when no schedule is given
    gate_lower: Optional[np.ndarray] = None
    gate_upper: Optional[np.ndarray] = None
    variant: str = "z"
    ridge: Optional[float] = None  # None -> target default
    exact_sigma: Optional[np.ndarray] = None  # bypass the estimator with a known covariance
    initial_p: Optional[np.ndarray] = None
    x0: Optional[np.ndarray] = None
    beta0: float = 1.0
    q_mix: float = 1.0
    sigma_fallback: float = 5.0
    parallel: bool = False
    record: bool = True

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if int(self.thinning) < 1:
            raise ValueError("thinning must be >= 1")
        if int(self.total_samples) < 1:
            raise ValueError("total_samples must be >= 1")
        if self.epoch_length < 1:
            raise ValueError("epoch_length must be >= 1")

    def schedule_for(self, target: Target) -> Schedule:
        if self.schedule is not None:
            return self.schedule
        return Schedule.default(target.d, target.partition.s, self.epoch_length)

    @property
    def adapts_p(self) -> bool:
        return self.algorithm in ("arsgs", "arsgs_ergodic", "arwmwag")

    @property
    def metropolis(self) -> bool:
        return self.algorithm in ("rwmwg", "arwmwg", "arwmwag")


@dataclass
class Chain:
    columns: list
    steps: np.ndarray
    states: np.ndarray
    n_steps: int
    final_state: np.ndarray
    final_p: np.ndarray
    final_beta: Optional[np.ndarray] = None
    accepted: Optional[np.ndarray] = None
    proposed: Optional[np.ndarray] = None
    sample_seconds: float = 0.0
    adapt_seconds: float = 0.0
    skipped_epochs: int = 0
    meta: dict = field(default_factory=dict)

    def acceptance_rates(self) -> Optional[np.ndarray]:
        if self.accepted is None:
            return None
        return self.accepted / np.maximum(self.proposed, 1)

    def coordinate(self, j: int) -> np.ndarray:
        return self.states[:, j]


class RngStreams:
    """Independent Philox substreams for the chain, the adapter initialisation and the perturbations."""

    def __init__(self, seed: int):
        chain, init, perturb = np.random.SeedSequence(int(seed)).spawn(3)
        self.chain = np.random.Generator(np.random.Philox(chain))
        self.init = np.random.Generator(np.random.Philox(init))
        self.perturb = np.random.Generator(np.random.Philox(perturb))


# single-step kernels ---------------------------------------------------------


def rsgs_step(target: Target, state: ChainState, p, rng: np.random.Generator) -> ChainState:
    """Pick block ``i ~ p`` and redraw it from its full conditional."""
    i = int(rng.choice(target.partition.s, p=p))
    x = np.array(state.x, dtype=float)
    target.sample_block(x, i, rng)
    return ChainState(x=x, step=state.step + 1, regimes=target.regimes_of(x))


def mwg_acceptance(target: Target, x, i: int, proposal: float) -> float:
    """``min(1, pi(Y | x_-i) / pi(x_i | x_-i))``."""
    lr = target.log_conditional_ratio(x, i, proposal)
    return 1.0 if lr >= 0.0 else math.exp(lr)


def updated_beta(beta: float, alpha: float, n: int) -> float:
    """``beta * exp(n^{-0.7} (alpha - 0.44))``."""
    if n < 1:
        raise ValueError("step counter must be >= 1")
    return beta * math.exp((alpha - TARGET_ACCEPTANCE) / n**BETA_DECAY)


def _require_coordinatewise(target: Target) -> None:
    if not target.supports_mwg:
        raise ValueError(f"{type(target).__name__} does not support Metropolis-within-Gibbs")
    if not target.partition.is_coordinatewise():
        raise ValueError("Metropolis-within-Gibbs updates need a coordinatewise partition")


def rwmwg_step(target: Target, state: ChainState, p, scales: ProposalScales, rng: np.random.Generator):
    """One random-walk Metropolis-within-Gibbs step; returns ``(state, accepted, alpha)``."""
    _require_coordinatewise(target)
    i = int(rng.choice(target.partition.s, p=p))
    sd = scales.beta[i] if rng.random() < scales.q_mix else scales.sigma_fallback
    x = np.array(state.x, dtype=float)
    proposal = x[i] + sd * rng.standard_normal()
    alpha = mwg_acceptance(target, x, i, proposal)
    accepted = bool(rng.random() < alpha)
    if accepted:
        x[i] = proposal
    return ChainState(x=x, step=state.step + 1), accepted, alpha, i


def arwmwg_step(target: Target, state: ChainState, p, scales: ProposalScales, n: int, rng: np.random.Generator):
    """RWMwG step followed by the scale update of the selected coordinate only."""
    new_state, accepted, alpha, i = rwmwg_step(target, state, p, scales, rng)
    beta = scales.beta.copy()
    beta[i] = updated_beta(beta[i], alpha, n)
    new_scales = ProposalScales(beta, scales.q_mix, scales.sigma_fallback)
    return new_state, new_scales, accepted, alpha


def _mwg_epoch(target, x, blocks, scales, n0, adapt_beta, rng, out, accepted, proposed):
    k = blocks.size
    use_beta = rng.random(k) < scales.q_mix
    noise = rng.standard_normal(k)
    unif = rng.random(k)
    beta, fallback = scales.beta, scales.sigma_fallback
    ratio = target.log_conditional_ratio
    for t, i in enumerate(blocks.tolist()):
        proposal = x[i] + (beta[i] if use_beta[t] else fallback) * noise[t]
        lr = ratio(x, i, proposal)
        alpha = 1.0 if lr >= 0.0 else math.exp(lr)
        if unif[t] < alpha:
            x[i] = proposal
            accepted[i] += 1
        proposed[i] += 1
        if adapt_beta:
            beta[i] *= math.exp((alpha - TARGET_ACCEPTANCE) / (n0 + t + 1) ** BETA_DECAY)
        out[t] = x


# drivers ---------------------------------------------------------------------


def _in_box(x, lower, upper) -> bool:
    return bool(np.all(x >= lower) and np.all(x <= upper))


def _initial_weights(cfg: RunConfig, s: int):
    if cfg.initial_p is None:
        return None
    p = validate_probabilities(cfg.initial_p, s)
    return p * s / (s + 1)


def run(target: Target, cfg: RunConfig):
    """Run the configured algorithm; returns ``(Chain, AdaptationTrace)``."""
    cfg.validate()
    d, part = target.d, target.partition
    s = part.s
    if cfg.metropolis:
        _require_coordinatewise(target)
    gate = None
    if cfg.algorithm == "arsgs_ergodic":
        if cfg.gate_lower is None or cfg.gate_upper is None:
            raise ValueError("arsgs_ergodic needs gate_lower and gate_upper")
        gate = (np.broadcast_to(np.asarray(cfg.gate_lower, float), (d,)),
                np.broadcast_to(np.asarray(cfg.gate_upper, float), (d,)))
    sched = cfg.schedule_for(target)
    streams = RngStreams(cfg.seed)
    ridge = target.default_ridge() if cfg.ridge is None else float(cfg.ridge)
    exact = None if cfg.exact_sigma is None else np.asarray(cfg.exact_sigma, dtype=float)

    x = (target.initial_point() if cfg.x0 is None else np.array(cfg.x0, dtype=float)).copy()
    if x.shape != (d,):
        raise ValueError(f"initial point must have length {d}")

    state = None
    if cfg.adapts_p:
        state = AdaptationState.initial(part, sched.eps, streams.init, cfg.variant, _initial_weights(cfg, s))
        p = state.p
    else:
        p = np.full(s, 1.0 / s) if cfg.initial_p is None else validate_probabilities(cfg.initial_p, s)
    scales = None
    accepted = proposed = None
    if cfg.metropolis:
        scales = ProposalScales(np.full(s, cfg.beta0), cfg.q_mix, cfg.sigma_fallback)
        accepted = np.zeros(s, dtype=np.int64)
        proposed = np.zeros(s, dtype=np.int64)
    adapt_beta = cfg.algorithm in ("arwmwg", "arwmwag")

    est = CovarianceEstimate(d, ridge=ridge)
    est.update(x)
    trace = AdaptationTrace()
    total, thin = int(cfg.total_samples), int(cfg.thinning)
    rec_steps, rec_states = [], []
    n = 0
    epoch = 0
    sample_time = adapt_time = 0.0
    skipped_count = 0

    def sample_epoch(blocks, n0):
        t0 = time.perf_counter()
        buf = np.empty((blocks.size, d))
        if cfg.metropolis:
            _mwg_epoch(target, x, blocks, scales, n0, adapt_beta, streams.chain, buf, accepted, proposed)
        else:
            target.run_gibbs(x, blocks, streams.chain, buf)
        return buf, time.perf_counter() - t0

    def adapt_step(st, sigma, seen):
        t0 = time.perf_counter()
        try:
            new = adapt_epoch(st, sigma, part, sched, streams.perturb, samples_seen=seen)
            skipped = False
        except SkippedEpoch as exc:
            log.info("epoch skipped: %s", exc)
            new, skipped = st, True
        return new, skipped, time.perf_counter() - t0

    pool = ThreadPoolExecutor(max_workers=2) if (cfg.parallel and cfg.adapts_p) else None
    try:
        while n < total:
            k = min(int(sched.k(epoch)), total - n)
            blocks = streams.chain.choice(s, size=k, p=p)
            n0 = n
            if pool is None:
                buf, st_time = sample_epoch(blocks, n0)
                n += k
                if cfg.adapts_p:
                    est.update_batch(buf)
                    sigma = exact if exact is not None else est.covariance()
                    state, skipped, ad_time = adapt_step(state, sigma, n)
            else:
                sigma = exact if exact is not None else est.covariance()
                f_sample = pool.submit(sample_epoch, blocks, n0)
                f_adapt = pool.submit(adapt_step, state, sigma, n0 + k)
                try:
                    buf, st_time = f_sample.result()
                    state, skipped, ad_time = f_adapt.result()
                except Exception as exc:  # barrier: either worker failing aborts the run
                    raise WorkerPanic(f"worker failed in epoch {epoch + 1}: {exc}") from exc
                n += k
                est.update_batch(buf)
            sample_time += st_time
            idx = np.nonzero((np.arange(n0 + 1, n + 1) % thin) == 0)[0]
            if cfg.record and idx.size:
                rec_steps.append(idx + n0 + 1)
                rec_states.append(buf[idx])
            epoch += 1
            if cfg.adapts_p:
                adapt_time += ad_time
                skipped_count += skipped
                if gate is None or _in_box(x, *gate):
                    p = state.p
                trace.append(TraceRecord(epoch, n, state.w.copy(), p.copy(), state.pg_estimate, skipped, st_time, ad_time))
    finally:
        if pool is not None:
            pool.shutdown(wait=True)

    steps = np.concatenate(rec_steps) if rec_steps else np.zeros(0, dtype=np.int64)
    states = np.concatenate(rec_states) if rec_states else np.zeros((0, d))
    chain = Chain(
        columns=target.column_names(),
        steps=steps,
        states=states,
        n_steps=n,
        final_state=x.copy(),
        final_p=np.asarray(p, dtype=float).copy(),
        final_beta=None if scales is None else scales.beta.copy(),
        accepted=accepted,
        proposed=proposed,
        sample_seconds=sample_time,
        adapt_seconds=adapt_time,
        skipped_epochs=skipped_count,
        meta={"algorithm": cfg.algorithm, "seed": int(cfg.seed), "parallel": bool(pool is not None)},
    )
    return chain, trace


def _with(cfg: RunConfig, **changes) -> RunConfig:
    from dataclasses import replace

    return replace(cfg, **changes)


def run_rsgs(target, cfg):
    return run(target, _with(cfg, algorithm="rsgs"))


def run_arsgs(target, cfg):
    return run(target, _with(cfg, algorithm="arsgs"))


def run_arsgs_ergodic(target, cfg):
    return run(target, _with(cfg, algorithm="arsgs_ergodic"))


def run_rwmwg(target, cfg):
    return run(target, _with(cfg, algorithm="rwmwg"))


def run_arwmwg(target, cfg):
    return run(target, _with(cfg, algorithm="arwmwg"))


def run_arwmwag(target, cfg):
    return run(target, _with(cfg, algorithm="arwmwag"))


def run_parallel(target, cfg):
    """Sampler and adapter on two threads, synchronised at every epoch boundary.

    The adapter sees the covariance snapshot taken at the start of the epoch,
    so its input lags the serial driver by one epoch.
    """
    if not cfg.adapts_p:
        raise ValueError("parallel mode needs an algorithm that adapts the selection probabilities")
    return run(target, _with(cfg, parallel=True))
