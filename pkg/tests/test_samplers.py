import math
from dataclasses import replace

import numpy as np
import pytest

from arsgs import adapt, gapcore, samplers, targets
from arsgs.blockmodel import BlockPartition

from conftest import random_spd


def _gauss1():
    return targets.GaussianTarget(np.eye(1))


def test_rsgs_step_one_dimensional(rng):
    t = targets.GaussianTarget(np.array([[4.0]]), mean=[2.0])
    st = samplers.ChainState(np.array([0.0]))
    draws = []
    for _ in range(20_000):
        st = samplers.rsgs_step(t, st, [1.0], rng)
        draws.append(st.x[0])
    assert st.step == 20_000
    assert abs(np.mean(draws) - 2.0) < 0.02 and abs(np.var(draws) - 0.25) < 0.02


def test_mwg_acceptance_examples():
    t = _gauss1()
    assert samplers.mwg_acceptance(t, np.array([0.0]), 0, 1.0) == pytest.approx(math.exp(-0.5))
    assert samplers.mwg_acceptance(t, np.array([0.7]), 0, 0.7) == 1.0
    assert samplers.mwg_acceptance(t, np.array([2.0]), 0, 0.5) == 1.0


def test_beta_update_examples():
    assert samplers.updated_beta(1.3, 0.44, 17) == pytest.approx(1.3)
    assert samplers.updated_beta(1.0, 1.0, 1) == pytest.approx(math.exp(0.56))
    assert samplers.updated_beta(1.0, 0.0, 100) == pytest.approx(math.exp(-0.44 / 100**0.7))


def test_single_step_kernels(rng):
    t = targets.GaussianTarget(np.eye(2))
    scales = samplers.ProposalScales(np.ones(2))
    st = samplers.ChainState(np.zeros(2))
    st2, acc, alpha, i = samplers.rwmwg_step(t, st, [0.5, 0.5], scales, rng)
    assert 0 <= alpha <= 1 and st2.step == 1
    assert acc != np.array_equal(st2.x, st.x)
    st3, new_scales, acc, alpha = samplers.arwmwg_step(t, st2, [0.0, 1.0], scales, 1, rng)
    assert new_scales.beta[0] == 1.0
    assert new_scales.beta[1] == pytest.approx(math.exp(alpha - 0.44))
    with pytest.raises(ValueError):
        samplers.ProposalScales(np.array([1.0, 0.0]))


def test_mwg_refuses_block_and_discrete_targets(rng):
    t = targets.GaussianTarget(np.eye(2), partition=BlockPartition((2,)))
    with pytest.raises(ValueError):
        samplers.run(t, samplers.RunConfig(algorithm="rwmwg", total_samples=10))
    m = targets.MsmTarget([0.0, 1.0], 0.1, 0.1, 1.0, 2.0, 1.0)
    with pytest.raises(ValueError):
        samplers.run(m, samplers.RunConfig(algorithm="arwmwg", total_samples=10))


def test_rwmwg_detailed_balance(rng):
    """Empirical flows between 20 bins are symmetric for a 1-d standard normal."""
    t = _gauss1()
    cfg = samplers.RunConfig(algorithm="rwmwg", total_samples=1_000_000, seed=3, beta0=1.5, epoch_length=100_000)
    chain, _ = samplers.run(t, cfg)
    edges = np.linspace(-2.5, 2.5, 21)
    b = np.digitize(chain.states[:, 0], edges)
    flows = np.zeros((22, 22))
    np.add.at(flows, (b[:-1], b[1:]), 1)
    upper = flows[np.triu_indices(22, 1)]
    lower = flows.T[np.triu_indices(22, 1)]
    mask = (upper + lower) > 200
    z = (upper - lower)[mask] / np.sqrt((upper + lower)[mask])
    assert np.max(np.abs(z)) < 5


def test_rsgs_stationarity():
    sigma = np.array([[1.0, 0.7], [0.7, 2.0]])
    t = targets.GaussianTarget.from_covariance(sigma, mean=[1.0, -1.0])
    x0 = np.random.default_rng(0).multivariate_normal(t.mean, sigma)
    chain, _ = samplers.run(t, samplers.RunConfig(algorithm="rsgs", total_samples=1_000_000, seed=1, x0=x0, epoch_length=100_000))
    xs = chain.states
    from arsgs.diagnostics import batch_means_asvar

    for j in range(2):
        se = math.sqrt(batch_means_asvar(xs[:, j]) / xs.shape[0])
        assert abs(xs[:, j].mean() - t.mean[j]) < 4 * se
    assert np.max(np.abs(np.cov(xs.T) - sigma) / np.abs(sigma)) < 0.05


def test_row_count_and_steps():
    t = targets.GaussianTarget(np.eye(2))
    chain, trace = samplers.run(t, samplers.RunConfig(algorithm="rsgs", total_samples=10_000, thinning=7, epoch_length=333))
    assert chain.states.shape == (10_000 // 7, 2)
    np.testing.assert_array_equal(chain.steps, np.arange(7, 10_001, 7))
    assert len(trace) == 0


def _example1_target():
    return targets.GaussianTarget(targets.make_example1([0.9, 0.5]))


def test_zero_step_schedule_is_vanilla_rsgs():
    t = _example1_target()
    frozen = adapt.Schedule(eps=1 / 16, step=adapt.StepRule("constant", value=0.0),
                            perturbation=adapt.StepRule("constant", value=0.1), epoch_length=500)
    p0 = np.array([0.1, 0.2, 0.3, 0.4])
    a, trace = samplers.run(t, samplers.RunConfig(algorithm="arsgs", total_samples=5000, seed=4, schedule=frozen, initial_p=p0))
    b, _ = samplers.run(t, samplers.RunConfig(algorithm="rsgs", total_samples=5000, seed=4, epoch_length=500, initial_p=p0))
    np.testing.assert_array_equal(a.states, b.states)
    for rec in trace:
        np.testing.assert_allclose(rec.p, p0, rtol=1e-12)


def test_arsgs_exact_sigma_reaches_closed_form():
    t = _example1_target()
    cfg = samplers.RunConfig(algorithm="arsgs", total_samples=1_000_000, seed=2, epoch_length=200,
                             exact_sigma=t.covariance(), record=False)
    chain, trace = samplers.run(t, cfg)
    p_closed, _ = gapcore.closed_form_pairs([0.9, 0.5])
    np.testing.assert_allclose(chain.final_p, p_closed, atol=0.05)
    eps = cfg.schedule_for(t).eps
    floor = eps / (4 * (1 - eps))
    assert all(np.all(rec.p >= floor * (1 - 1e-12)) for rec in trace)


def test_gating():
    t = _example1_target()
    base = samplers.RunConfig(algorithm="arsgs", total_samples=20_000, seed=6, epoch_length=1000)
    a, ta = samplers.run(t, base)
    b, tb = samplers.run(t, replace(base, algorithm="arsgs_ergodic", gate_lower=-np.inf, gate_upper=np.inf))
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(ta.weights(), tb.weights())

    c, tc = samplers.run(t, replace(base, algorithm="arsgs_ergodic", gate_lower=1.0, gate_upper=-1.0))
    for rec in tc:
        np.testing.assert_allclose(rec.p, 0.25)
    assert not np.allclose(tc[-1].w, tc[0].w)

    wide, tw = samplers.run(t, replace(base, algorithm="arsgs_ergodic", gate_lower=-10.0, gate_upper=10.0))
    np.testing.assert_allclose(tw[-1].p, ta[-1].p, atol=1e-12)


def test_gated_p_is_held_when_outside():
    t = _example1_target()
    cfg = samplers.RunConfig(algorithm="arsgs_ergodic", total_samples=30_000, seed=8, epoch_length=500,
                             gate_lower=-0.8, gate_upper=0.8)
    chain, trace = samplers.run(t, cfg)
    prev = np.full(4, 0.25)
    held = 0
    for rec in trace:
        if not np.array_equal(rec.p, rec.w / rec.w.sum()):
            np.testing.assert_array_equal(rec.p, prev)
            held += 1
        prev = rec.p
    assert 0 < held < len(trace)


def test_serial_determinism():
    t = _example1_target()
    cfg = samplers.RunConfig(algorithm="arsgs", total_samples=20_000, seed=5, epoch_length=1000)
    a, ta = samplers.run(t, cfg)
    b, tb = samplers.run(t, cfg)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(ta.weights(), tb.weights())
    c, _ = samplers.run(t, replace(cfg, seed=6))
    assert not np.array_equal(a.states, c.states)


def test_parallel_mode():
    t = _example1_target()
    one_epoch = samplers.RunConfig(algorithm="arsgs", total_samples=5000, seed=5, epoch_length=10_000)
    a, _ = samplers.run(t, one_epoch)
    b, _ = samplers.run_parallel(t, one_epoch)
    np.testing.assert_array_equal(a.states, b.states)
    assert b.meta["parallel"]

    exact = replace(one_epoch, total_samples=20_000, epoch_length=1000, exact_sigma=t.covariance())
    a, ta = samplers.run(t, exact)
    b, tb = samplers.run_parallel(t, exact)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(ta.weights(), tb.weights())

    est = replace(one_epoch, total_samples=20_000, epoch_length=1000)
    b1, t1 = samplers.run_parallel(t, est)
    b2, t2 = samplers.run_parallel(t, est)
    np.testing.assert_array_equal(b1.states, b2.states)
    np.testing.assert_array_equal(t1.weights(), t2.weights())
    assert t1[0].skipped  # first adapter sees only X_0
    with pytest.raises(ValueError):
        samplers.run_parallel(t, replace(est, algorithm="rsgs"))


def test_arwmwg_acceptance_near_target():
    t = _gauss1()
    chain, _ = samplers.run(t, samplers.RunConfig(algorithm="arwmwg", total_samples=200_000, seed=1, epoch_length=50_000))
    assert 0.41 <= chain.acceptance_rates()[0] <= 0.47


def test_arwmwag_zero_step_is_arwmwg():
    t = _example1_target()
    frozen = adapt.Schedule(eps=1 / 16, step=adapt.StepRule("constant", value=0.0),
                            perturbation=adapt.StepRule("constant", value=0.1), epoch_length=1000)
    a, _ = samplers.run(t, samplers.RunConfig(algorithm="arwmwag", total_samples=10_000, seed=2, schedule=frozen))
    b, _ = samplers.run(t, samplers.RunConfig(algorithm="arwmwg", total_samples=10_000, seed=2, epoch_length=1000))
    np.testing.assert_allclose(a.states, b.states, rtol=0, atol=0)


@pytest.mark.slow
def test_arwmwag_example1_weights():
    t = _example1_target()
    chain, _ = samplers.run(t, samplers.RunConfig(algorithm="arwmwag", total_samples=1_000_000, seed=3,
                                                  epoch_length=500, record=False))
    p_closed, _ = gapcore.closed_form_pairs([0.9, 0.5])
    np.testing.assert_allclose(chain.final_p, p_closed, atol=0.1)
    np.testing.assert_allclose(chain.acceptance_rates(), 0.44, atol=0.03)


def test_config_validation():
    t = _gauss1()
    for bad in ({"algorithm": "nope"}, {"thinning": 0}, {"total_samples": 0}):
        with pytest.raises(ValueError):
            samplers.run(t, samplers.RunConfig(**bad))
    with pytest.raises(ValueError):
        samplers.run(t, samplers.RunConfig(algorithm="arsgs_ergodic"))
