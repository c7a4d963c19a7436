import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coopsync.bp import (AGENT, ANCHOR, Aperture, BpConfig, DivergenceError, ParticleSet,
                         Surrogate, agent_update, init_particles, jittered_cholesky,
                         kernel_bandwidth, log_box_prior, neighbor_pairs, pair_weights,
                         run_loopy_bp, systematic_resample, weighted_mean_cov)
from coopsync.channel import ChannelObservation, synthesize_all_pairs
from coopsync.geometry import ApertureState

from conftest import random_state

HALF = np.array([0.5, 0.5, 0.3, 0.2, 0.1, 0.1, 0.2])


def agent(id_, state, half=HALF):
    v = state.to_vector()
    return Aperture(id_, AGENT, state, v - half, v + half)


def square(n_agents=2):
    states = [ApertureState([0, 0, 1], [0.8, 0.05, 0.1]),
              ApertureState([4, 0.5, 1.5], [2.4, -0.1, -0.1], 0.3),
              ApertureState([4.2, 4, 0.8], [-2.3, 0.1, 0.2], -0.2),
              ApertureState([0.3, 3.8, 1.8], [-0.8, -0.05, 0.05], 0.1)]
    aps = []
    for i, s in enumerate(states):
        aps.append(agent(i, s) if i < n_agents else Aperture(i, ANCHOR, s))
    return aps, states


# --- kernel bandwidth -------------------------------------------------------

def test_bandwidth_reference_value():
    # independent evaluation of (4 / (n (d + 2)))^(1 / (d + 4)) for d=7, n=10000
    assert kernel_bandwidth(7, 10000) == pytest.approx(np.exp(np.log(4 / 90000) / 11), rel=1e-12)
    assert kernel_bandwidth(7, 10000) == pytest.approx(0.402112, abs=5e-6)


@given(st.integers(1, 10), st.integers(2, 10**6))
def test_bandwidth_decreases_with_n(d, n):
    assert kernel_bandwidth(d, n + 1) < kernel_bandwidth(d, n) < 1.0


def test_bandwidth_rejects_bad_input():
    with pytest.raises(ValueError):
        kernel_bandwidth(7, 1)


# --- resampling -------------------------------------------------------------

def test_resample_one_hot(rng):
    w = np.zeros(5)
    w[3] = 1.0
    np.testing.assert_array_equal(systematic_resample(w, rng), [3] * 5)


def test_resample_uniform_keeps_everything(rng):
    np.testing.assert_array_equal(systematic_resample(np.full(8, 1 / 8), rng), np.arange(8))


@settings(max_examples=50)
@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=30), st.integers(0, 1000))
def test_resample_counts_within_one(w, seed):
    w = np.array(w) / np.sum(w)
    idx = systematic_resample(w, np.random.default_rng(seed))
    counts = np.bincount(idx, minlength=w.size)
    assert counts.sum() == w.size
    assert np.all(np.abs(counts - w.size * w) < 1 + 1e-9)


# --- moments and covariance factor -----------------------------------------

def test_weighted_moments_brute_force(rng):
    x = rng.standard_normal((30, 7))
    w = rng.uniform(size=30)
    w /= w.sum()
    mean = sum(wi * xi for wi, xi in zip(w, x))
    cov = sum(wi * np.outer(xi - mean, xi - mean) for wi, xi in zip(w, x))
    m, c = weighted_mean_cov(x, w)
    np.testing.assert_allclose(m, mean, atol=1e-12)
    np.testing.assert_allclose(c, cov, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(c) >= -1e-12)


def test_one_hot_weights_give_zero_cov(rng):
    x = rng.standard_normal((10, 7))
    w = np.eye(10)[4]
    m, c = weighted_mean_cov(x, w)
    np.testing.assert_array_equal(m, x[4])
    assert np.all(c == 0)
    with pytest.raises(DivergenceError):
        jittered_cholesky(c)


def test_jitter_rescues_singular_cov(rng):
    a = rng.standard_normal((7, 3))
    cov = a @ a.T
    chol = jittered_cholesky(cov)
    np.testing.assert_allclose(chol @ chol.T, cov, atol=1e-6 * np.trace(cov))


# --- initialization ---------------------------------------------------------

def test_init_particles(rng):
    aps, states = square(2)
    sets = init_particles(aps, 5000, rng)
    for ap in aps:
        x = sets[ap.id].particles
        assert x.shape == (5000, 7)
        np.testing.assert_allclose(sets[ap.id].weights, 1 / 5000)
        if ap.role == ANCHOR:
            np.testing.assert_array_equal(x, np.tile(ap.state.to_vector(), (5000, 1)))
            np.testing.assert_allclose(weighted_mean_cov(x, sets[ap.id].weights)[1], 0, atol=1e-20)
        else:
            assert np.all((x >= ap.lower) & (x <= ap.upper))
            se = (ap.upper - ap.lower) / np.sqrt(12 * 5000)
            assert np.all(np.abs(x.mean(axis=0) - (ap.lower + ap.upper) / 2) < 4 * se)


def test_aperture_validation():
    s = ApertureState([0, 0, 0], [0, 0, 0])
    with pytest.raises(ValueError):
        Aperture(1, AGENT, s)
    with pytest.raises(ValueError):
        Aperture(1, AGENT, s, np.ones(7), np.ones(7))
    with pytest.raises(ValueError):
        Aperture(1, "relay", s)


def test_box_prior():
    lo, hi = np.zeros(7), np.full(7, 2.0)
    x = np.array([np.ones(7), np.full(7, 3.0)])
    out = log_box_prior(x, lo, hi)
    assert out[0] == pytest.approx(-7 * np.log(2))
    assert out[1] == -np.inf


# --- pair weights -----------------------------------------------------------

def test_anchor_anchor_weights_are_uniform(small_cfg, rng):
    a, b = random_state(rng), random_state(rng)
    obs = synthesize_all_pairs([a, b], small_cfg, 10.0, rng)[0]
    sa = ParticleSet.uniform(np.tile(a.to_vector(), (6, 1)), ANCHOR)
    sb = ParticleSet.uniform(np.tile(b.to_vector(), (6, 1)), ANCHOR)
    np.testing.assert_allclose(pair_weights(obs, sa, sb, small_cfg), 1 / 6)


def test_noiseless_truth_particle_dominates(small_cfg, rng):
    a, b = random_state(rng), random_state(rng)
    obs = synthesize_all_pairs([a, b], small_cfg, np.inf, rng)[0]
    cand = np.array([random_state(rng).to_vector() for _ in range(9)] + [a.to_vector()])
    w = pair_weights(obs, ParticleSet.uniform(cand),
                     ParticleSet.uniform(np.tile(b.to_vector(), (10, 1)), ANCHOR), small_cfg)
    assert w.sum() == pytest.approx(1.0)
    assert w[-1] > 1 - 1e-9


def test_pair_weights_ignore_likelihood_offset(small_cfg, rng):
    # scaling z shifts every log-likelihood by the same constant
    a, b = random_state(rng), random_state(rng)
    obs = synthesize_all_pairs([a, b], small_cfg, 0.0, rng)[0]
    scaled = ChannelObservation(obs.rx_id, obs.tx_id, 3.0 * obs.values, obs.true_amplitude,
                                obs.true_noise_var)
    rx = ParticleSet.uniform(np.array([random_state(rng).to_vector() for _ in range(8)]))
    tx = ParticleSet.uniform(np.array([random_state(rng).to_vector() for _ in range(8)]))
    np.testing.assert_allclose(pair_weights(obs, rx, tx, small_cfg),
                               pair_weights(scaled, rx, tx, small_cfg), rtol=1e-8)


def test_unequal_stacks_rejected(small_cfg, rng):
    a, b = random_state(rng), random_state(rng)
    obs = synthesize_all_pairs([a, b], small_cfg, 10.0, rng)[0]
    with pytest.raises(ValueError):
        pair_weights(obs, ParticleSet.uniform(np.zeros((3, 7))),
                     ParticleSet.uniform(np.ones((4, 7))), small_cfg)


def test_neighbor_pairs():
    pairs = [(i, j) for i in range(4) for j in range(4) if i != j]
    assert len(neighbor_pairs(0, pairs)) == 6
    assert all(0 in pr for pr in neighbor_pairs(0, pairs))


# --- agent update -----------------------------------------------------------

def test_agent_update_support_and_moments(rng):
    lo, hi = np.zeros(7), np.ones(7)
    x = rng.uniform(lo, hi, (400, 7))
    pset = ParticleSet.uniform(x)
    mean, cov = weighted_mean_cov(x, pset.weights)
    sur = Surrogate(mean, cov, np.linalg.cholesky(cov))
    neigh = [np.log(np.full(400, 1 / 400))]
    config = BpConfig(n_particles=400)
    new, summary, sur2 = agent_update(pset, neigh, lo, hi, sur, config, rng)
    assert new.particles.shape == x.shape
    np.testing.assert_allclose(new.weights, 1 / 400)
    assert np.all(np.isfinite(new.particles))
    assert np.all((summary.mean > lo) & (summary.mean < hi))
    np.testing.assert_allclose(sur2.cov, summary.covariance + 0.7 * cov)


def test_agent_update_all_outside_box_diverges(rng):
    x = rng.uniform(5, 6, (50, 7))
    pset = ParticleSet.uniform(x)
    mean, cov = weighted_mean_cov(x, pset.weights)
    sur = Surrogate(mean, cov, np.linalg.cholesky(cov))
    with pytest.raises(DivergenceError):
        agent_update(pset, [np.zeros(50)], np.zeros(7), np.ones(7), sur, BpConfig(), rng)


# --- full loop --------------------------------------------------------------

def test_no_agents_gives_empty_trace(toy_cfg, rng):
    states = [random_state(rng) for _ in range(3)]
    aps = [Aperture(i, ANCHOR, s) for i, s in enumerate(states)]
    obs = synthesize_all_pairs(states, toy_cfg, 10.0, rng)
    res = run_loopy_bp(aps, obs, toy_cfg, BpConfig(n_particles=10, n_iterations=3), rng)
    assert res.trace == [] and not res.diverged


def test_missing_observation_rejected(toy_cfg, rng):
    aps, states = square(2)
    obs = synthesize_all_pairs(states, toy_cfg, 10.0, rng)[1:]
    with pytest.raises(ValueError, match="missing"):
        run_loopy_bp(aps, obs, toy_cfg, BpConfig(n_particles=10, n_iterations=1), rng)


def test_loop_shapes_and_determinism(small_cfg):
    aps, states = square(2)
    obs = synthesize_all_pairs(states, small_cfg, 10.0, np.random.default_rng(3))
    config = BpConfig(n_particles=300, n_iterations=4)
    r1 = run_loopy_bp(aps, obs, small_cfg, config, np.random.default_rng(9))
    r2 = run_loopy_bp(aps, obs, small_cfg, config, np.random.default_rng(9))
    assert not r1.diverged
    assert len(r1.trace) == 4
    for s1, s2 in zip(r1.trace, r2.trace):
        assert set(s1) == {0, 1}
        for k in s1:
            assert s1[k].mean.shape == (7,) and s1[k].covariance.shape == (7, 7)
            np.testing.assert_array_equal(s1[k].mean, s2[k].mean)
            np.testing.assert_allclose(s1[k].covariance, s1[k].covariance.T)
            assert np.all(np.linalg.eigvalsh(s1[k].covariance) > -1e-10)


def test_constant_likelihood_stays_in_box(toy_cfg, rng):
    # all-zero observations make every particle equally likely
    aps, states = square(1)
    obs = [ChannelObservation(i, j, np.zeros(toy_cfg.n_channel, complex), 1.0, 0.0)
           for i in range(4) for j in range(4) if i != j]
    res = run_loopy_bp(aps, obs, toy_cfg, BpConfig(n_particles=500, n_iterations=3), rng)
    assert not res.diverged
    for s in res.trace:
        assert np.all((s[0].mean > aps[0].lower) & (s[0].mean < aps[0].upper))


def test_two_aperture_smoke(full_cfg):
    # one agent, one anchor, close prior box: the agent should settle near truth
    a = ApertureState([0, 0, 1], [0.1, 0.05, 0.0], 0.1)
    b = ApertureState([3, 0.5, 1.2], [np.pi - 0.1, 0.0, 0.05])
    aps = [Aperture(0, AGENT, a, a.to_vector() - HALF / 2, a.to_vector() + HALF / 2),
           Aperture(1, ANCHOR, b)]
    obs = synthesize_all_pairs([a, b], full_cfg, 10.0, np.random.default_rng(0))
    res = run_loopy_bp(aps, obs, full_cfg, BpConfig(n_particles=1000, n_iterations=15),
                       np.random.default_rng(1))
    assert not res.diverged
    err = res.trace[-1][0].mean - a.to_vector()
    # a single link leaves some coordinates weakly observable; only require the estimate stays in the box
    assert np.all(np.abs(err) <= HALF / 2)
