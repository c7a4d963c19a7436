"""Regularized particle-based loopy belief propagation over aperture states.

Every aperture carries ``n_particles`` stacked particles; particle ``i`` of
one aperture is paired with particle ``i`` of every other aperture when a
pairwise likelihood is evaluated. Anchors hold copies of their known state
and are never updated.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .channel import ChannelObservation
from .geometry import STATE_DIM, ApertureState, ArrayConfig
from .likelihood import log_profile_likelihood_batch

log = logging.getLogger(__name__)

ANCHOR = "anchor"
AGENT = "agent"


class DivergenceError(RuntimeError):
    """A run cannot continue (degenerate weights or covariance)."""


@dataclass
class ParticleSet:
    particles: np.ndarray
    weights: np.ndarray
    role: str = AGENT

    def __post_init__(self):
        self.particles = np.asarray(self.particles, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.particles.ndim != 2 or self.particles.shape[1] != STATE_DIM:
            raise ValueError(f"particles must be (n, {STATE_DIM}), got {self.particles.shape}")
        if self.weights.shape != (len(self.particles),):
            raise ValueError("one weight per particle required")
        if self.role not in (ANCHOR, AGENT):
            raise ValueError(f"unknown role {self.role!r}")

    def __len__(self):
        return len(self.particles)

    @classmethod
    def uniform(cls, particles, role=AGENT) -> "ParticleSet":
        n = len(particles)
        return cls(particles, np.full(n, 1.0 / n), role)


@dataclass(frozen=True)
class BeliefSummary:
    mean: np.ndarray
    covariance: np.ndarray


@dataclass(frozen=True)
class Aperture:
    """One node of the network: its id, role, true state and prior box."""

    id: int
    role: str
    state: ApertureState
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        if self.role not in (ANCHOR, AGENT):
            raise ValueError(f"unknown role {self.role!r}")
        if self.role == AGENT:
            if self.lower is None or self.upper is None:
                raise ValueError(f"agent {self.id} needs prior bounds")
            lo = np.asarray(self.lower, dtype=float).reshape(STATE_DIM)
            hi = np.asarray(self.upper, dtype=float).reshape(STATE_DIM)
            if not np.all(lo < hi):
                raise ValueError(f"agent {self.id}: lower bound must be below upper bound")
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)


@dataclass
class BpConfig:
    n_particles: int = 2000
    n_iterations: int = 50
    jitter: float = 1e-9
    jitter_escalations: int = 3
    cov_memory: float = 0.7
    bandwidth_rule: str = "gaussian-optimal"
    density_floor: float = 1e-300

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("n_particles must be at least 2")
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be at least 1")
        if not self.jitter > 0:
            raise ValueError("jitter must be positive")
        if not 0.0 <= self.cov_memory < 1.0:
            raise ValueError("cov_memory must lie in [0, 1)")
        if self.bandwidth_rule != "gaussian-optimal":
            raise ValueError(f"unknown bandwidth rule {self.bandwidth_rule!r}")


@dataclass
class Surrogate:
    """Gaussian stand-in for the previous belief.

    ``cov`` is the regularization covariance shared with the kernel step and
    ``chol`` its (jittered) Cholesky factor.
    """

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray

    def log_density(self, x: np.ndarray) -> np.ndarray:
        d = self.mean.size
        y = solve_triangular(self.chol, (x - self.mean).T, lower=True)
        log_det = 2.0 * np.sum(np.log(np.diag(self.chol)))
        return -0.5 * (np.sum(y * y, axis=0) + log_det + d * np.log(2 * np.pi))


@dataclass
class BpResult:
    trace: list[dict[int, BeliefSummary]] = field(default_factory=list)
    diverged: bool = False
    reason: str = ""


def kernel_bandwidth(dim: int, n: int) -> float:
    """Optimal bandwidth of a Gaussian regularization kernel."""
    if dim < 1 or n < 2:
        raise ValueError("need dim >= 1 and n >= 2")
    return (4.0 / (n * (dim + 2))) ** (1.0 / (dim + 4))


def systematic_resample(weights, rng: np.random.Generator) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    n = w.size
    positions = (rng.uniform() + np.arange(n)) / n
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    return np.minimum(np.searchsorted(cdf, positions, side="right"), n - 1)


def weighted_mean_cov(particles, weights):
    x = np.asarray(particles, dtype=float)
    w = np.asarray(weights, dtype=float)
    mean = w @ x
    d = x - mean
    cov = (d * w[:, None]).T @ d
    return mean, 0.5 * (cov + cov.T)


def jittered_cholesky(cov: np.ndarray, jitter: float = 1e-9, escalations: int = 3) -> np.ndarray:
    """Cholesky factor of ``cov + delta * tr(cov)/d * I``, growing delta x10 on failure."""
    d = cov.shape[0]
    scale = np.trace(cov) / d
    delta = jitter
    for _ in range(escalations + 1):
        try:
            return np.linalg.cholesky(cov + delta * scale * np.eye(d))
        except np.linalg.LinAlgError:
            delta *= 10.0
    raise DivergenceError("covariance is not positive definite after jitter")


def init_particles(apertures, n_particles: int, rng: np.random.Generator) -> dict[int, ParticleSet]:
    sets = {}
    for ap in apertures:
        if ap.role == ANCHOR:
            x = np.tile(ap.state.to_vector(), (n_particles, 1))
        else:
            x = rng.uniform(ap.lower, ap.upper, size=(n_particles, STATE_DIM))
        sets[ap.id] = ParticleSet.uniform(x, ap.role)
    return sets


def pair_log_weights(obs: ChannelObservation, rx_set: ParticleSet, tx_set: ParticleSet,
                     cfg: ArrayConfig) -> np.ndarray:
    """Normalized log pair weights; particle i of rx is paired with particle i of tx."""
    if len(rx_set) != len(tx_set):
        raise ValueError("stacked particle sets must have equal size")
    ll = log_profile_likelihood_batch(obs.values, rx_set.particles, tx_set.particles, cfg)
    if not np.any(np.isfinite(ll)):
        raise DivergenceError(f"pair ({obs.rx_id}, {obs.tx_id}) has no finite weight")
    return ll - logsumexp(ll)


def pair_weights(obs, rx_set, tx_set, cfg) -> np.ndarray:
    return np.exp(pair_log_weights(obs, rx_set, tx_set, cfg))


def log_box_prior(x: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    inside = np.all((x >= lower) & (x <= upper), axis=1)
    return np.where(inside, -np.sum(np.log(upper - lower)), -np.inf)


def agent_update(pset: ParticleSet, neighbor_log_weights, lower, upper,
                 surrogate: Surrogate, config: BpConfig, rng: np.random.Generator):
    """Weight, summarize, resample and regularize one agent's particles.

    Returns the new particle set, the belief summary of the weighted set
    before resampling, and the surrogate for the next iteration.
    """
    x = pset.particles
    log_ratio = log_box_prior(x, lower, upper) - np.maximum(
        surrogate.log_density(x), np.log(config.density_floor))
    logw = log_ratio + np.sum(neighbor_log_weights, axis=0)
    if not np.any(np.isfinite(logw)):
        raise DivergenceError("all particle weights vanished")
    w = np.exp(logw - logsumexp(logw))
    mean, cov = weighted_mean_cov(x, w)
    summary = BeliefSummary(mean, cov)

    idx = systematic_resample(w, rng)
    reg_cov = cov + config.cov_memory * surrogate.cov
    chol = jittered_cholesky(reg_cov, config.jitter, config.jitter_escalations)
    h = kernel_bandwidth(STATE_DIM, len(x))
    nu = rng.standard_normal(x.shape)
    new = x[idx] + h * nu @ chol.T
    return ParticleSet.uniform(new, AGENT), summary, Surrogate(mean, reg_cov, chol)


def initial_surrogate(pset: ParticleSet, config: BpConfig) -> Surrogate:
    mean, cov = weighted_mean_cov(pset.particles, pset.weights)
    return Surrogate(mean, cov, jittered_cholesky(cov, config.jitter, config.jitter_escalations))


def neighbor_pairs(aperture_id: int, pairs) -> list:
    """Ordered pairs that involve ``aperture_id`` in either role."""
    return [pr for pr in pairs if aperture_id in pr]


def run_loopy_bp(apertures, observations, cfg: ArrayConfig, config: BpConfig,
                 rng: np.random.Generator) -> BpResult:
    """Run all message passing iterations; returns per-iteration agent beliefs.

    Pair weights for an iteration are all computed from the particle sets of
    the previous iteration before any agent is updated.
    """
    agents = [ap for ap in apertures if ap.role == AGENT]
    by_id = {ap.id: ap for ap in apertures}
    obs = {(o.rx_id, o.tx_id): o for o in observations}
    missing = [(a, b) for a in by_id for b in by_id if a != b and (a, b) not in obs]
    if missing:
        raise ValueError(f"missing observations for pairs {missing}")

    result = BpResult()
    if not agents:
        return result
    agent_ids = {ap.id for ap in agents}
    # pairs between two anchors never reach an agent
    pairs = [pr for pr in obs if pr[0] in agent_ids or pr[1] in agent_ids]

    sets = init_particles(apertures, config.n_particles, rng)
    try:
        surrogates = {ap.id: initial_surrogate(sets[ap.id], config) for ap in agents}
        for p in range(1, config.n_iterations + 1):
            logw = {pr: pair_log_weights(obs[pr], sets[pr[0]], sets[pr[1]], cfg) for pr in pairs}
            summaries = {}
            updated = {}
            for ap in agents:
                neigh = [logw[pr] for pr in neighbor_pairs(ap.id, pairs)]
                updated[ap.id], summaries[ap.id], surrogates[ap.id] = agent_update(
                    sets[ap.id], neigh, ap.lower, ap.upper, surrogates[ap.id], config, rng)
            sets.update(updated)
            result.trace.append(summaries)
    except DivergenceError as exc:
        log.debug("run diverged at iteration %d: %s", len(result.trace) + 1, exc)
        result.diverged = True
        result.reason = str(exc)
    return result
