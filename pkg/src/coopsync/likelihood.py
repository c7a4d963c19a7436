"""Concentrated (profile) likelihood of a single LOS channel observation.

Amplitude and noise variance are replaced by their conditional ML estimates,
so the log-likelihood of a candidate state pair reduces to
``-N * ln(sigma2_hat)`` (constants ``-N * (1 + ln pi)`` dropped).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ApertureState, ArrayConfig
from .manifold import batch_inner, steering_vector

NEG_TOLERANCE = 1e-12
ABS_FLOOR = 1e-30


class NumericalFault(ArithmeticError):
    pass


@dataclass(frozen=True)
class ConcentratedStats:
    amp_hat: complex
    noise_var_hat: float
    log_likelihood: float


def _check(z, psi):
    z = np.asarray(z)
    psi = np.asarray(psi)
    if z.shape != psi.shape or z.ndim != 1:
        raise ValueError(f"length mismatch: z {z.shape} vs psi {psi.shape}")
    return z, psi


def amplitude_ml(z, psi) -> complex:
    z, psi = _check(z, psi)
    return complex(np.vdot(psi, z) / z.size)


def _variance_from_inner(energy, inner, n):
    """``|z|^2/N - |psi^H z|^2/N^2`` with tiny negative rounding clamped to 0."""
    var = energy / n - np.abs(inner) ** 2 / n**2
    tol = NEG_TOLERANCE * energy / n
    if np.any(var < -tol):
        raise NumericalFault(f"noise variance estimate {np.min(var)!r} is negative")
    return np.maximum(var, 0.0)


def noise_variance_ml(z, psi) -> float:
    z, psi = _check(z, psi)
    energy = np.vdot(z, z).real
    return float(_variance_from_inner(energy, np.vdot(psi, z), z.size))


def _log_lik(var, energy, n):
    floor = 1e-300 * energy / n + ABS_FLOOR
    return -n * np.log(np.maximum(var, floor))


def concentrate(z, psi) -> ConcentratedStats:
    z, psi = _check(z, psi)
    n = z.size
    energy = np.vdot(z, z).real
    inner = np.vdot(psi, z)
    var = float(_variance_from_inner(energy, inner, n))
    return ConcentratedStats(complex(inner / n), var, float(_log_lik(var, energy, n)))


def log_profile_likelihood(z, rx: ApertureState, tx: ApertureState, cfg: ArrayConfig) -> float:
    return concentrate(z, steering_vector(rx, tx, cfg)).log_likelihood


def log_profile_likelihood_batch(z, rx: np.ndarray, tx: np.ndarray, cfg: ArrayConfig) -> np.ndarray:
    """Log profile likelihood for stacked ``(n, 7)`` state arrays (particle i with i).

    Evaluates ``psi^H z`` from the Kronecker factors, so neither the
    steering vectors nor the noise-subspace projector are materialized.
    """
    z = np.asarray(z)
    n = z.size
    energy = np.vdot(z, z).real
    var = _variance_from_inner(energy, batch_inner(z, rx, tx, cfg), n)
    return _log_lik(var, energy, n)


def full_log_density(z, psi, amplitude, noise_var) -> float:
    """Log of the complex Gaussian density of ``z`` given all nuisance values."""
    z, psi = _check(z, psi)
    resid = z - psi * amplitude
    return float(-np.vdot(resid, resid).real / noise_var - z.size * np.log(np.pi * noise_var))
