"""Synthetic line-of-sight channel observations between aperture pairs.

SNR is per complex sample, ``|alpha|^2 / sigma^2`` with ``|alpha| = 1``.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .geometry import ApertureState, ArrayConfig
from .manifold import steering_vector


@dataclass
class ChannelObservation:
    rx_id: int
    tx_id: int
    values: np.ndarray
    true_amplitude: complex
    true_noise_var: float

    def __post_init__(self):
        if self.rx_id == self.tx_id:
            raise ValueError("an observation needs two distinct apertures")


def noise_variance_for_snr(snr_db: float, amplitude: float = 1.0) -> float:
    if np.isposinf(snr_db):
        return 0.0
    return amplitude**2 * 10.0 ** (-snr_db / 10.0)


def complex_gaussian(rng: np.random.Generator, size, var: float) -> np.ndarray:
    """Circularly-symmetric CN(0, var) samples."""
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def synthesize_observation(rx: ApertureState, tx: ApertureState, cfg: ArrayConfig,
                           snr_db: float, rng: np.random.Generator,
                           rx_id: int = 0, tx_id: int = 1) -> ChannelObservation:
    if not (np.isfinite(snr_db) or np.isposinf(snr_db)):
        raise ValueError(f"invalid SNR {snr_db!r}")
    psi = steering_vector(rx, tx, cfg)
    alpha = np.exp(2j * np.pi * rng.uniform())
    var = noise_variance_for_snr(snr_db)
    z = alpha * psi + complex_gaussian(rng, psi.size, var)
    return ChannelObservation(rx_id, tx_id, z, complex(alpha), var)


def synthesize_all_pairs(states, cfg: ArrayConfig, snr_db: float,
                         rng: np.random.Generator, ids=None) -> list[ChannelObservation]:
    """One observation per ordered pair ``(rx, tx)``, rx-major order.

    ``ids`` labels the apertures (defaults to their list index).
    """
    if len(states) < 2:
        raise ValueError("need at least two apertures to form pairs")
    ids = list(range(len(states))) if ids is None else list(ids)
    return [synthesize_observation(states[j], states[k], cfg, snr_db, rng, ids[j], ids[k])
            for j, k in permutations(range(len(states)), 2)]
