"""Spatiotemporal steering vectors of a URA pair.

Flattening order: temporal index slowest, then AoA (y, z), then AoD (y, z),
i.e. ``psi = kron(b, a_y_aoa, a_z_aoa, a_y_aod, a_z_aod)``.
"""
from __future__ import annotations

from functools import reduce

import numpy as np

from .geometry import ApertureState, ArrayConfig, local_params, rotation_matrices


def temporal_steering(tau, freqs) -> np.ndarray:
    return np.exp(-2j * np.pi * np.asarray(freqs, dtype=float) * tau)


def spatial_steering_y(el, az, pos_y, wavelength) -> np.ndarray:
    k = 2 * np.pi / wavelength
    return np.exp(1j * k * np.asarray(pos_y, dtype=float) * np.sin(el) * np.sin(az))


def spatial_steering_z(el, pos_z, wavelength) -> np.ndarray:
    k = 2 * np.pi / wavelength
    return np.exp(1j * k * np.asarray(pos_z, dtype=float) * np.cos(el))


def spatial_steering(el, az, cfg: ArrayConfig) -> np.ndarray:
    return np.kron(spatial_steering_y(el, az, cfg.pos_y, cfg.wavelength),
                   spatial_steering_z(el, cfg.pos_z, cfg.wavelength))


def steering_factors(rx: ApertureState, tx: ApertureState, cfg: ArrayConfig):
    """The five Kronecker factors ``(b, a_y_aoa, a_z_aoa, a_y_aod, a_z_aod)``."""
    lp = local_params(rx, tx, cfg.propagation_speed)
    lam = cfg.wavelength
    return (
        temporal_steering(lp.delay, cfg.freqs),
        spatial_steering_y(lp.aoa_el, lp.aoa_az, cfg.pos_y, lam),
        spatial_steering_z(lp.aoa_el, cfg.pos_z, lam),
        spatial_steering_y(lp.aod_el, lp.aod_az, cfg.pos_y, lam),
        spatial_steering_z(lp.aod_el, cfg.pos_z, lam),
    )


def steering_vector(rx: ApertureState, tx: ApertureState, cfg: ArrayConfig) -> np.ndarray:
    """Unit-modulus steering vector of length ``cfg.n_channel`` for the link tx -> rx."""
    return reduce(np.kron, steering_factors(rx, tx, cfg))


def batch_factors(rx: np.ndarray, tx: np.ndarray, cfg: ArrayConfig):
    """Steering factors for stacked ``(n, 7)`` rx/tx state arrays.

    Uses direction cosines of the local line-of-sight vectors directly:
    ``sin(el) sin(az) = r_y / |r|`` and ``cos(el) = r_z / |r|``. Returns the
    temporal factor ``(n, Nf)`` and the AoA/AoD spatial factors
    ``(n, Ny*Nz)`` each.
    """
    r = tx[:, :3] - rx[:, :3]
    dist = np.linalg.norm(r, axis=1)
    # coincident particles get a zero direction instead of NaN
    u = r / np.where(dist > 0, dist, 1.0)[:, None]
    u_rx = np.einsum("nji,nj->ni", rotation_matrices(rx[:, 3:6]), u)
    u_tx = -np.einsum("nji,nj->ni", rotation_matrices(tx[:, 3:6]), u)
    c = cfg.propagation_speed
    tau = dist / c + (rx[:, 6] - tx[:, 6]) / c
    b = np.exp(-2j * np.pi * tau[:, None] * cfg.freqs[None, :])
    k = 2 * np.pi / cfg.wavelength

    def spatial(uu):
        ay = np.exp(1j * k * uu[:, 1:2] * cfg.pos_y[None, :])
        az = np.exp(1j * k * np.clip(uu[:, 2:3], -1.0, 1.0) * cfg.pos_z[None, :])
        return (ay[:, :, None] * az[:, None, :]).reshape(len(uu), -1)

    return b, spatial(u_rx), spatial(u_tx)


def batch_inner(z: np.ndarray, rx: np.ndarray, tx: np.ndarray, cfg: ArrayConfig) -> np.ndarray:
    """``psi(rx_i, tx_i)^H z`` for every stacked particle pair, without forming psi."""
    b, a_rx, a_tx = batch_factors(rx, tx, cfg)
    na = cfg.n_y * cfg.n_z
    zt = np.asarray(z).reshape(cfg.n_freqs, na * na)
    t = (b.conj() @ zt).reshape(len(b), na, na)
    t = np.einsum("nij,ni->nj", t, a_rx.conj())
    return np.einsum("nj,nj->n", t, a_tx.conj())
