"""Aperture states, URA layouts and the global-to-local channel parameter map.

State vectors use the layout ``[px, py, pz, yaw, pitch, roll, clk]`` where the
clock offset ``clk`` is stored as path-length equivalent (meters, ``c * eps``).
Orientations follow the intrinsic ZYX (yaw-pitch-roll) sequence, so the
rotation matrix is ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
STATE_DIM = 7

POS = slice(0, 3)
ORI = slice(3, 6)
CLK = 6


class DegenerateGeometryError(ValueError):
    """Raised when two apertures share a phase center."""


@dataclass(frozen=True, eq=False)
class ApertureState:
    position: np.ndarray
    orientation: np.ndarray
    clock_offset_m: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        eta = np.asarray(self.orientation, dtype=float).reshape(3)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", eta)
        object.__setattr__(self, "clock_offset_m", float(self.clock_offset_m))
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(eta))
                and np.isfinite(self.clock_offset_m)):
            raise ValueError("aperture state must be finite")
        if not -np.pi / 2 < eta[1] < np.pi / 2:
            raise ValueError(f"pitch {eta[1]!r} is at or beyond gimbal lock")

    @classmethod
    def from_vector(cls, vec) -> "ApertureState":
        vec = np.asarray(vec, dtype=float).reshape(STATE_DIM)
        return cls(vec[POS], vec[ORI], vec[CLK])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.orientation, [self.clock_offset_m]])

    @property
    def clock_offset_s(self) -> float:
        return self.clock_offset_m / SPEED_OF_LIGHT


def _is_symmetric(v: np.ndarray) -> bool:
    s = np.sort(v)
    return bool(np.array_equal(s, -s[::-1]))


@dataclass(frozen=True, eq=False)
class ArrayConfig:
    """Template aperture shared by all apertures.

    ``freqs`` are baseband frequencies in Hz, ``pos_y``/``pos_z`` the sensor
    coordinates of the template URA in meters. All three must be symmetric
    about zero.
    """

    freqs: np.ndarray
    pos_y: np.ndarray
    pos_z: np.ndarray
    wavelength: float
    propagation_speed: float = SPEED_OF_LIGHT

    def __post_init__(self):
        for name in ("freqs", "pos_y", "pos_z"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if v.size == 0:
                raise ValueError(f"{name} must not be empty")
            if not _is_symmetric(v):
                raise ValueError(f"{name} must be symmetric about 0")
            object.__setattr__(self, name, v)
        if not self.wavelength > 0 or not self.propagation_speed > 0:
            raise ValueError("wavelength and propagation speed must be positive")

    @classmethod
    def ura(cls, n_freqs: int, bandwidth: float, carrier: float,
            n_y: int, n_z: int, spacing_wavelengths: float = 0.5,
            propagation_speed: float = SPEED_OF_LIGHT) -> "ArrayConfig":
        """Uniform frequency bins over ``bandwidth`` and a half-wavelength URA."""
        lam = propagation_speed / carrier
        df = bandwidth / n_freqs
        freqs = (np.arange(n_freqs) - (n_freqs - 1) / 2) * df
        d = spacing_wavelengths * lam
        pos_y = (np.arange(n_y) - (n_y - 1) / 2) * d
        pos_z = (np.arange(n_z) - (n_z - 1) / 2) * d
        return cls(freqs, pos_y, pos_z, lam, propagation_speed)

    @property
    def n_freqs(self) -> int:
        return self.freqs.size

    @property
    def n_y(self) -> int:
        return self.pos_y.size

    @property
    def n_z(self) -> int:
        return self.pos_z.size

    @property
    def n_channel(self) -> int:
        return self.n_freqs * self.n_y**2 * self.n_z**2


@dataclass(frozen=True)
class LocalChannelParams:
    delay: float
    aoa_el: float
    aoa_az: float
    aod_el: float
    aod_az: float


def rotation_matrix(eta) -> np.ndarray:
    yaw, pitch, roll = np.asarray(eta, dtype=float).reshape(3)
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


def rotation_matrices(etas: np.ndarray) -> np.ndarray:
    """Batched :func:`rotation_matrix` for an ``(n, 3)`` array, shape ``(n, 3, 3)``."""
    etas = np.asarray(etas, dtype=float)
    cy, sy = np.cos(etas[:, 0]), np.sin(etas[:, 0])
    cp, sp = np.cos(etas[:, 1]), np.sin(etas[:, 1])
    cr, sr = np.cos(etas[:, 2]), np.sin(etas[:, 2])
    m = np.empty((etas.shape[0], 3, 3))
    m[:, 0, 0] = cy * cp
    m[:, 0, 1] = cy * sp * sr - sy * cr
    m[:, 0, 2] = cy * sp * cr + sy * sr
    m[:, 1, 0] = sy * cp
    m[:, 1, 1] = sy * sp * sr + cy * cr
    m[:, 1, 2] = sy * sp * cr - cy * sr
    m[:, 2, 0] = -sp
    m[:, 2, 1] = cp * sr
    m[:, 2, 2] = cp * cr
    return m


def template_layout(cfg: ArrayConfig) -> np.ndarray:
    """Sensor positions of the template URA in the yz-plane, shape ``(3, Ny*Nz)``."""
    ones_y = np.ones((1, cfg.n_y))
    ones_z = np.ones((1, cfg.n_z))
    return np.vstack([
        np.zeros((1, cfg.n_y * cfg.n_z)),
        np.kron(cfg.pos_y[None, :], ones_z),
        np.kron(ones_y, cfg.pos_z[None, :]),
    ])


def physical_layout(state: ApertureState, cfg: ArrayConfig) -> np.ndarray:
    return state.position[:, None] + rotation_matrix(state.orientation) @ template_layout(cfg)


def elevation(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    norm = np.linalg.norm(r, axis=-1)
    return np.arccos(np.clip(r[..., 2] / norm, -1.0, 1.0))


def azimuth(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return np.arctan2(r[..., 1], r[..., 0])


def local_params(rx: ApertureState, tx: ApertureState,
                 c: float = SPEED_OF_LIGHT) -> LocalChannelParams:
    """Delay and AoA/AoD seen on the link from ``tx`` to ``rx``."""
    r = tx.position - rx.position
    dist = np.linalg.norm(r)
    if dist == 0.0:
        raise DegenerateGeometryError("degenerate pair geometry: coincident phase centers")
    # rotation inverse is the transpose on SO(3)
    r_rx = rotation_matrix(rx.orientation).T @ r
    r_tx = rotation_matrix(tx.orientation).T @ (-r)
    tau = np.linalg.norm(r_rx) / c + (rx.clock_offset_m - tx.clock_offset_m) / c
    return LocalChannelParams(
        delay=float(tau),
        aoa_el=float(elevation(r_rx)),
        aoa_az=float(azimuth(r_rx)),
        aod_el=float(elevation(r_tx)),
        aod_az=float(azimuth(r_tx)),
    )
