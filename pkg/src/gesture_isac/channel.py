"""LoS THz channel and target reflection channel for a uniform linear array."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import SPEED_OF_LIGHT


@dataclass(frozen=True)
class ArrayGeometry:
    """ULA with ``num_antennas`` elements spaced ``spacing_ratio`` wavelengths apart."""

    num_antennas: int
    spacing_ratio: float = 0.5

    def __post_init__(self):
        if self.num_antennas < 1:
            raise ValueError(f"num_antennas must be >= 1, got {self.num_antennas}")
        if not self.spacing_ratio > 0:
            raise ValueError(f"spacing_ratio must be > 0, got {self.spacing_ratio}")


def array_response(theta: float, geom: ArrayGeometry) -> np.ndarray:
    """Steering vector with entries ``exp(j 2 pi (d/lambda) m sin(theta))``."""
    m = np.arange(geom.num_antennas)
    return np.exp(1j * 2 * np.pi * geom.spacing_ratio * m * np.sin(theta))


def spreading_gain(frequency: float, distance: float) -> float:
    """Free-space amplitude factor c / (4 pi f d)."""
    if not distance > 0:
        raise ValueError(f"distance must be > 0, got {distance}")
    if not frequency > 0:
        raise ValueError(f"frequency must be > 0, got {frequency}")
    return SPEED_OF_LIGHT / (4 * np.pi * frequency * distance)


def los_path_gain(frequency: float, distance: float, absorption: float) -> float:
    """One-way THz amplitude gain: spreading times exp(-K(f) d / 2)."""
    return spreading_gain(frequency, distance) * np.exp(-0.5 * absorption * distance)


def los_channel(
    frequency: float,
    distance: float,
    absorption: float,
    theta: float,
    geom: ArrayGeometry,
) -> np.ndarray:
    """LoS channel vector h_k between the AP and a user, shape (M,)."""
    return los_path_gain(frequency, distance, absorption) * array_response(theta, geom)


def reflection_prefactor(
    frequency: float,
    distance: float,
    absorption: float,
    rcs: complex,
    velocity: float = 0.0,
    time: float = 0.0,
) -> complex:
    """Complex scalar s with G = s a a^H.

    Two-way loss is the squared spreading term with the full (unhalved)
    absorption exponent; the Doppler term rotates the phase only.
    """
    loss = spreading_gain(frequency, distance) ** 2 * np.exp(-absorption * distance)
    doppler = np.exp(-1j * 4 * np.pi * frequency * velocity * time / SPEED_OF_LIGHT)
    return loss * rcs * doppler


def reflection_channel(
    frequency: float,
    distance: float,
    absorption: float,
    rcs: complex,
    velocity: float,
    time: float,
    theta: float,
    geom: ArrayGeometry,
) -> np.ndarray:
    """Rank-one target reflection matrix G_k, shape (M, M).

    G is a complex scalar times the Hermitian PSD matrix a a^H, so
    ``||G w|| == ||G^H w||`` for every w; the echo model's G^H and the SINR
    expressions' G are therefore interchangeable in every power quantity.
    """
    a = array_response(theta, geom)
    s = reflection_prefactor(frequency, distance, absorption, rcs, velocity, time)
    return s * np.outer(a, a.conj())
