"""Array response, DFT-style beam codebooks and beam-sweep receive power.

Element ``(m_h, m_v)`` of an ``Nh x Nv`` planar array lives at flat index
``m_v * Nh + m_h``. Beam vectors are matched beamformers, so
``|h^H f|^2`` peaks at the beam whose steering angle equals the channel
azimuth.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DomainError(ValueError):
    """An angle, sector or profile outside the supported domain."""


class DimensionError(ValueError):
    """Vectors or matrices whose sizes do not line up."""


@dataclass(frozen=True)
class ArrayGeometry:
    elements_horizontal: int = 8
    elements_vertical: int = 8
    element_spacing: float = 0.5  # in wavelengths

    def __post_init__(self):
        if self.elements_horizontal < 1 or self.elements_vertical < 1:
            raise ValueError("array needs at least one element per axis")
        if not self.element_spacing > 0:
            raise ValueError("element_spacing must be positive")

    @property
    def num_elements(self) -> int:
        return self.elements_horizontal * self.elements_vertical


@dataclass(frozen=True)
class SignalConfig:
    transmit_power: float = 1.0
    noise_power: float = 0.0
    power_measurement_noise_std: float = 0.0

    def __post_init__(self):
        if not self.transmit_power > 0:
            raise ValueError("transmit_power must be positive")
        if self.noise_power < 0 or self.power_measurement_noise_std < 0:
            raise ValueError("noise parameters must be non-negative")


@dataclass(frozen=True, eq=False)
class Codebook:
    """``beams`` is ``|F| x N``, one unit-norm beamforming vector per row."""

    beams: np.ndarray
    steering_angles: np.ndarray

    def __post_init__(self):
        if self.beams.ndim != 2 or self.beams.shape[0] < 1:
            raise DimensionError("codebook needs a non-empty 2-D beam matrix")
        if len(self.steering_angles) != self.beams.shape[0]:
            raise DimensionError("one steering angle per beam")
        if np.any(np.diff(self.steering_angles) <= 0):
            raise DomainError("steering angles must be strictly increasing")

    @property
    def size(self) -> int:
        return self.beams.shape[0]

    def __len__(self):
        return self.size


def _check_front(angle: float, what: str):
    if not abs(angle) < np.pi / 2:
        raise DomainError(f"{what} {angle!r} rad is outside the front hemisphere")


def upa_steering_vector(geometry: ArrayGeometry, azimuth: float, elevation: float = 0.0) -> np.ndarray:
    """Array response of length N with unit-modulus entries (norm sqrt(N))."""
    _check_front(azimuth, "azimuth")
    _check_front(elevation, "elevation")
    m_h = np.arange(geometry.elements_horizontal)
    m_v = np.arange(geometry.elements_vertical)
    phase = 2 * np.pi * geometry.element_spacing * (
        m_v[:, None] * np.sin(elevation)
        + m_h[None, :] * np.sin(azimuth) * np.cos(elevation)
    )
    return np.exp(1j * phase).ravel()


def build_codebook(
    geometry: ArrayGeometry,
    num_beams: int = 64,
    oversampling: int = 8,
    sector: tuple[float, float] | None = (-np.pi / 3, np.pi / 3),
) -> Codebook:
    """Horizontal-only codebook with steering angles uniform in sin(azimuth).

    With a ``sector`` the ``num_beams`` sine values run from ``sin(lo)`` to
    ``sin(hi)`` inclusive. With ``sector=None`` the grid is the centred
    full sine-space grid of spacing ``1 / (oversampling * Nh * spacing)``;
    ``oversampling=1`` and ``num_beams=Nh`` gives mutually orthogonal beams.
    """
    if num_beams < 1:
        raise DomainError("num_beams must be at least 1")
    if oversampling < 1:
        raise DomainError("oversampling must be a positive integer")
    if sector is None:
        step = 1.0 / (oversampling * geometry.elements_horizontal * geometry.element_spacing)
        sines = (np.arange(num_beams) - (num_beams - 1) / 2) * step
        if np.any(np.abs(sines) >= 1):
            raise DomainError("sine-space grid leaves the visible region")
    else:
        lo, hi = sector
        if not lo < hi:
            raise DomainError(f"empty sector {sector!r}")
        if lo <= -np.pi / 2 or hi >= np.pi / 2:
            raise DomainError(f"sector {sector!r} must lie inside (-pi/2, pi/2)")
        if num_beams == 1:
            sines = np.array([np.sin((lo + hi) / 2)])
        else:
            sines = np.linspace(np.sin(lo), np.sin(hi), num_beams)
    angles = np.arcsin(sines)
    norm = np.sqrt(geometry.num_elements)
    beams = np.stack([upa_steering_vector(geometry, a, 0.0) / norm for a in angles])
    return Codebook(beams=beams, steering_angles=angles)


def receive_power(h: np.ndarray, f: np.ndarray) -> float:
    """Beamforming gain ``|h^H f|^2``."""
    h = np.asarray(h)
    f = np.asarray(f)
    if h.shape != f.shape:
        raise DimensionError(f"channel has shape {h.shape}, beam has {f.shape}")
    return float(np.abs(np.vdot(h, f)) ** 2)


def beam_power_profile(h: np.ndarray, codebook: Codebook) -> np.ndarray:
    """Receive power of every codebook beam, as a beam sweep would measure it."""
    h = np.asarray(h)
    if h.shape != (codebook.beams.shape[1],):
        raise DimensionError(
            f"channel length {h.shape} does not match codebook width {codebook.beams.shape[1]}"
        )
    return np.abs(codebook.beams @ h.conj()) ** 2


def optimal_beam_index(profile) -> int:
    """Argmax of a power profile; ties go to the lowest index."""
    profile = np.asarray(profile, dtype=float)
    if profile.size == 0:
        raise DomainError("empty power profile")
    return int(np.argmax(profile))


def perturb_power_profile(profile, cfg: SignalConfig, rng_seed: int) -> np.ndarray:
    """Multiplicative measurement noise, clipped at zero power."""
    profile = np.asarray(profile, dtype=float)
    if cfg.power_measurement_noise_std == 0:
        return profile.copy()
    rng = np.random.default_rng(rng_seed)
    eps = rng.normal(0.0, cfg.power_measurement_noise_std, size=profile.shape)
    return profile * np.maximum(0.0, 1.0 + eps)


def los_channel(
    geometry: ArrayGeometry,
    azimuth: float,
    elevation: float,
    distance: float,
    reference_distance: float = 1.0,
) -> np.ndarray:
    """Single-path line-of-sight channel with free-space amplitude decay."""
    if not distance > 0:
        raise DomainError("distance must be positive")
    gain = reference_distance / distance
    return gain * upa_steering_vector(geometry, azimuth, elevation)
