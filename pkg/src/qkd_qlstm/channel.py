"""Photon-level primitives of the BB84 quantum channel.

Every function takes an explicit ``random.Random`` stream so a photon's fate is
fully determined by the stream state. ``random.Random`` is used rather than a
numpy ``Generator`` because the simulation draws scalars one photon at a time
and the stdlib generator is several times cheaper per scalar draw.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from enum import Enum

RandomStream = random.Random


class Basis(Enum):
    RECTILINEAR = 0
    DIAGONAL = 1


@dataclass(frozen=True, slots=True)
class PhotonState:
    bit: int
    basis: Basis
    wavelength_nm: float = 1550.0
    photon_count: int = 1


@dataclass(frozen=True)
class NoiseParams:
    """Channel noise for one key exchange.

    ``mean_photon_number`` is the Poisson mean of detected photons per pulse;
    a zero draw counts as a loss.
    """

    p_loss: float = 0.25
    p_flip: float = 0.03
    p_depol: float = 0.03
    mean_photon_number: float = 3.0
    flight_time_mean: float = 0.065
    flight_time_std: float = 0.01

    def __post_init__(self):
        for name in ("p_loss", "p_flip", "p_depol"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.mean_photon_number < 0:
            raise ValueError("mean_photon_number must be >= 0")
        if self.flight_time_mean <= 0:
            raise ValueError("flight_time_mean must be > 0")
        if self.flight_time_std < 0:
            raise ValueError("flight_time_std must be >= 0")


@dataclass(frozen=True, slots=True)
class ChannelOutcome:
    lost: bool
    detected_count: int
    flight_time: float
    bit_after_noise: int | None


def random_bit(rng: RandomStream) -> int:
    return 1 if rng.random() < 0.5 else 0


def random_basis(rng: RandomStream) -> Basis:
    return Basis.DIAGONAL if rng.random() < 0.5 else Basis.RECTILINEAR


def encode(bit: int, basis: Basis, wavelength_nm: float = 1550.0, photon_count: int = 1) -> PhotonState:
    if bit not in (0, 1):
        raise ValueError(f"bit must be 0 or 1, got {bit!r}")
    if photon_count < 1:
        raise ValueError(f"photon_count must be >= 1, got {photon_count}")
    if wavelength_nm <= 0:
        raise ValueError(f"wavelength_nm must be > 0, got {wavelength_nm}")
    return PhotonState(bit, Basis(basis), float(wavelength_nm), int(photon_count))


def measure(state: PhotonState, basis: Basis, rng: RandomStream) -> int:
    """Projective measurement: exact in the preparation basis, a fair coin otherwise."""
    if basis is state.basis:
        return state.bit
    return random_bit(rng)


def poisson(mean: float, rng: RandomStream) -> int:
    """Poisson draw by sequential inversion; adequate for the small means used here."""
    if mean < 0:
        raise ValueError("mean must be >= 0")
    u = rng.random()
    k = 0
    p = math.exp(-mean)
    cdf = p
    # the cap guards against an endless loop when exp(-mean) underflows
    limit = int(mean + 40.0 * math.sqrt(mean) + 40.0)
    while u > cdf and k < limit:
        k += 1
        p *= mean / k
        cdf += p
    return k


def truncated_normal(mean: float, std: float, rng: RandomStream) -> float:
    """Normal draw truncated at zero by rejection (falls back to 0 on persistent rejection)."""
    if std == 0:
        return max(mean, 0.0)
    for _ in range(64):
        value = rng.gauss(mean, std)
        if value >= 0:
            return value
    return 0.0


def flip_and_depolarize(bit: int, p_flip: float, p_depol: float, rng: RandomStream) -> int:
    """Bit-flip error followed by classical depolarization (replacement by a uniform bit)."""
    if rng.random() < p_flip:
        bit ^= 1
    if rng.random() < p_depol:
        bit = random_bit(rng)
    return bit


def transmit(state: PhotonState, noise: NoiseParams, rng: RandomStream) -> ChannelOutcome:
    """Send one pulse through the lossy, noisy channel.

    Stages run in a fixed order: channel loss, Poisson shot noise, bit flip,
    depolarization, then the flight-time draw. The pulse is lost when the loss
    draw fires or no photon reaches the detector.
    """
    channel_loss = rng.random() < noise.p_loss
    k = poisson(noise.mean_photon_number * state.photon_count, rng)
    if channel_loss or k == 0:
        return ChannelOutcome(True, 0 if channel_loss else k, 0.0, None)
    bit = flip_and_depolarize(state.bit, noise.p_flip, noise.p_depol, rng)
    t = truncated_normal(noise.flight_time_mean, noise.flight_time_std, rng)
    return ChannelOutcome(False, k, t, bit)
