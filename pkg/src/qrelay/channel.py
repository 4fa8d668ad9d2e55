"""One quantum channel leg: fiber loss, intrinsic bit-flip noise, detectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LOST, Prepared, QubitBatch, QubitSymbol, RandomStream

#: Typical telecom fiber attenuation at 1550 nm, dB/km.
FIBER_ATTENUATION = 0.25
#: Typical single-photon detector efficiency.
DETECTOR_EFFICIENCY = 0.1


def transmission(length_km: float, attenuation_db_per_km: float) -> float:
    """Fraction of photons surviving ``length_km`` of line: 10**(-a*d/10)."""
    if length_km < 0 or attenuation_db_per_km < 0:
        raise ValueError("length and attenuation must be nonnegative")
    return 10.0 ** (-attenuation_db_per_km * length_km / 10.0)


@dataclass(frozen=True)
class ChannelSpec:
    length_km: float = 0.0
    attenuation_db_per_km: float = FIBER_ATTENUATION
    intrinsic_qber: float = 0.0
    detector_efficiency: float = 1.0
    platform: str = "fiber"

    def __post_init__(self):
        if self.length_km < 0:
            raise ValueError(f"length_km must be >= 0, got {self.length_km}")
        if self.attenuation_db_per_km < 0:
            raise ValueError(
                f"attenuation_db_per_km must be >= 0, got {self.attenuation_db_per_km}"
            )
        if not 0.0 <= self.intrinsic_qber <= 1.0:
            raise ValueError(f"intrinsic_qber must be in [0, 1], got {self.intrinsic_qber}")
        if not 0.0 < self.detector_efficiency <= 1.0:
            raise ValueError(
                f"detector_efficiency must be in (0, 1], got {self.detector_efficiency}"
            )
        if self.platform not in ("fiber", "freespace"):
            raise ValueError(f"platform must be 'fiber' or 'freespace', got {self.platform!r}")

    @property
    def transmission(self) -> float:
        return transmission(self.length_km, self.attenuation_db_per_km)


def transmit(q: QubitSymbol, spec: ChannelSpec, rng: RandomStream) -> QubitSymbol:
    """Send one qubit down a leg. Detector efficiency is not applied here."""
    if q is LOST:
        return LOST
    if rng.uniform() >= spec.transmission:
        return LOST
    if rng.uniform() < spec.intrinsic_qber:
        return Prepared(q.basis, 1 - q.bit)
    return q


def _check_efficiency(efficiency: float) -> None:
    if not 0.0 < efficiency <= 1.0:
        raise ValueError(f"detector efficiency must be in (0, 1], got {efficiency}")


def detect(q: QubitSymbol, efficiency: float, rng: RandomStream) -> QubitSymbol:
    _check_efficiency(efficiency)
    if q is LOST:
        return LOST
    if rng.uniform() >= efficiency:
        return LOST
    return q


def transmit_batch(q: QubitBatch, spec: ChannelSpec, rng: RandomStream) -> QubitBatch:
    # fixed draw order (survival, then flip) keeps the stream data-independent
    survive = rng.uniforms(len(q)) < spec.transmission
    flip = rng.uniforms(len(q)) < spec.intrinsic_qber
    out = q.copy()
    out.lost |= ~survive
    out.bit ^= (flip & ~out.lost).astype(np.uint8)
    return out


def detect_batch(q: QubitBatch, efficiency: float, rng: RandomStream) -> QubitBatch:
    _check_efficiency(efficiency)
    clicked = rng.uniforms(len(q)) < efficiency
    out = q.copy()
    out.lost |= ~clicked
    return out
