"""Bases, symbolic qubits and the seeded random stream.

Qubits are tracked symbolically as a (basis, bit) pair; the only physics the
simulator needs is that measuring in the preparation basis returns the
prepared bit and measuring in the conjugate basis returns a fair coin.

Bit encoding: +x and +y carry bit 0, -x and -y carry bit 1.

Randomness comes from :class:`RandomStream`, a thin wrapper over numpy's
PCG64 bit generator (PCG-XSL-RR 128/64) seeded with a 64-bit integer. PCG64
output is specified bit-for-bit, so a seed reproduces the same transcript on
every platform. Child streams are derived with :func:`derive_seed`: the first
8 bytes (little endian) of BLAKE2b over ``"<parent>:<index>"``.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

SEED_MAX = 2**64 - 1


class Basis(enum.IntEnum):
    X = 0
    Y = 1

    @classmethod
    def parse(cls, text: str) -> "Basis":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown basis {text!r}") from None


def derive_seed(parent: int, index: int) -> int:
    """Seed for the ``index``-th child of a stream seeded with ``parent``."""
    digest = hashlib.blake2b(f"{parent}:{index}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class RandomStream:
    """Single-owner reproducible source of bits, bases and uniform reals.

    Do not share one stream between concurrent sessions; derive a child with
    :meth:`spawn` instead.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed <= SEED_MAX:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed})"

    def spawn(self, index: int) -> "RandomStream":
        return RandomStream(derive_seed(self.seed, index))

    def bit(self) -> int:
        return int(self._gen.integers(0, 2))

    def bits(self, n: int) -> np.ndarray:
        return self._gen.integers(0, 2, size=n, dtype=np.uint8)

    def basis(self) -> Basis:
        return Basis(self.bit())

    def bases(self, n: int) -> np.ndarray:
        return self.bits(n)

    def uniform(self) -> float:
        return float(self._gen.random())

    def uniforms(self, n: int) -> np.ndarray:
        return self._gen.random(n)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int) -> np.ndarray:
        """``size`` distinct indices drawn uniformly from ``range(n)``, sorted."""
        return np.sort(self._gen.choice(n, size=size, replace=False))


@dataclass(frozen=True)
class Prepared:
    basis: Basis
    bit: int


class _Lost:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "LOST"

    def __reduce__(self):
        return (_Lost, ())


LOST = _Lost()
QubitSymbol = Union[Prepared, _Lost]


def prepare(bit: int, basis: Basis) -> Prepared:
    if bit not in (0, 1):
        raise ValueError(f"bit must be 0 or 1, got {bit!r}")
    return Prepared(Basis(basis), int(bit))


def measure(q: QubitSymbol, basis: Basis, rng: RandomStream) -> Optional[int]:
    """Measure ``q`` in ``basis``; ``None`` means no detection."""
    if q is LOST:
        return None
    if q.basis == basis:
        return q.bit
    return rng.bit()


@dataclass
class QubitBatch:
    """Column-wise form of many qubits travelling in parallel rounds.

    ``lost[i]`` overrides ``basis[i]`` and ``bit[i]``, which are then
    meaningless.
    """

    basis: np.ndarray
    bit: np.ndarray
    lost: np.ndarray

    def __len__(self) -> int:
        return len(self.bit)

    def __getitem__(self, i: int) -> QubitSymbol:
        if self.lost[i]:
            return LOST
        return Prepared(Basis(int(self.basis[i])), int(self.bit[i]))

    def copy(self) -> "QubitBatch":
        return QubitBatch(self.basis.copy(), self.bit.copy(), self.lost.copy())


def prepare_batch(bits: np.ndarray, bases: np.ndarray) -> QubitBatch:
    bits = np.asarray(bits, dtype=np.uint8)
    bases = np.asarray(bases, dtype=np.uint8)
    if bits.shape != bases.shape:
        raise ValueError("bits and bases must have the same shape")
    if np.any(bits > 1) or np.any(bases > 1):
        raise ValueError("bits and bases must be 0/1")
    return QubitBatch(bases.copy(), bits.copy(), np.zeros(bits.shape, dtype=bool))


def measure_batch(q: QubitBatch, bases: np.ndarray, rng: RandomStream):
    """Vectorised :func:`measure`.

    Returns ``(bits, detected)``; ``bits`` is 0 wherever ``detected`` is
    False. One coin is drawn per round regardless of outcome so the stream
    position never depends on the data.
    """
    bases = np.asarray(bases, dtype=np.uint8)
    coins = rng.bits(len(q))
    bits = np.where(bases == q.basis, q.bit, coins).astype(np.uint8)
    detected = ~q.lost
    bits[~detected] = 0
    return bits, detected
