"""Classical post-processing: QBER estimation, reconciliation, privacy amplification."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
from scipy.signal import fftconvolve

from .core import RandomStream

#: Reconciliation inefficiency charged on top of the Shannon limit.
EC_EFFICIENCY = 1.2
DEFAULT_SAMPLE_FRACTION = 0.5
DEFAULT_SAFETY_MARGIN = 30


class KeyExhaustedError(ValueError):
    """Privacy amplification would leave no key."""


class Stage(enum.IntEnum):
    SIFTED = 0
    ESTIMATED = 1
    CORRECTED = 2
    FINAL = 3


@dataclass(eq=False)
class BitKey:
    bits: np.ndarray
    stage: Stage = Stage.SIFTED
    owner: str = ""

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.bits.ndim != 1:
            raise ValueError("key bits must be one-dimensional")

    @classmethod
    def from_string(cls, text: str, stage: Stage = Stage.SIFTED, owner: str = "") -> "BitKey":
        if set(text) - {"0", "1"}:
            raise ValueError(f"not a bit string: {text!r}")
        return cls(np.array([int(c) for c in text], dtype=np.uint8), stage, owner)

    def __len__(self) -> int:
        return len(self.bits)

    def __str__(self) -> str:
        return "".join(map(str, self.bits.tolist()))

    def __repr__(self) -> str:
        shown = str(self) if len(self) <= 32 else f"{str(self)[:32]}..."
        return f"BitKey({shown!r}, len={len(self)}, stage={self.stage.name}, owner={self.owner!r})"

    def same_bits(self, other: "BitKey") -> bool:
        return len(self) == len(other) and bool(np.array_equal(self.bits, other.bits))

    def hex(self) -> str:
        """Big-endian hex of the bits, zero-padded on the left to whole nibbles."""
        pad = (-len(self)) % 8
        packed = np.packbits(np.concatenate([np.zeros(pad, np.uint8), self.bits]))
        text = packed.tobytes().hex()
        return text[(pad // 4):] if pad else text

    def advance(self, bits: np.ndarray, stage: Stage) -> "BitKey":
        if stage < self.stage:
            raise ValueError(f"cannot move key from {self.stage.name} back to {stage.name}")
        return BitKey(bits, stage, self.owner)


def _check_lengths(*keys: BitKey) -> None:
    lengths = {len(k) for k in keys}
    if len(lengths) > 1:
        raise ValueError(f"key length mismatch: {[len(k) for k in keys]}")


def mismatch_fraction(key_a: BitKey, key_b: BitKey) -> float:
    _check_lengths(key_a, key_b)
    if len(key_a) == 0:
        return 0.0
    return float(np.count_nonzero(key_a.bits != key_b.bits)) / len(key_a)


def binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


@dataclass(frozen=True)
class ReconciliationReport:
    estimated_qber: float
    disclosed_bits: int
    leakage_bits: int
    corrected_length: int
    residual_errors: int = 0

    def __post_init__(self):
        if self.leakage_bits < 0:
            raise ValueError("leakage must be nonnegative")

    def combine(self, other: "ReconciliationReport") -> "ReconciliationReport":
        return ReconciliationReport(
            estimated_qber=max(self.estimated_qber, other.estimated_qber),
            disclosed_bits=self.disclosed_bits + other.disclosed_bits,
            leakage_bits=self.leakage_bits + other.leakage_bits,
            corrected_length=min(self.corrected_length, other.corrected_length),
            residual_errors=self.residual_errors + other.residual_errors,
        )


def estimate_qber(key_a: BitKey, key_b: BitKey, sample_fraction: float,
                  rng: RandomStream) -> Tuple[float, BitKey, BitKey]:
    """Compare and discard a random sample; return its error rate and what is left."""
    _check_lengths(key_a, key_b)
    if not 0.0 < sample_fraction < 1.0:
        raise ValueError(f"sample_fraction must be in (0, 1), got {sample_fraction}")
    n = len(key_a)
    k = int(round(sample_fraction * n))
    if k == 0:
        raise ValueError(f"empty QBER sample ({sample_fraction} of {n} bits)")
    sample = rng.choice(n, k)
    errors = np.count_nonzero(key_a.bits[sample] != key_b.bits[sample])
    keep = np.ones(n, dtype=bool)
    keep[sample] = False
    return (
        errors / k,
        key_a.advance(key_a.bits[keep], Stage.ESTIMATED),
        key_b.advance(key_b.bits[keep], Stage.ESTIMATED),
    )


class ECMode(enum.Enum):
    ORACLE = "oracle"
    PARITY_BISECT = "parity"


def oracle_leakage(n: int, qber: float) -> int:
    return math.ceil(EC_EFFICIENCY * n * binary_entropy(qber))


def _parity(bits: np.ndarray) -> int:
    return int(np.bitwise_xor.reduce(bits)) if len(bits) else 0


def _parity_bisect(a: np.ndarray, b: np.ndarray, block: int, passes: int,
                   rng: Optional[RandomStream]) -> Tuple[np.ndarray, int]:
    b = b.copy()
    n = len(a)
    disclosed = 0
    for p in range(passes):
        if p and rng is None:
            raise ValueError("parity bisection with more than one pass needs an rng")
        order = np.arange(n) if p == 0 else rng.permutation(n)
        for start in range(0, n, block):
            idx = order[start:start + block]
            disclosed += 1
            if _parity(a[idx]) == _parity(b[idx]):
                continue
            while len(idx) > 1:
                left = idx[:(len(idx) + 1) // 2]
                disclosed += 1
                idx = left if _parity(a[left]) != _parity(b[left]) else idx[len(left):]
            b[idx[0]] ^= 1
        block = min(2 * block, max(n, 1))
    return b, disclosed


def error_correct(key_a: BitKey, key_b: BitKey, mode: ECMode = ECMode.ORACLE, *,
                  qber: Optional[float] = None, rng: Optional[RandomStream] = None,
                  block_size: Optional[int] = None,
                  passes: int = 4) -> Tuple[BitKey, ReconciliationReport]:
    """Reconcile ``key_b`` towards ``key_a``.

    ``ORACLE`` copies ``key_a`` and charges ``ceil(1.2 n h2(qber))`` leaked
    bits, where ``qber`` defaults to the true mismatch rate. ``PARITY_BISECT``
    runs block-parity comparison with binary search over ``passes`` shuffled
    passes (block size doubling each pass); every parity exchanged counts as
    one leaked bit and leftover errors are reported, not hidden.
    """
    _check_lengths(key_a, key_b)
    mode = ECMode(mode)
    n = len(key_a)
    true_qber = mismatch_fraction(key_a, key_b)
    if qber is None:
        qber = true_qber
    if mode is ECMode.ORACLE:
        corrected = key_a.bits.copy()
        leakage = oracle_leakage(n, qber)
    else:
        if block_size is None:
            block_size = max(1, round(0.73 / qber)) if qber > 0 else max(n, 1)
        if block_size < 1:
            raise ValueError("block_size must be positive")
        corrected, leakage = _parity_bisect(key_a.bits, key_b.bits, block_size, passes, rng)
    residual = int(np.count_nonzero(corrected != key_a.bits))
    report = ReconciliationReport(
        estimated_qber=float(qber),
        disclosed_bits=0,
        leakage_bits=leakage,
        corrected_length=n,
        residual_errors=residual,
    )
    return key_b.advance(corrected, Stage.CORRECTED), report


def two_step_correct(alice: BitKey, carol: BitKey, bob: BitKey,
                     mode: ECMode = ECMode.ORACLE, *, rng: Optional[RandomStream] = None,
                     passes: int = 4):
    """Three-party reconciliation for keys from all-bases-match rounds.

    Alice and Carol reconcile first while Bob copies every flip Carol makes;
    then Alice and Bob reconcile while Carol, siding with Alice, keeps her
    key. Returns ``(alice, carol, bob, report)``.
    """
    _check_lengths(alice, carol, bob)
    carol_fixed, first = error_correct(alice, carol, mode, rng=rng, passes=passes)
    flips = carol.bits ^ carol_fixed.bits
    bob_heard = bob.advance(bob.bits ^ flips, bob.stage)
    bob_fixed, second = error_correct(alice, bob_heard, mode, rng=rng, passes=passes)
    alice_out = alice.advance(alice.bits.copy(), Stage.CORRECTED)
    carol_out = carol_fixed.advance(carol_fixed.bits.copy(), Stage.CORRECTED)
    return alice_out, carol_out, bob_fixed, first.combine(second)


def follow_correction(listener: BitKey, reference: BitKey, before: BitKey,
                      after: BitKey) -> BitKey:
    """A third party tracking a two-party reconciliation.

    Wherever the corrected party's bit changed, the listener learns it was an
    error and takes the reference value; elsewhere it keeps its own bit.
    """
    _check_lengths(listener, reference, before, after)
    changed = before.bits != after.bits
    bits = np.where(changed, reference.bits, listener.bits).astype(np.uint8)
    return listener.advance(bits, Stage.CORRECTED)


def trent_residual_error(alice: BitKey, trent: BitKey, bob: BitKey) -> float:
    """Fraction of positions where Trent is wrong but Bob is right."""
    _check_lengths(alice, trent, bob)
    if len(alice) == 0:
        return 0.0
    wrong = (trent.bits != alice.bits) & (bob.bits == alice.bits)
    return float(np.count_nonzero(wrong)) / len(alice)


def toeplitz_seed_bits(seed: int, n_in: int, n_out: int) -> np.ndarray:
    """The ``n_in + n_out - 1`` bits that define the hash matrix.

    Entry ``(i, j)`` of the matrix is ``bits[i - j + n_in - 1]``.
    """
    return RandomStream(seed).bits(n_in + n_out - 1)


def toeplitz_hash(bits: np.ndarray, seed: int, n_out: int) -> np.ndarray:
    n_in = len(bits)
    diag = toeplitz_seed_bits(seed, n_in, n_out)
    if n_in * n_out <= 1 << 20:
        full = np.convolve(diag.astype(np.int64), bits.astype(np.int64))
    else:
        full = np.rint(fftconvolve(diag.astype(np.float64), bits.astype(np.float64)))
        full = full.astype(np.int64)
    return (full[n_in - 1:n_in - 1 + n_out] & 1).astype(np.uint8)


def privacy_amplify(key: BitKey, leakage: int, safety_margin: int = DEFAULT_SAFETY_MARGIN,
                    seed: int = 0) -> BitKey:
    """Compress ``key`` by ``leakage + safety_margin`` bits with a seeded Toeplitz hash."""
    if leakage < 0 or safety_margin < 0:
        raise ValueError("leakage and safety_margin must be nonnegative")
    n_out = len(key) - leakage - safety_margin
    if n_out <= 0:
        raise KeyExhaustedError(
            f"{len(key)}-bit key cannot absorb {leakage} leaked + {safety_margin} margin bits"
        )
    return key.advance(toeplitz_hash(key.bits, seed, n_out), Stage.FINAL)


@dataclass(frozen=True)
class DistillResult:
    alice: Optional[BitKey]
    bob: Optional[BitKey]
    qber: float
    report: ReconciliationReport

    @property
    def final_length(self) -> int:
        return 0 if self.alice is None else len(self.alice)


def distill(alice: BitKey, bob: BitKey, rng: RandomStream, *,
            sample_fraction: float = DEFAULT_SAMPLE_FRACTION,
            safety_margin: int = DEFAULT_SAFETY_MARGIN,
            ec_mode: ECMode = ECMode.ORACLE, pa_seed: int = 0) -> DistillResult:
    """Estimate, reconcile and amplify a sifted key pair.

    A pair that cannot survive amplification yields ``alice = bob = None``.
    """
    qber, est_a, est_b = estimate_qber(alice, bob, sample_fraction, rng)
    fixed_b, report = error_correct(est_a, est_b, ec_mode, qber=qber, rng=rng)
    report = replace(report, disclosed_bits=len(alice) - len(est_a))
    fixed_a = est_a.advance(est_a.bits, Stage.CORRECTED)
    try:
        final_a = privacy_amplify(fixed_a, report.leakage_bits, safety_margin, pa_seed)
        final_b = privacy_amplify(fixed_b, report.leakage_bits, safety_margin, pa_seed)
    except KeyExhaustedError:
        return DistillResult(None, None, qber, report)
    return DistillResult(final_a, final_b, qber, report)
