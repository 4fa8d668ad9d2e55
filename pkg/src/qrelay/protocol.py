"""Session engine for Alice, a chain of trusted relays and Bob.

Each round Alice prepares a random BB84 state; every relay measures in a
random basis and resends what it saw; Bob measures. Rounds are then sifted
on the announced bases. All rounds of a session are simulated at once as
numpy columns; the per-round view is available through :class:`RoundRecord`.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .adversary import AttackPolicy, EveLog, EveRecord, StatisticsReport, apply_attack_batch
from .channel import ChannelSpec, detect_batch, transmit_batch
from .core import Basis, QubitBatch, RandomStream, measure_batch, prepare_batch
from .postproc import BitKey, Stage

# child stream indices of the session seed
_ALICE, _EVE = 0, 1


def _leg_stream(leg: int) -> int:
    return 2 * leg


def _node_stream(node: int) -> int:
    return 2 * node + 1


class Mode(enum.Enum):
    TRUSTED_RELAY = "trusted-relay"
    MULTI_PARTY_CAROL = "carol"


class SiftStatus(enum.IntEnum):
    KEPT = 0
    BASIS = 1
    LOSS = 2


class SiftClass(enum.IntEnum):
    """Which parties share a basis in a one-relay round (Alice, Carol, Bob)."""

    ALL_MATCH = 0
    ALICE_CAROL = 1
    CAROL_BOB = 2
    DISCARD = 3


class UnsupportedTopologyError(ValueError):
    pass


@dataclass(frozen=True)
class SessionConfig:
    n_rounds: int
    relay_count: int
    channels: Tuple[ChannelSpec, ...]
    attack: AttackPolicy = AttackPolicy()
    seed: int = 0
    mode: Mode = Mode.TRUSTED_RELAY
    relay_detectors: bool = True

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.n_rounds <= 0:
            raise ValueError(f"n_rounds must be positive, got {self.n_rounds}")
        if self.relay_count < 0:
            raise ValueError(f"relay_count must be nonnegative, got {self.relay_count}")
        if len(self.channels) != self.relay_count + 1:
            raise ValueError(
                f"{self.relay_count} relays need {self.relay_count + 1} channel legs, "
                f"got {len(self.channels)}"
            )
        if self.attack.legs and max(self.attack.legs) > self.relay_count + 1:
            raise ValueError(
                f"attack on leg {max(self.attack.legs)} but the chain has only "
                f"{self.relay_count + 1} legs"
            )
        if self.mode is Mode.MULTI_PARTY_CAROL and self.relay_count != 1:
            raise ValueError("the three-party (Carol) mode needs exactly one relay")

    @classmethod
    def uniform(cls, n_rounds: int, relay_count: int, channel: ChannelSpec = ChannelSpec(),
                **kwargs) -> "SessionConfig":
        """Every leg described by the same ``channel``."""
        return cls(n_rounds, relay_count, (channel,) * (relay_count + 1), **kwargs)


@dataclass(frozen=True)
class RoundRecord:
    index: int
    alice_basis: Basis
    alice_bit: int
    relays: Tuple[Tuple[Basis, Optional[int]], ...]
    bob_basis: Basis
    bob_bit: Optional[int]
    eve: EveRecord
    status: SiftStatus


@dataclass
class Transcript:
    """Column-wise log of a session. Undetected outcomes are stored as 0
    with the matching ``*_detected`` flag cleared."""

    alice_bit: np.ndarray
    alice_basis: np.ndarray
    relay_basis: np.ndarray
    relay_bit: np.ndarray
    relay_detected: np.ndarray
    bob_basis: np.ndarray
    bob_bit: np.ndarray
    bob_detected: np.ndarray
    eve: EveLog = field(default_factory=EveLog)

    @property
    def relay_count(self) -> int:
        return self.relay_basis.shape[0]

    def __len__(self) -> int:
        return len(self.alice_bit)

    @property
    def detected(self) -> np.ndarray:
        """Rounds in which every measuring party registered a click."""
        return self.bob_detected & self.relay_detected.all(axis=0)

    @property
    def bases_agree(self) -> np.ndarray:
        return (self.relay_basis == self.alice_basis).all(axis=0) & (
            self.bob_basis == self.alice_basis
        )

    @property
    def status(self) -> np.ndarray:
        status = np.full(len(self), SiftStatus.BASIS, dtype=np.uint8)
        status[self.bases_agree] = SiftStatus.KEPT
        status[~self.detected] = SiftStatus.LOSS
        return status

    @property
    def kept(self) -> np.ndarray:
        return self.detected & self.bases_agree

    def record(self, i: int) -> RoundRecord:
        relays = tuple(
            (Basis(int(self.relay_basis[r, i])),
             int(self.relay_bit[r, i]) if self.relay_detected[r, i] else None)
            for r in range(self.relay_count)
        )
        return RoundRecord(
            index=i,
            alice_basis=Basis(int(self.alice_basis[i])),
            alice_bit=int(self.alice_bit[i]),
            relays=relays,
            bob_basis=Basis(int(self.bob_basis[i])),
            bob_bit=int(self.bob_bit[i]) if self.bob_detected[i] else None,
            eve=self.eve.record(i),
            status=SiftStatus(int(self.status[i])),
        )

    def __iter__(self) -> Iterator[RoundRecord]:
        return (self.record(i) for i in range(len(self)))

    def header(self) -> List[str]:
        cols = ["round", "alice_basis", "alice_bit"]
        for r in range(1, self.relay_count + 1):
            cols += [f"relay_{r}_basis", f"relay_{r}_bit"]
        return cols + ["bob_basis", "bob_bit", "sift_status"]

    def write_csv(self, fh) -> None:
        """One row per round; bases as X/Y, missing detections as ``-``."""
        names = "XY"
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(self.header())
        status = self.status
        labels = {s.value: s.name.lower() for s in SiftStatus}
        for i in range(len(self)):
            row = [i, names[self.alice_basis[i]], int(self.alice_bit[i])]
            for r in range(self.relay_count):
                row += [names[self.relay_basis[r, i]],
                        int(self.relay_bit[r, i]) if self.relay_detected[r, i] else "-"]
            row += [names[self.bob_basis[i]],
                    int(self.bob_bit[i]) if self.bob_detected[i] else "-",
                    labels[int(status[i])]]
            writer.writerow(row)

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()


@dataclass(frozen=True)
class SessionStats:
    n_rounds: int
    n_detected: int
    n_kept: int

    @property
    def detected_fraction(self) -> float:
        return self.n_detected / self.n_rounds

    @property
    def kept_fraction(self) -> float:
        """Kept rounds over rounds that reached every party."""
        return self.n_kept / self.n_detected if self.n_detected else 0.0


def run_session(config: SessionConfig) -> Tuple[Transcript, SessionStats]:
    n, relays = config.n_rounds, config.relay_count
    root = RandomStream(config.seed)
    alice = root.spawn(_ALICE)
    eve_rng = root.spawn(_EVE)

    a_bits, a_bases = alice.bits(n), alice.bases(n)
    q: QubitBatch = prepare_batch(a_bits, a_bases)
    eve = EveLog()
    relay_basis = np.zeros((relays, n), dtype=np.uint8)
    relay_bit = np.zeros((relays, n), dtype=np.uint8)
    relay_detected = np.zeros((relays, n), dtype=bool)

    for leg, spec in enumerate(config.channels, start=1):
        q = apply_attack_batch(config.attack, leg, q, eve, eve_rng)
        leg_rng = root.spawn(_leg_stream(leg))
        q = transmit_batch(q, spec, leg_rng)
        is_bob = leg == relays + 1
        if is_bob or config.relay_detectors:
            q = detect_batch(q, spec.detector_efficiency, leg_rng)
        node_rng = root.spawn(_node_stream(leg))
        bases = node_rng.bases(n)
        bits, detected = measure_batch(q, bases, node_rng)
        if is_bob:
            bob_basis, bob_bit, bob_detected = bases, bits, detected
        else:
            relay_basis[leg - 1], relay_bit[leg - 1], relay_detected[leg - 1] = bases, bits, detected
            # no click, nothing to resend
            q = QubitBatch(bases.copy(), bits.copy(), ~detected)

    transcript = Transcript(a_bits, a_bases, relay_basis, relay_bit, relay_detected,
                            bob_basis, bob_bit, bob_detected, eve)
    stats = SessionStats(n, int(transcript.detected.sum()), int(transcript.kept.sum()))
    return transcript, stats


@dataclass
class SiftedKeys:
    alice: BitKey
    relays: List[BitKey]
    bob: BitKey
    rounds: np.ndarray

    def __len__(self) -> int:
        return len(self.alice)


def relay_sift(transcript: Transcript) -> SiftedKeys:
    """Keep rounds where everyone detected and all bases agree."""
    kept = np.flatnonzero(transcript.kept)
    relays = [
        BitKey(transcript.relay_bit[r, kept], Stage.SIFTED, f"relay{r + 1}")
        for r in range(transcript.relay_count)
    ]
    return SiftedKeys(
        alice=BitKey(transcript.alice_bit[kept], Stage.SIFTED, "alice"),
        relays=relays,
        bob=BitKey(transcript.bob_bit[kept], Stage.SIFTED, "bob"),
        rounds=kept,
    )


@dataclass
class Classification:
    rounds: np.ndarray
    labels: np.ndarray

    @property
    def counts(self) -> Dict[SiftClass, int]:
        return {c: int(np.count_nonzero(self.labels == c)) for c in SiftClass}

    @property
    def fractions(self) -> Dict[SiftClass, float]:
        total = len(self.labels)
        return {c: (k / total if total else 0.0) for c, k in self.counts.items()}

    @property
    def usable_fraction(self) -> float:
        total = len(self.labels)
        return 1.0 - self.counts[SiftClass.DISCARD] / total if total else 0.0

    def rounds_of(self, cls: SiftClass) -> np.ndarray:
        return self.rounds[self.labels == cls]


def classify_bases(alice: int, carol: int, bob: int) -> SiftClass:
    if alice == carol == bob:
        return SiftClass.ALL_MATCH
    if alice == carol:
        return SiftClass.ALICE_CAROL
    if carol == bob:
        return SiftClass.CAROL_BOB
    return SiftClass.DISCARD


def classify_rounds(transcript: Transcript) -> Classification:
    """Label every loss-free one-relay round by who can share a key."""
    if transcript.relay_count != 1:
        raise UnsupportedTopologyError(
            f"round classification needs exactly one relay, got {transcript.relay_count}"
        )
    rounds = np.flatnonzero(transcript.detected)
    a = transcript.alice_basis[rounds]
    c = transcript.relay_basis[0, rounds]
    b = transcript.bob_basis[rounds]
    labels = np.full(len(rounds), SiftClass.DISCARD, dtype=np.uint8)
    labels[(c == b) & (a != c)] = SiftClass.CAROL_BOB
    labels[(a == c) & (c != b)] = SiftClass.ALICE_CAROL
    labels[(a == c) & (c == b)] = SiftClass.ALL_MATCH
    return Classification(rounds, labels)


def pairwise_keys(transcript: Transcript, classification: Classification):
    """Two-party keys from the Alice-Carol and Carol-Bob rounds.

    Returns ``{"alice-carol": (alice, carol), "carol-bob": (carol, bob)}``.
    """
    ac = classification.rounds_of(SiftClass.ALICE_CAROL)
    cb = classification.rounds_of(SiftClass.CAROL_BOB)
    carol = transcript.relay_bit[0]
    return {
        "alice-carol": (BitKey(transcript.alice_bit[ac], owner="alice"),
                        BitKey(carol[ac], owner="carol")),
        "carol-bob": (BitKey(carol[cb], owner="carol"),
                      BitKey(transcript.bob_bit[cb], owner="bob")),
    }


def measure_statistics(transcript: Transcript) -> StatisticsReport:
    """Monte Carlo counterpart of :func:`~qrelay.adversary.exact_statistics`.

    Trent is the first relay; with no relay the Trent fields are NaN.
    """
    keys = relay_sift(transcript)
    n = len(keys)
    if n == 0:
        nan = float("nan")
        return StatisticsReport(nan, nan, nan, nan, 0)
    a, b = keys.alice.bits, keys.bob.bits
    bob_wrong = a != b
    if keys.relays:
        trent_wrong = keys.relays[0].bits != a
        trent_qber = float(trent_wrong.mean())
        trent_only = float((trent_wrong & ~bob_wrong).mean())
    else:
        trent_qber = trent_only = float("nan")
    info = transcript.eve.information
    eve_info = float(info[keys.rounds].mean()) if info is not None else 0.0
    return StatisticsReport(float(bob_wrong.mean()), trent_qber, trent_only, eve_info, n)


def rounds_for_sifted(target: int, relay_count: int) -> int:
    """Lossless rounds needed to expect ``target`` sifted bits."""
    return target * 2 ** (relay_count + 1)
