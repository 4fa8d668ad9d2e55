"""Intercept/resend eavesdropping on relay legs, and the exact enumeration oracle."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Real
from typing import Dict, FrozenSet, Optional, Union

import numpy as np

from .core import (
    LOST,
    Basis,
    Prepared,
    QubitBatch,
    QubitSymbol,
    RandomStream,
    measure,
    measure_batch,
)


class ProtocolOrderError(RuntimeError):
    """An attack step ran before the step it depends on."""


class BasisRule(enum.Enum):
    INDEPENDENT = "independent"
    REUSE_FIRST = "reuse"


@dataclass(frozen=True)
class AttackPolicy:
    """Which legs Eve intercepts and how she picks her basis on later legs.

    Leg 1 is Alice to the first relay, leg ``k`` enters node ``k``. With a
    single relay these are channel 1 and channel 2; longer
    chains may name any leg.
    """

    legs: FrozenSet[int] = frozenset()
    basis_rule: BasisRule = BasisRule.INDEPENDENT

    def __post_init__(self):
        object.__setattr__(self, "legs", frozenset(int(k) for k in self.legs))
        if any(k < 1 for k in self.legs):
            raise ValueError(f"attack legs are numbered from 1, got {sorted(self.legs)}")
        if self.basis_rule is BasisRule.REUSE_FIRST and len(self.legs) < 2:
            raise ValueError("basis reuse needs at least two attacked legs")

    @classmethod
    def from_flags(cls, channel1: bool, channel2: bool,
                   basis_rule: BasisRule = BasisRule.INDEPENDENT) -> "AttackPolicy":
        legs = {k for k, on in ((1, channel1), (2, channel2)) if on}
        return cls(frozenset(legs), basis_rule)

    @classmethod
    def named(cls, name: str) -> "AttackPolicy":
        try:
            return NAMED_POLICIES[name]
        except KeyError:
            raise ValueError(
                f"unknown attack {name!r}; expected one of {', '.join(NAMED_POLICIES)}"
            ) from None

    @property
    def channel1(self) -> bool:
        return 1 in self.legs

    @property
    def channel2(self) -> bool:
        return 2 in self.legs

    @property
    def is_null(self) -> bool:
        return not self.legs

    @property
    def first_leg(self) -> Optional[int]:
        return min(self.legs) if self.legs else None

    @property
    def name(self) -> str:
        for label, policy in NAMED_POLICIES.items():
            if policy == self:
                return label
        legs = ",".join(str(k) for k in sorted(self.legs))
        return f"legs:{legs}:{self.basis_rule.value}"


NAMED_POLICIES: Dict[str, AttackPolicy] = {
    "none": AttackPolicy(),
    "ch1": AttackPolicy(frozenset({1})),
    "ch2": AttackPolicy(frozenset({2})),
    "both-independent": AttackPolicy(frozenset({1, 2}), BasisRule.INDEPENDENT),
    "both-reuse": AttackPolicy(frozenset({1, 2}), BasisRule.REUSE_FIRST),
}


@dataclass
class EveRecord:
    """Eve's view of one round. ``information`` follows the coarse rule:
    one bit when her basis on the first attacked leg matched the qubit."""

    bases: Dict[int, Basis] = field(default_factory=dict)
    bits: Dict[int, Optional[int]] = field(default_factory=dict)
    information: int = 0


def intercept_resend(q: QubitSymbol, basis: Basis, rng: RandomStream):
    outcome = measure(q, basis, rng)
    if outcome is None:
        return None, LOST
    return outcome, Prepared(Basis(basis), outcome)


def _reused_basis(policy: AttackPolicy, leg: int, known: Dict[int, object]):
    first = policy.first_leg
    if first not in known:
        raise ProtocolOrderError(
            f"leg {leg} reuses Eve's basis from leg {first}, which has not been attacked yet"
        )
    return known[first]


def apply_attack(policy: AttackPolicy, leg: int, q: QubitSymbol, record: EveRecord,
                 rng: RandomStream) -> QubitSymbol:
    if leg < 1:
        raise ValueError(f"leg must be >= 1, got {leg}")
    if leg not in policy.legs:
        return q
    if policy.basis_rule is BasisRule.REUSE_FIRST and leg != policy.first_leg:
        basis = _reused_basis(policy, leg, record.bases)
    else:
        basis = rng.basis()
    outcome, resent = intercept_resend(q, basis, rng)
    record.bases[leg] = basis
    record.bits[leg] = outcome
    if leg == policy.first_leg and q is not LOST:
        record.information = int(basis == q.basis)
    return resent


@dataclass
class EveLog:
    """Column-wise :class:`EveRecord` for a whole session."""

    bases: Dict[int, np.ndarray] = field(default_factory=dict)
    bits: Dict[int, np.ndarray] = field(default_factory=dict)
    detected: Dict[int, np.ndarray] = field(default_factory=dict)
    information: Optional[np.ndarray] = None

    def record(self, i: int) -> EveRecord:
        rec = EveRecord()
        for leg in sorted(self.bases):
            rec.bases[leg] = Basis(int(self.bases[leg][i]))
            rec.bits[leg] = int(self.bits[leg][i]) if self.detected[leg][i] else None
        if self.information is not None:
            rec.information = int(self.information[i])
        return rec


def apply_attack_batch(policy: AttackPolicy, leg: int, q: QubitBatch, log: EveLog,
                       rng: RandomStream) -> QubitBatch:
    if leg not in policy.legs:
        return q
    if policy.basis_rule is BasisRule.REUSE_FIRST and leg != policy.first_leg:
        bases = _reused_basis(policy, leg, log.bases)
    else:
        bases = rng.bases(len(q))
    bits, detected = measure_batch(q, bases, rng)
    log.bases[leg] = bases
    log.bits[leg] = bits
    log.detected[leg] = detected
    if leg == policy.first_leg:
        log.information = ((bases == q.basis) & detected).astype(np.uint8)
    return QubitBatch(bases.copy(), bits, q.lost.copy())


Number = Union[Fraction, float]


@dataclass(frozen=True)
class StatisticsReport:
    """Error statistics of a one-relay session, conditioned on sifting.

    Exact reports carry :class:`~fractions.Fraction` values and ``n=None``;
    Monte Carlo reports carry floats and the number of sifted rounds.
    """

    bob_qber: Number
    trent_qber: Number
    trent_wrong_bob_right: Number
    eve_information: Number
    n: Optional[int] = None

    FIELDS = ("bob_qber", "trent_qber", "trent_wrong_bob_right", "eve_information")

    def as_dict(self) -> Dict[str, Number]:
        return {name: getattr(self, name) for name in self.FIELDS}


def _as_probability(d, label: str) -> Fraction:
    if not isinstance(d, Real):
        raise TypeError(f"{label} must be a real number")
    d = Fraction(d)
    if not 0 <= d <= 1:
        raise ValueError(f"{label} must be in [0, 1], got {float(d)}")
    return d


def exact_statistics(policy: AttackPolicy, d1=0, d2=0) -> StatisticsReport:
    """Exact sift-conditioned statistics for Alice, Trent, Bob and Eve.

    Brute-force enumeration of every discrete choice in a one-relay round:
    Alice's bit and basis, Eve's bases and conjugate-measurement coins on each
    attacked leg, the two noise flips, Trent's and Bob's bases and coins.
    Each measurement gets its own fair coin that is only read when the bases
    disagree, so all variables are independent and weights multiply. Floats
    are converted to their exact binary fractions, so the result is exact.
    """
    if not policy.legs <= {1, 2}:
        raise ValueError("exact statistics cover the one-relay topology (legs 1 and 2) only")
    d1 = _as_probability(d1, "d1")
    d2 = _as_probability(d2, "d2")
    half = Fraction(1, 2)
    coin = ((0, half), (1, half))
    reuse = policy.basis_rule is BasisRule.REUSE_FIRST

    axes = {
        "a_bit": coin, "a_basis": coin,
        "f1": ((0, 1 - d1), (1, d1)),
        "t_basis": coin, "t_coin": coin,
        "f2": ((0, 1 - d2), (1, d2)),
        "b_basis": coin, "b_coin": coin,
    }
    if policy.channel1:
        axes.update(e1_basis=coin, e1_coin=coin)
    if policy.channel2:
        axes["e2_coin"] = coin
        if not (reuse and policy.channel1):
            axes["e2_basis"] = coin

    names = list(axes)
    sift = bob_err = trent_err = trent_only = info = Fraction(0)
    for combo in itertools.product(*(axes[k] for k in names)):
        v = {k: val for k, (val, _) in zip(names, combo)}
        w = Fraction(1)
        for _, p in combo:
            w *= p
        if w == 0:
            continue
        if not v["a_basis"] == v["t_basis"] == v["b_basis"]:
            continue

        basis, bit = v["a_basis"], v["a_bit"]
        gained = 0
        if policy.channel1:
            eb = v["e1_basis"]
            gained = int(eb == basis)
            bit = bit if eb == basis else v["e1_coin"]
            basis = eb
        bit ^= v["f1"]
        tb = v["t_basis"]
        trent_bit = bit if tb == basis else v["t_coin"]
        basis, bit = tb, trent_bit
        if policy.channel2:
            eb = v["e1_basis"] if reuse and policy.channel1 else v["e2_basis"]
            if not policy.channel1:
                gained = int(eb == basis)
            bit = bit if eb == basis else v["e2_coin"]
            basis = eb
        bit ^= v["f2"]
        bob_bit = bit if v["b_basis"] == basis else v["b_coin"]

        a_bit = v["a_bit"]
        sift += w
        bob_err += w * (bob_bit != a_bit)
        trent_err += w * (trent_bit != a_bit)
        trent_only += w * (trent_bit != a_bit and bob_bit == a_bit)
        info += w * gained

    return StatisticsReport(
        bob_qber=bob_err / sift,
        trent_qber=trent_err / sift,
        trent_wrong_bob_right=trent_only / sift,
        eve_information=info / sift,
    )
