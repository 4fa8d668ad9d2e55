import io

import numpy as np
import pytest

from qrelay.adversary import NAMED_POLICIES, AttackPolicy
from qrelay.channel import ChannelSpec
from qrelay.core import Basis
from qrelay.protocol import (
    Mode,
    SessionConfig,
    SiftClass,
    SiftStatus,
    UnsupportedTopologyError,
    classify_bases,
    classify_rounds,
    pairwise_keys,
    relay_sift,
    run_session,
)

from conftest import within_sigma


def lossless(n, relays, **kw):
    return run_session(SessionConfig.uniform(n, relays, **kw))


@pytest.mark.parametrize("relays,expected,tol", [(1, 0.25, 0.01), (3, 0.0625, 0.005),
                                                 (0, 0.5, 0.01)])
def test_kept_fraction_examples(relays, expected, tol):
    _, stats = lossless(100_000, relays, seed=relays)
    assert abs(stats.kept_fraction - expected) <= tol


@pytest.mark.parametrize("relays", range(5))
def test_chain_fidelity(relays):
    transcript, _ = lossless(20_000, relays, seed=40 + relays)
    keys = relay_sift(transcript)
    assert len(keys) > 0
    for k in keys.relays + [keys.bob]:
        assert k.same_bits(keys.alice)


def test_config_validation():
    with pytest.raises(ValueError):
        SessionConfig(10, 2, (ChannelSpec(),) * 2)
    with pytest.raises(ValueError):
        SessionConfig(0, 0, (ChannelSpec(),))
    with pytest.raises(ValueError):
        SessionConfig.uniform(10, 0, attack=NAMED_POLICIES["ch2"])
    with pytest.raises(ValueError):
        SessionConfig.uniform(10, 2, mode=Mode.MULTI_PARTY_CAROL)


def test_attack_on_longer_chain_is_allowed():
    policy = AttackPolicy(frozenset({3}))
    transcript, _ = lossless(40_000, 2, attack=policy, seed=3)
    keys = relay_sift(transcript)
    assert keys.relays[1].same_bits(keys.alice)
    assert 0.2 < np.mean(keys.bob.bits != keys.alice.bits) < 0.3


def test_same_seed_same_transcript():
    a, _ = lossless(5000, 2, seed=99, attack=AttackPolicy(frozenset({1, 2})))
    b, _ = lossless(5000, 2, seed=99, attack=AttackPolicy(frozenset({1, 2})))
    assert a.to_csv() == b.to_csv()
    c, _ = lossless(5000, 2, seed=100, attack=AttackPolicy(frozenset({1, 2})))
    assert a.to_csv() != c.to_csv()


def test_round_record_invariants():
    legs = (ChannelSpec(length_km=10), ChannelSpec(length_km=10))
    transcript, _ = run_session(SessionConfig(3000, 1, legs, seed=6))
    for rec in transcript:
        parties = [rec.bob_bit] + [bit for _, bit in rec.relays]
        if any(b is None for b in parties):
            assert rec.status is SiftStatus.LOSS
        if rec.status is SiftStatus.KEPT:
            assert all(basis == rec.alice_basis for basis, _ in rec.relays)
            assert rec.bob_basis == rec.alice_basis


def test_lost_at_relay_means_nothing_downstream():
    legs = (ChannelSpec(length_km=20), ChannelSpec())
    transcript, _ = run_session(SessionConfig(20_000, 1, legs, seed=7))
    missed = ~transcript.relay_detected[0]
    assert missed.any()
    assert not transcript.bob_detected[missed].any()


def test_sift_drops_basis_mismatch():
    transcript, _ = lossless(2000, 1, seed=8)
    keys = relay_sift(transcript)
    mismatch = np.flatnonzero(transcript.relay_basis[0] != transcript.alice_basis)
    assert not set(mismatch) & set(keys.rounds.tolist())
    assert len(keys.alice) == len(keys.bob) == len(keys.relays[0])


def test_sift_under_dual_attack():
    transcript, _ = lossless(400_000, 1, seed=9, attack=NAMED_POLICIES["both-independent"])
    keys = relay_sift(transcript)
    assert abs(np.mean(keys.alice.bits != keys.bob.bits) - 0.375) <= 0.01


@pytest.mark.parametrize("relays", range(5))
def test_sift_rate_law(relays):
    _, stats = lossless(100_000, relays, seed=500 + relays)
    assert within_sigma(stats.kept_fraction, 2.0 ** -(relays + 1), stats.n_detected)


def test_loss_composition():
    legs = (ChannelSpec(length_km=12), ChannelSpec(length_km=28))
    _, stats = run_session(SessionConfig(100_000, 1, legs, seed=10))
    t = legs[0].transmission * legs[1].transmission
    assert within_sigma(stats.detected_fraction, t, 100_000)


@pytest.mark.parametrize("bases,expected", [
    ((Basis.X, Basis.X, Basis.X), SiftClass.ALL_MATCH),
    ((Basis.X, Basis.Y, Basis.X), SiftClass.DISCARD),
    ((Basis.Y, Basis.Y, Basis.X), SiftClass.ALICE_CAROL),
    ((Basis.X, Basis.Y, Basis.Y), SiftClass.CAROL_BOB),
])
def test_classify_bases(bases, expected):
    assert classify_bases(*bases) is expected


def test_classification_matches_scalar_rule():
    transcript, _ = lossless(5000, 1, seed=11)
    c = classify_rounds(transcript)
    for r, label in zip(c.rounds, c.labels):
        expected = classify_bases(transcript.alice_basis[r], transcript.relay_basis[0, r],
                                  transcript.bob_basis[r])
        assert label == expected


def test_classification_partition():
    legs = (ChannelSpec(length_km=5), ChannelSpec(length_km=5))
    transcript, _ = run_session(SessionConfig(50_000, 1, legs, seed=12))
    c = classify_rounds(transcript)
    assert sum(c.counts.values()) == len(c.rounds) == int(transcript.detected.sum())
    assert sum(c.fractions.values()) == pytest.approx(1.0, abs=1e-12)


def test_classification_fractions():
    transcript, _ = lossless(100_000, 1, seed=13)
    c = classify_rounds(transcript)
    for frac in c.fractions.values():
        assert abs(frac - 0.25) <= 0.01
    assert abs(c.usable_fraction - 0.75) <= 0.01


def test_classification_needs_one_relay():
    transcript, _ = lossless(100, 2, seed=1)
    with pytest.raises(UnsupportedTopologyError):
        classify_rounds(transcript)


def test_pairwise_keys_agree_without_noise():
    transcript, _ = lossless(10_000, 1, seed=14)
    pairs = pairwise_keys(transcript, classify_rounds(transcript))
    a, c = pairs["alice-carol"]
    c2, b = pairs["carol-bob"]
    assert a.same_bits(c) and c2.same_bits(b)
    assert len(a) > 0 and len(b) > 0


def test_transcript_export_format():
    legs = (ChannelSpec(length_km=40), ChannelSpec())
    transcript, _ = run_session(SessionConfig(200, 1, legs, seed=15))
    text = transcript.to_csv().splitlines()
    assert text[0] == ("round,alice_basis,alice_bit,relay_1_basis,relay_1_bit,"
                       "bob_basis,bob_bit,sift_status")
    assert len(text) == 201
    statuses = {line.rsplit(",", 1)[1] for line in text[1:]}
    assert statuses <= {"kept", "basis", "loss"}
    assert any(",-," in line for line in text[1:])
