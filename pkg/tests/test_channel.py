import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qrelay.channel import (
    ChannelSpec,
    detect,
    detect_batch,
    transmission,
    transmit,
    transmit_batch,
)
from qrelay.core import LOST, Basis, Prepared, RandomStream, prepare_batch
from qrelay.protocol import SessionConfig, run_session


def test_transmission_zero_distance():
    assert transmission(0, 0.25) == 1.0


def test_transmission_100km():
    assert math.isclose(transmission(100, 0.25), 10 ** -2.5, rel_tol=1e-12)
    assert math.isclose(transmission(100, 0.25), 3.1623e-3, rel_tol=1e-4)


@given(st.floats(0, 200), st.floats(0, 200), st.floats(0, 1))
def test_transmission_composes(d1, d2, alpha):
    assert math.isclose(transmission(d1, alpha) * transmission(d2, alpha),
                        transmission(d1 + d2, alpha), rel_tol=1e-12)


@pytest.mark.parametrize("d,a", [(-1, 0.25), (10, -0.1)])
def test_transmission_domain(d, a):
    with pytest.raises(ValueError):
        transmission(d, a)


@pytest.mark.parametrize("kwargs", [
    {"intrinsic_qber": 1.5},
    {"detector_efficiency": 0},
    {"detector_efficiency": 1.2},
    {"length_km": -3},
    {"platform": "copper"},
])
def test_channel_spec_validation(kwargs):
    with pytest.raises(ValueError):
        ChannelSpec(**kwargs)


def test_lost_stays_lost(rng):
    assert transmit(LOST, ChannelSpec(), rng) is LOST
    assert detect(LOST, 0.5, rng) is LOST


def test_noiseless_lossless_is_identity(rng):
    for q in (Prepared(Basis.X, 0), Prepared(Basis.Y, 1)):
        assert transmit(q, ChannelSpec(), rng) == q


def test_intrinsic_flip_rate():
    rng = RandomStream(21)
    spec = ChannelSpec(intrinsic_qber=0.1)
    q = Prepared(Basis.X, 0)
    n = 100_000
    flipped = sum(transmit(q, spec, rng) == Prepared(Basis.X, 1) for _ in range(n))
    assert abs(flipped / n - 0.1) <= 0.003


def test_detector_efficiency_identity(rng):
    q = Prepared(Basis.Y, 0)
    assert detect(q, 1.0, rng) == q


def test_detector_efficiency_ten_percent():
    rng = RandomStream(22)
    n = 100_000
    q = prepare_batch(np.zeros(n, np.uint8), np.zeros(n, np.uint8))
    survivors = int((~detect_batch(q, 0.1, rng).lost).sum())
    assert abs(survivors - 10_000) <= 300


@pytest.mark.parametrize("eff", [0, -0.1, 1.01])
def test_detector_efficiency_domain(eff, rng):
    with pytest.raises(ValueError):
        detect(Prepared(Basis.X, 0), eff, rng)


def test_noise_flips_bits_never_bases():
    rng = RandomStream(23)
    n = 20_000
    q = prepare_batch(rng.bits(n), rng.bases(n))
    q.lost[:100] = True
    out = transmit_batch(q, ChannelSpec(length_km=20, intrinsic_qber=0.3), rng)
    assert np.array_equal(out.basis, q.basis)
    assert out.lost[:100].all()
    assert 0 < np.count_nonzero(out.bit[~out.lost] != q.bit[~out.lost])


def test_end_to_end_survival():
    legs = (ChannelSpec(length_km=10, detector_efficiency=0.5),
            ChannelSpec(length_km=30, detector_efficiency=0.8))
    n = 100_000
    _, stats = run_session(SessionConfig(n, 1, legs, seed=8))
    expected = legs[0].transmission * 0.5 * legs[1].transmission * 0.8
    sigma = math.sqrt(expected * (1 - expected) / n)
    assert abs(stats.detected_fraction - expected) <= 3 * sigma


def test_relay_detector_switch():
    legs = (ChannelSpec(detector_efficiency=0.5), ChannelSpec(detector_efficiency=0.5))
    n = 100_000
    _, stats = run_session(SessionConfig(n, 1, legs, seed=8, relay_detectors=False))
    sigma = math.sqrt(0.25 / n)
    assert abs(stats.detected_fraction - 0.5) <= 3 * sigma
