import itertools
import math

import pytest
from hypothesis import given, settings, strategies as st

from qrelay.channel import DETECTOR_EFFICIENCY, ChannelSpec
from qrelay.network import (
    TopologyError,
    build_topology,
    link_budget,
    mesh_link_count,
    route,
    route_channels,
    run_networked_session,
)

LOSSLESS = ChannelSpec()


def four_star(access=LOSSLESS, mesh=LOSSLESS):
    trents = ["T1", "T2", "T3", "T4"]
    leaves = {f"{c}{i}": f"T{'abcd'.index(c) + 1}" for c in "abcd" for i in (1, 2, 3)}
    return build_topology(trents, leaves, access=access, mesh=mesh)


def test_four_trents_six_mesh_links():
    g = four_star()
    assert len(g.mesh_links) == 6
    assert len(g.star_links) == 12


def test_single_trent_has_no_mesh():
    g = build_topology(["T"], {"a": "T", "b": "T"})
    assert len(g.mesh_links) == 0 and len(g.star_links) == 2


@pytest.mark.parametrize("t", range(1, 9))
def test_mesh_count_matches_enumeration(t):
    trents = [f"T{i}" for i in range(t)]
    g = build_topology(trents, {})
    assert mesh_link_count(t) == len(g.mesh_links) == len(list(itertools.combinations(trents, 2)))


def test_route_relay_counts():
    g = four_star()
    assert route(g, "a1", "a2").nodes == ("a1", "T1", "a2")
    assert route(g, "a1", "a2").relay_count == 1
    r = route(g, "a1", "c3")
    assert r.nodes == ("a1", "T1", "T3", "c3") and r.relay_count == 2


def test_route_symmetry():
    g = four_star()
    for a, b in itertools.permutations(g.leaves, 2):
        assert route(g, a, b).reversed() == route(g, b, a)


@pytest.mark.parametrize("trents,leaves", [
    ([], {}),
    (["T1", "T1"], {}),
    (["T1"], {"T1": "T1"}),
    (["T1"], {"a": "T9"}),
])
def test_bad_topologies(trents, leaves):
    with pytest.raises(TopologyError):
        build_topology(trents, leaves)


def test_bad_routes():
    g = four_star()
    with pytest.raises(TopologyError):
        route(g, "a1", "zz")
    with pytest.raises(TopologyError):
        route(g, "a1", "a1")
    with pytest.raises(TopologyError):
        build_topology(["T"], {"a": "T"}, overrides={("a", "b"): LOSSLESS})


def test_budget_composes_over_legs():
    fiber = ChannelSpec(length_km=50)
    g = build_topology(["T"], {"a": "T", "b": "T"}, access=fiber)
    budget = link_budget(g, route(g, "a", "b"), detectors=False)
    assert math.isclose(budget.transmission, ChannelSpec(length_km=100).transmission,
                        rel_tol=1e-12)
    assert budget.sift_fraction == 0.25


def test_budget_cross_star():
    g = four_star()
    budget = link_budget(g, route(g, "a1", "b1"))
    assert budget.sift_fraction == 0.125
    assert budget.transmission == 1.0
    assert budget.rate_per_qubit == 0.125


def test_budget_mixed_platforms():
    access = ChannelSpec(length_km=10, detector_efficiency=DETECTOR_EFFICIENCY)
    mesh = ChannelSpec(length_km=300, attenuation_db_per_km=0.01, platform="freespace",
                       detector_efficiency=DETECTOR_EFFICIENCY)
    g = four_star(access, mesh)
    r = route(g, "a1", "d2")
    expected = math.prod(s.transmission for s in route_channels(g, r))
    assert math.isclose(link_budget(g, r, relay_detectors=False).transmission,
                        expected * DETECTOR_EFFICIENCY, rel_tol=1e-12)
    assert math.isclose(link_budget(g, r).transmission,
                        expected * DETECTOR_EFFICIENCY ** 3, rel_tol=1e-12)


def test_cross_star_kept_fraction():
    g = four_star()
    _, stats = run_networked_session(g, "a1", "b1", 100_000, seed=3)
    assert stats.n_detected == 100_000
    assert abs(stats.kept_fraction - 0.125) <= 0.005


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.data())
def test_no_links_beyond_star_and_mesh(t, data):
    trents = [f"T{i}" for i in range(t)]
    n_leaves = data.draw(st.integers(0, 10))
    homes = data.draw(st.lists(st.sampled_from(trents), min_size=n_leaves, max_size=n_leaves))
    leaves = {f"x{i}": h for i, h in enumerate(homes)}
    g = build_topology(trents, leaves)
    assert len(g.links) == n_leaves + mesh_link_count(t)
    for key in g.links:
        a, b = sorted(key)
        assert a in trents or b in trents
        if a in leaves or b in leaves:
            leaf = a if a in leaves else b
            assert (key - {leaf}) == {leaves[leaf]}
