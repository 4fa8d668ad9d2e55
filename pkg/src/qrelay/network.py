"""Star-of-stars networks: endpoints hang off one Trent each, Trents form a full mesh."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Dict, FrozenSet, Mapping, Optional, Sequence, Tuple

from .adversary import AttackPolicy
from .channel import ChannelSpec
from .protocol import SessionConfig, run_session


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class TopologyGraph:
    trents: Tuple[str, ...]
    home: Mapping[str, str]
    links: Mapping[FrozenSet[str], ChannelSpec]

    @property
    def leaves(self) -> Tuple[str, ...]:
        return tuple(self.home)

    def link(self, a: str, b: str) -> ChannelSpec:
        try:
            return self.links[frozenset((a, b))]
        except KeyError:
            raise TopologyError(f"no link between {a!r} and {b!r}") from None

    @property
    def mesh_links(self):
        trents = set(self.trents)
        return [k for k in self.links if k <= trents]

    @property
    def star_links(self):
        trents = set(self.trents)
        return [k for k in self.links if not k <= trents]


def mesh_link_count(n_trents: int) -> int:
    return n_trents * (n_trents - 1) // 2


def build_topology(trents: Sequence[str], leaves: Mapping[str, str], *,
                   access: ChannelSpec = ChannelSpec(),
                   mesh: ChannelSpec = ChannelSpec(),
                   overrides: Optional[Mapping[Tuple[str, str], ChannelSpec]] = None
                   ) -> TopologyGraph:
    """Star around every Trent, full mesh between Trents.

    ``leaves`` maps each endpoint to its home Trent. ``access`` and ``mesh``
    are the default channels of star and Trent-Trent links; ``overrides``
    replaces individual links, keyed by node pair.
    """
    trents = tuple(trents)
    if not trents:
        raise TopologyError("a network needs at least one Trent")
    names = list(trents) + list(leaves)
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise TopologyError(f"duplicate node names: {', '.join(dupes)}")
    for leaf, home in leaves.items():
        if home not in trents:
            raise TopologyError(f"leaf {leaf!r} names unknown home Trent {home!r}")

    links: Dict[FrozenSet[str], ChannelSpec] = {}
    for leaf, home in leaves.items():
        links[frozenset((leaf, home))] = access
    for t1, t2 in itertools.combinations(trents, 2):
        links[frozenset((t1, t2))] = mesh
    for (a, b), spec in (overrides or {}).items():
        key = frozenset((a, b))
        if key not in links:
            raise TopologyError(f"override for {a!r}-{b!r}, which is not a link")
        links[key] = spec
    return TopologyGraph(trents, dict(leaves), links)


@dataclass(frozen=True)
class Route:
    nodes: Tuple[str, ...]

    @property
    def relay_count(self) -> int:
        return len(self.nodes) - 2

    @property
    def hops(self):
        return list(zip(self.nodes, self.nodes[1:]))

    def reversed(self) -> "Route":
        return Route(self.nodes[::-1])


def route(graph: TopologyGraph, leaf_a: str, leaf_b: str) -> Route:
    for leaf in (leaf_a, leaf_b):
        if leaf not in graph.home:
            raise TopologyError(f"unknown leaf {leaf!r}")
    if leaf_a == leaf_b:
        raise TopologyError("a route needs two distinct leaves")
    ta, tb = graph.home[leaf_a], graph.home[leaf_b]
    if ta == tb:
        return Route((leaf_a, ta, leaf_b))
    return Route((leaf_a, ta, tb, leaf_b))


def route_channels(graph: TopologyGraph, r: Route) -> Tuple[ChannelSpec, ...]:
    return tuple(graph.link(a, b) for a, b in r.hops)


@dataclass(frozen=True)
class LinkBudget:
    transmission: float
    sift_fraction: float

    @property
    def rate_per_qubit(self) -> float:
        """Expected sifted bits per qubit Alice sends, before EC and PA."""
        return self.transmission * self.sift_fraction


def link_budget(graph: TopologyGraph, r: Route, *, detectors: bool = True,
                relay_detectors: bool = True) -> LinkBudget:
    legs = route_channels(graph, r)
    t = 1.0
    for i, spec in enumerate(legs):
        t *= spec.transmission
        is_last = i == len(legs) - 1
        if detectors and (is_last or relay_detectors):
            t *= spec.detector_efficiency
    return LinkBudget(t, 2.0 ** -(r.relay_count + 1))


def run_networked_session(graph: TopologyGraph, leaf_a: str, leaf_b: str, n_rounds: int,
                          seed: int, *, attack: AttackPolicy = AttackPolicy(),
                          relay_detectors: bool = True):
    r = route(graph, leaf_a, leaf_b)
    config = SessionConfig(
        n_rounds=n_rounds,
        relay_count=r.relay_count,
        channels=route_channels(graph, r),
        attack=attack,
        seed=seed,
        relay_detectors=relay_detectors,
    )
    return run_session(config)
