"""Classical key relaying over a chain of QKD links by publishing XORs.

Node 0 is Alice, node N+1 is Bob. Key ``i`` (0-based) is shared by nodes
``i`` and ``i+1``. After truncation to a common length L each relay
publishes the XOR of its two keys; the ends walk the chain to recover each
other's key, concatenate everything and hash away the N*L published bits.

Truncation keeps the trailing L bits of every key.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .channel import ChannelSpec
from .core import RandomStream, derive_seed
from .postproc import (
    DEFAULT_SAFETY_MARGIN,
    BitKey,
    ECMode,
    Stage,
    distill,
    privacy_amplify,
)
from .protocol import SessionConfig, relay_sift, run_session


class ChainError(RuntimeError):
    pass


@dataclass
class ChainKeys:
    keys: List[BitKey]

    def __post_init__(self):
        if len(self.keys) < 2:
            raise ValueError("a relay chain has at least two keys (one relay)")

    @property
    def relay_count(self) -> int:
        return len(self.keys) - 1

    @property
    def L(self) -> int:
        return min(len(k) for k in self.keys)

    @property
    def truncated(self) -> bool:
        return all(len(k) == self.L for k in self.keys)


def truncate_chain(keys: Sequence[BitKey]) -> ChainKeys:
    """Cut every key down to the shortest, dropping leading (high-order) bits."""
    L = min(len(k) for k in keys)
    return ChainKeys([k.advance(k.bits[len(k) - L:], k.stage) for k in keys])


def establish_chain(legs: Sequence[ChannelSpec], n_rounds: int, seed: int, *,
                    sample_fraction: float = 0.5,
                    safety_margin: int = DEFAULT_SAFETY_MARGIN,
                    ec_mode: ECMode = ECMode.ORACLE) -> ChainKeys:
    """Run one point-to-point BB84 session per leg and truncate the keys."""
    if len(legs) < 2:
        raise ValueError("need at least two legs (one relay)")
    keys = []
    for k, spec in enumerate(legs):
        leg_seed = derive_seed(seed, k)
        transcript, _ = run_session(SessionConfig.uniform(n_rounds, 0, spec, seed=leg_seed))
        sifted = relay_sift(transcript)
        if len(sifted) == 0:
            raise ChainError(f"leg {k} sifted no bits")
        result = distill(sifted.alice, sifted.bob, RandomStream(leg_seed).spawn(1),
                         sample_fraction=sample_fraction, safety_margin=safety_margin,
                         ec_mode=ec_mode, pa_seed=derive_seed(leg_seed, 2))
        if result.alice is None:
            raise ChainError(f"leg {k} produced an empty key (qber {result.qber:.3f})")
        if not result.alice.same_bits(result.bob):
            raise ChainError(f"leg {k} ends disagree after reconciliation")
        keys.append(BitKey(result.alice.bits, Stage.FINAL, f"leg{k}"))
    return truncate_chain(keys)


def _xor(a: BitKey, b: BitKey, owner: str = "") -> BitKey:
    if len(a) != len(b):
        raise ValueError(f"key length mismatch: {len(a)} vs {len(b)}")
    return BitKey(a.bits ^ b.bits, a.stage, owner)


def announce_xors(chain: ChainKeys) -> List[BitKey]:
    """What each relay publishes, in chain order from Alice's side."""
    if not chain.truncated:
        raise ValueError("truncate the chain before announcing")
    return [_xor(chain.keys[i], chain.keys[i + 1], f"relay{i + 1}")
            for i in range(chain.relay_count)]


def recover_keys(own_key: BitKey, announcements: Sequence[BitKey],
                 direction: str = "alice") -> List[BitKey]:
    """Walk the chain from one end.

    ``announcements`` are given in the order the end meets them: nearest
    relay first. The result is always in chain order, Alice's key first.
    """
    if direction not in ("alice", "bob"):
        raise ValueError(f"direction must be 'alice' or 'bob', got {direction!r}")
    keys = [own_key]
    for ann in announcements:
        keys.append(_xor(keys[-1], ann))
    return keys if direction == "alice" else keys[::-1]


def relay_reconstruct(relay: int, left: BitKey, right: BitKey,
                      announcements: Sequence[BitKey]) -> List[BitKey]:
    """Every chain key as seen by relay ``relay`` (1-based) from its two keys
    and the public announcements (chain order)."""
    n = len(announcements)
    if not 1 <= relay <= n:
        raise ValueError(f"relay index must be in 1..{n}, got {relay}")
    towards_alice = recover_keys(left, announcements[:relay - 1][::-1], "bob")
    towards_bob = recover_keys(right, announcements[relay:], "alice")
    return towards_alice + towards_bob


def finalize(keys: Sequence[BitKey], relay_count: int, seed: int,
             safety_margin: int = DEFAULT_SAFETY_MARGIN) -> BitKey:
    """Concatenate the N+1 recovered keys and remove the N*L announced bits."""
    if len(keys) != relay_count + 1:
        raise ValueError(f"expected {relay_count + 1} keys, got {len(keys)}")
    L = len(keys[0])
    if any(len(k) != L for k in keys):
        raise ValueError("recovered keys differ in length")
    joined = BitKey(np.concatenate([k.bits for k in keys]), Stage.CORRECTED)
    return privacy_amplify(joined, relay_count * L, safety_margin, seed)


@dataclass
class XorRelayResult:
    chain: ChainKeys
    announcements: List[BitKey]
    alice: BitKey
    bob: BitKey
    relays: List[BitKey]

    @property
    def L(self) -> int:
        return self.chain.L


def run_xor_relay(chain: ChainKeys, hash_seed: int,
                  safety_margin: int = DEFAULT_SAFETY_MARGIN) -> XorRelayResult:
    """Steps 2 to 4 for every party on an established chain."""
    n = chain.relay_count
    anns = announce_xors(chain)
    alice_view = recover_keys(chain.keys[0], anns, "alice")
    bob_view = recover_keys(chain.keys[-1], anns[::-1], "bob")
    alice = finalize(alice_view, n, hash_seed, safety_margin)
    bob = finalize(bob_view, n, hash_seed, safety_margin)
    relays = [
        finalize(relay_reconstruct(r, chain.keys[r - 1], chain.keys[r], anns), n,
                 hash_seed, safety_margin)
        for r in range(1, n + 1)
    ]
    return XorRelayResult(chain, anns, alice, bob, relays)
