"""Seeded simulator of BB84 key distribution through chains of trusted relays."""

from .adversary import AttackPolicy, BasisRule, exact_statistics
from .channel import ChannelSpec, transmission
from .core import Basis, RandomStream
from .postproc import BitKey
from .protocol import SessionConfig, relay_sift, run_session

__all__ = [
    "AttackPolicy",
    "BasisRule",
    "Basis",
    "BitKey",
    "ChannelSpec",
    "RandomStream",
    "SessionConfig",
    "exact_statistics",
    "relay_sift",
    "run_session",
    "transmission",
]

__version__ = "0.1.0"
