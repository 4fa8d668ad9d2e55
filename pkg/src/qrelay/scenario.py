"""Declarative scenario files and the runner behind the command line.

A scenario is an INI file (``configparser`` dialect, ``#``/``;`` comments)::

    [scenario]
    name = fig2-attack-sweep
    claim = free text copied into the header of the stats file
    kind = session              # session | network | xor-chain
    figure = qber-by-attack     # optional, see qrelay.plotting.FIGURES

    [session]
    rounds = 400000             # required, positive
    seed = 1                    # required, 0 <= seed < 2**64
    relays = 1
    attack = none               # none | ch1 | ch2 | both-independent | both-reuse
                                # or legs:1+3[:reuse] for longer chains
    mode = trusted-relay        # trusted-relay | carol
    relay_detectors = true
    sample_fraction = 0.5
    safety_margin = 30
    ec = oracle                 # oracle | parity

    [channel]                   # default for every leg
    length_km = 0
    attenuation_db_per_km = 0.25
    intrinsic_qber = 0
    detector_efficiency = 1
    platform = fiber            # fiber | freespace

    [leg.2]                     # per-leg overrides, legs numbered from 1
    length_km = 50

    [sweep]                     # comma-separated values; product in file order
    attack = none, ch1, ch2

Network scenarios add ``[topology]`` (``trents = T1, T2``, ``leaves =
a:T1, b:T2``, ``pairs = a-b``) plus ``[access]`` and ``[mesh]`` channel
sections. XOR-chain scenarios add ``[xor]`` (``relays``, ``hash_seed``).

Every run gets its own seed, ``derive_seed(seed, run_index)``.
"""

from __future__ import annotations

import configparser
import csv
import itertools
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .adversary import NAMED_POLICIES, AttackPolicy, BasisRule, StatisticsReport, exact_statistics
from .channel import ChannelSpec
from .core import SEED_MAX, RandomStream, derive_seed
from .network import build_topology, link_budget, route, route_channels
from .plotting import FIGURES
from .postproc import DEFAULT_SAFETY_MARGIN, ECMode, distill, trent_residual_error
from .protocol import (
    Mode,
    SessionConfig,
    classify_rounds,
    measure_statistics,
    relay_sift,
    run_session,
)
from .xor_relay import establish_chain, run_xor_relay

KINDS = ("session", "network", "xor-chain")
SWEEP_AXES = {
    "session": ("attack", "relays", "length_km", "intrinsic_qber",
                "attenuation_db_per_km", "detector_efficiency"),
    "network": ("pair", "attack", "length_km", "intrinsic_qber"),
    "xor-chain": ("relays", "length_km", "intrinsic_qber"),
}
CHANNEL_FIELDS = ("length_km", "attenuation_db_per_km", "intrinsic_qber",
                  "detector_efficiency", "platform")

SESSION_COLUMNS = ["run", "label", "relays", "attack", "rounds", "kept_fraction",
                   "qber_ab", "qber_at", "trent_residual", "eve_information",
                   "transmission", "detected_fraction", "usable_fraction",
                   "final_key_length"]
XOR_COLUMNS = ["run", "label", "relays", "L", "final_key_length", "alice_bob_agree",
               "relays_agree"]


class ScenarioError(ValueError):
    """Unreadable or invalid scenario file."""


class ScenarioInvariantError(ScenarioError):
    """Fields parse, but a run they describe breaks a model invariant."""


@dataclass
class Scenario:
    name: str
    kind: str
    claim: str
    seed: int
    session: Dict[str, Any]
    channel: ChannelSpec
    legs: Dict[int, Dict[str, Any]]
    sweep: List[Tuple[str, List[Any]]]
    figure: Optional[str] = None
    topology: Dict[str, Any] = field(default_factory=dict)
    access: Optional[ChannelSpec] = None
    mesh: Optional[ChannelSpec] = None
    xor: Dict[str, Any] = field(default_factory=dict)
    source: Optional[Path] = None

    def points(self) -> List[Dict[str, Any]]:
        """Sweep points in file order; a scenario without sweep has one."""
        if not self.sweep:
            return [{}]
        names = [name for name, _ in self.sweep]
        return [dict(zip(names, combo))
                for combo in itertools.product(*(values for _, values in self.sweep))]


def _locate(text: str, section: str, key: Optional[str] = None) -> Optional[int]:
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        m = re.match(r"\[([^\]]+)\]", stripped)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return lineno
            continue
        if current == section and key is not None:
            if re.match(rf"{re.escape(key)}\s*[=:]", stripped):
                return lineno
    return None


class _Reader:
    def __init__(self, parser: configparser.ConfigParser, text: str, path: str):
        self.parser, self.text, self.path = parser, text, path

    def fail(self, section: str, key: Optional[str], message: str):
        line = _locate(self.text, section, key)
        where = f"{self.path}:{line}" if line else self.path
        field_name = f"[{section}] {key}" if key else f"[{section}]"
        raise ScenarioError(f"{where}: {field_name}: {message}")

    def has(self, section: str, key: str) -> bool:
        return self.parser.has_option(section, key)

    def raw(self, section: str, key: str, default=None, required=False) -> Optional[str]:
        if not self.parser.has_option(section, key):
            if required:
                self.fail(section, None, f"missing required field {key!r}")
            return default
        return self.parser.get(section, key).strip()

    def convert(self, section: str, key: str, value: str, kind):
        try:
            return kind(value)
        except (ValueError, TypeError) as exc:
            self.fail(section, key, str(exc) or f"invalid value {value!r}")

    def get(self, section: str, key: str, kind, default=None, required=False):
        value = self.raw(section, key, None, required)
        if value is None:
            return default
        return self.convert(section, key, value, kind)


def _positive_int(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise ValueError(f"expected a positive integer, got {text!r}")
    return value


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise ValueError(f"expected a nonnegative integer, got {text!r}")
    return value


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value <= SEED_MAX:
        raise ValueError(f"seed must be in [0, 2**64), got {text!r}")
    return value


def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _fraction(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise ValueError(f"expected a number in (0, 1), got {text!r}")
    return value


def parse_attack(text: str) -> AttackPolicy:
    text = text.strip()
    if text in NAMED_POLICIES:
        return NAMED_POLICIES[text]
    # '+' separates legs inside a sweep, where ',' separates values
    m = re.fullmatch(r"legs:([\d,+\s]+)(?::(independent|reuse))?", text)
    if not m:
        raise ValueError(
            f"unknown attack {text!r}; expected one of {', '.join(NAMED_POLICIES)} "
            "or legs:<i+j+...>[:independent|reuse]"
        )
    legs = frozenset(int(x) for x in re.split(r"[,+]", m.group(1)) if x.strip())
    return AttackPolicy(legs, BasisRule(m.group(2) or "independent"))


_FIELD_TYPES = {
    "length_km": float,
    "attenuation_db_per_km": float,
    "intrinsic_qber": float,
    "detector_efficiency": float,
    "platform": str,
    "attack": parse_attack,
    "relays": _nonneg_int,
    "pair": str,
}


def _channel_fields(reader: _Reader, section: str) -> Dict[str, Any]:
    fields = {}
    for key in reader.parser.options(section):
        if key not in CHANNEL_FIELDS:
            reader.fail(section, key, f"unknown channel field; expected one of {', '.join(CHANNEL_FIELDS)}")
        fields[key] = reader.get(section, key, _FIELD_TYPES[key])
        try:
            ChannelSpec(**{key: fields[key]})
        except ValueError as exc:
            reader.fail(section, key, str(exc))
    return fields


def _make_channel(reader: _Reader, section: str, fields: Dict[str, Any],
                  base: ChannelSpec = ChannelSpec()) -> ChannelSpec:
    try:
        return replace(base, **fields)
    except ValueError as exc:
        reader.fail(section, None, str(exc))


_KNOWN_SECTIONS = {"scenario", "session", "channel", "sweep", "topology", "access", "mesh", "xor"}
_SESSION_KEYS = {"rounds", "seed", "relays", "attack", "mode", "relay_detectors",
                 "sample_fraction", "safety_margin", "ec"}


def parse_scenario(text: str, path: str = "<scenario>") -> Scenario:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"),
                                       interpolation=None)
    try:
        parser.read_string(text, source=path)
    except configparser.Error as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    reader = _Reader(parser, text, path)

    for section in parser.sections():
        if section not in _KNOWN_SECTIONS and not re.fullmatch(r"leg\.\d+", section):
            reader.fail(section, None, "unknown section")
    for section in ("scenario", "session"):
        if not parser.has_section(section):
            raise ScenarioError(f"{path}: missing section [{section}]")

    name = reader.raw("scenario", "name", required=True)
    kind = reader.raw("scenario", "kind", "session")
    if kind not in KINDS:
        reader.fail("scenario", "kind", f"expected one of {', '.join(KINDS)}, got {kind!r}")
    claim = reader.raw("scenario", "claim", "")
    figure = reader.raw("scenario", "figure")
    if figure is not None and figure not in FIGURES:
        reader.fail("scenario", "figure", f"expected one of {', '.join(FIGURES)}, got {figure!r}")

    for key in parser.options("session"):
        if key not in _SESSION_KEYS:
            reader.fail("session", key, "unknown session field")
    session = {
        "rounds": reader.get("session", "rounds", _positive_int, required=True),
        "relays": reader.get("session", "relays", _nonneg_int, 1),
        "attack": reader.get("session", "attack", parse_attack, AttackPolicy()),
        "mode": reader.get("session", "mode", Mode, Mode.TRUSTED_RELAY),
        "relay_detectors": reader.get("session", "relay_detectors", _bool, True),
        "sample_fraction": reader.get("session", "sample_fraction", _fraction, 0.5),
        "safety_margin": reader.get("session", "safety_margin", _nonneg_int,
                                    DEFAULT_SAFETY_MARGIN),
        "ec": reader.get("session", "ec", ECMode, ECMode.ORACLE),
    }
    seed = reader.get("session", "seed", _seed, required=True)

    channel = ChannelSpec()
    if parser.has_section("channel"):
        channel = _make_channel(reader, "channel", _channel_fields(reader, "channel"))
    legs = {}
    for section in parser.sections():
        m = re.fullmatch(r"leg\.(\d+)", section)
        if m:
            index = int(m.group(1))
            if index < 1:
                reader.fail(section, None, "legs are numbered from 1")
            fields = _channel_fields(reader, section)
            _make_channel(reader, section, fields, channel)
            legs[index] = fields

    sweep = []
    if parser.has_section("sweep"):
        for key in parser.options("sweep"):
            if key not in SWEEP_AXES[kind]:
                reader.fail("sweep", key,
                            f"not a sweepable parameter for {kind} scenarios; "
                            f"expected one of {', '.join(SWEEP_AXES[kind])}")
            items = [v.strip() for v in reader.raw("sweep", key).split(",") if v.strip()]
            if not items:
                reader.fail("sweep", key, "empty sweep axis")
            sweep.append((key, [reader.convert("sweep", key, v, _FIELD_TYPES[key])
                                for v in items]))

    scenario = Scenario(name=name, kind=kind, claim=claim, seed=seed, session=session,
                        channel=channel, legs=legs, sweep=sweep, figure=figure,
                        source=Path(path))

    if kind == "network":
        if not parser.has_section("topology"):
            raise ScenarioError(f"{path}: network scenarios need a [topology] section")
        trents = [t.strip() for t in reader.raw("topology", "trents", required=True).split(",")]
        leaves = {}
        for item in reader.raw("topology", "leaves", required=True).split(","):
            if ":" not in item:
                reader.fail("topology", "leaves", f"expected leaf:trent, got {item.strip()!r}")
            leaf, home = (s.strip() for s in item.split(":", 1))
            leaves[leaf] = home
        pairs = [p.strip() for p in reader.raw("topology", "pairs", required=True).split(",")]
        scenario.topology = {"trents": trents, "leaves": leaves, "pairs": pairs}
        for section, attr in (("access", "access"), ("mesh", "mesh")):
            spec = channel
            if parser.has_section(section):
                spec = _make_channel(reader, section, _channel_fields(reader, section), channel)
            setattr(scenario, attr, spec)
        try:
            graph = build_topology(trents, leaves, access=scenario.access, mesh=scenario.mesh)
        except ValueError as exc:
            reader.fail("topology", None, str(exc))
        for pair in pairs + [v for k, vals in sweep if k == "pair" for v in vals]:
            if pair.count("-") != 1:
                reader.fail("topology", "pairs", f"expected leafA-leafB, got {pair!r}")
            a, b = pair.split("-")
            try:
                route(graph, a.strip(), b.strip())
            except ValueError as exc:
                reader.fail("topology", "pairs", str(exc))
        if not any(k == "pair" for k, _ in sweep):
            scenario.sweep.insert(0, ("pair", pairs))

    if kind == "xor-chain":
        scenario.xor = {
            "relays": reader.get("xor", "relays", _positive_int, 1),
            "hash_seed": reader.get("xor", "hash_seed", _seed, 0),
        } if parser.has_section("xor") else {"relays": 1, "hash_seed": 0}

    # build every run up front so invalid combinations fail before any output
    for point in scenario.points():
        try:
            _validate_point(scenario, point)
        except ValueError as exc:
            raise ScenarioInvariantError(f"{path}: run {_label(point)}: {exc}") from None
    return scenario


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc.strerror}") from None
    return parse_scenario(text, str(path))


def _apply_channel_point(scenario: Scenario, point: Dict[str, Any], spec: ChannelSpec) -> ChannelSpec:
    fields = {k: v for k, v in point.items() if k in CHANNEL_FIELDS}
    return replace(spec, **fields) if fields else spec


def _leg_channels(scenario: Scenario, point: Dict[str, Any], relays: int) -> Tuple[ChannelSpec, ...]:
    legs = []
    for leg in range(1, relays + 2):
        spec = _apply_channel_point(scenario, point, scenario.channel)
        if leg in scenario.legs:
            spec = replace(spec, **scenario.legs[leg])
        legs.append(spec)
    return tuple(legs)


def session_config(scenario: Scenario, point: Dict[str, Any], seed: int) -> SessionConfig:
    relays = point.get("relays", scenario.session["relays"])
    extra = [leg for leg in scenario.legs if leg > relays + 1]
    if extra:
        raise ValueError(f"[leg.{extra[0]}] does not exist in a {relays}-relay chain")
    return SessionConfig(
        n_rounds=scenario.session["rounds"],
        relay_count=relays,
        channels=_leg_channels(scenario, point, relays),
        attack=point.get("attack", scenario.session["attack"]),
        seed=seed,
        mode=scenario.session["mode"],
        relay_detectors=scenario.session["relay_detectors"],
    )


def _network_graph(scenario: Scenario, point: Dict[str, Any]):
    topo = scenario.topology
    return build_topology(topo["trents"], topo["leaves"],
                          access=_apply_channel_point(scenario, point, scenario.access),
                          mesh=_apply_channel_point(scenario, point, scenario.mesh))


def _validate_point(scenario: Scenario, point: Dict[str, Any]) -> None:
    if scenario.kind == "session":
        session_config(scenario, point, 0)
    elif scenario.kind == "network":
        _network_graph(scenario, point)
    else:
        relays = point.get("relays", scenario.xor["relays"])
        if relays < 1:
            raise ValueError("an XOR chain needs at least one relay")
        _leg_channels(scenario, point, relays)


def _label(point: Dict[str, Any]) -> str:
    parts = []
    for key, value in point.items():
        if isinstance(value, AttackPolicy):
            value = value.name
        parts.append(f"{key}={value}")
    return ";".join(parts) or "base"


def _expected_transmission(config: SessionConfig) -> float:
    t = 1.0
    for i, spec in enumerate(config.channels):
        t *= spec.transmission
        if i == len(config.channels) - 1 or config.relay_detectors:
            t *= spec.detector_efficiency
    return t


@dataclass
class RunResult:
    row: Dict[str, Any]
    transcript: Any = None
    announcements: Any = None
    report: Optional[StatisticsReport] = None


def _session_row(scenario: Scenario, index: int, point, config: SessionConfig,
                 transmission_value: float) -> RunResult:
    transcript, stats = run_session(config)
    report = measure_statistics(transcript)
    keys = relay_sift(transcript)
    residual = (trent_residual_error(keys.alice, keys.relays[0], keys.bob)
                if keys.relays and len(keys) else math.nan)
    usable = math.nan
    if config.mode is Mode.MULTI_PARTY_CAROL:
        usable = classify_rounds(transcript).usable_fraction
    final_len = 0
    if len(keys) >= 2:
        result = distill(keys.alice, keys.bob, RandomStream(config.seed).spawn(101),
                         sample_fraction=scenario.session["sample_fraction"],
                         safety_margin=scenario.session["safety_margin"],
                         ec_mode=scenario.session["ec"],
                         pa_seed=derive_seed(config.seed, 102))
        final_len = result.final_length
    row = {
        "run": index,
        "label": _label(point),
        "relays": config.relay_count,
        "attack": config.attack.name,
        "rounds": config.n_rounds,
        "kept_fraction": stats.kept_fraction,
        "qber_ab": report.bob_qber,
        "qber_at": report.trent_qber,
        "trent_residual": residual,
        "eve_information": report.eve_information,
        "transmission": transmission_value,
        "detected_fraction": stats.detected_fraction,
        "usable_fraction": usable,
        "final_key_length": final_len,
    }
    return RunResult(row, transcript, report=report)


def execute_point(scenario: Scenario, index: int, point: Dict[str, Any],
                  base_seed: int) -> RunResult:
    seed = derive_seed(base_seed, index)
    if scenario.kind == "session":
        config = session_config(scenario, point, seed)
        return _session_row(scenario, index, point, config, _expected_transmission(config))
    if scenario.kind == "network":
        graph = _network_graph(scenario, point)
        a, b = (s.strip() for s in point["pair"].split("-"))
        r = route(graph, a, b)
        config = SessionConfig(
            n_rounds=scenario.session["rounds"], relay_count=r.relay_count,
            channels=route_channels(graph, r),
            attack=point.get("attack", scenario.session["attack"]), seed=seed,
            relay_detectors=scenario.session["relay_detectors"],
        )
        budget = link_budget(graph, r, relay_detectors=scenario.session["relay_detectors"])
        return _session_row(scenario, index, point, config, budget.transmission)

    relays = point.get("relays", scenario.xor["relays"])
    chain = establish_chain(_leg_channels(scenario, point, relays), scenario.session["rounds"],
                            seed, sample_fraction=scenario.session["sample_fraction"],
                            safety_margin=scenario.session["safety_margin"],
                            ec_mode=scenario.session["ec"])
    result = run_xor_relay(chain, scenario.xor["hash_seed"], scenario.session["safety_margin"])
    row = {
        "run": index,
        "label": _label(point),
        "relays": relays,
        "L": result.L,
        "final_key_length": len(result.alice),
        "alice_bob_agree": int(result.alice.same_bits(result.bob)),
        "relays_agree": int(all(k.same_bits(result.alice) for k in result.relays)),
    }
    return RunResult(row, announcements=result.announcements)


def columns_for(scenario: Scenario) -> List[str]:
    return XOR_COLUMNS if scenario.kind == "xor-chain" else SESSION_COLUMNS


def format_value(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return f"{value:.6g}"
    return str(value)


def write_stats(fh, scenario: Scenario, rows: Sequence[Dict[str, Any]], seed: int) -> None:
    fh.write(f"# scenario: {scenario.name}\n")
    if scenario.claim:
        fh.write(f"# reproduces: {scenario.claim}\n")
    fh.write(f"# seed: {seed}\n")
    writer = csv.writer(fh, lineterminator="\n")
    cols = columns_for(scenario)
    writer.writerow(cols)
    for row in rows:
        writer.writerow([format_value(row[c]) for c in cols])


def read_stats(path) -> List[Dict[str, str]]:
    with open(path) as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))


# ---------------------------------------------------------------------------
# oracle check


@dataclass(frozen=True)
class OracleRow:
    run: int
    label: str
    statistic: str
    observed: float
    expected: float
    n: int

    @property
    def z(self) -> float:
        p = self.expected
        sigma = math.sqrt(p * (1 - p) / self.n) if self.n else 0.0
        if sigma == 0.0:
            return 0.0 if self.observed == p else math.inf
        return (self.observed - p) / sigma


@dataclass
class OracleReport:
    rows: List[OracleRow]
    threshold: float = 4.0

    @property
    def passed(self) -> bool:
        return all(abs(r.z) <= self.threshold for r in self.rows)

    def lines(self) -> List[str]:
        out = ["run,label,statistic,observed,expected,n,z,status"]
        for r in self.rows:
            status = "ok" if abs(r.z) <= self.threshold else "FAIL"
            out.append(",".join([str(r.run), r.label, r.statistic, format_value(r.observed),
                                 format_value(r.expected), str(r.n), format_value(float(r.z)),
                                 status]))
        return out


def oracle_check(scenario: Scenario, seed: Optional[int] = None, *,
                 exact=exact_statistics, threshold: float = 4.0) -> OracleReport:
    """Compare every run's Monte Carlo statistics with the exact enumeration.

    ``exact`` is injectable so the harness itself can be tested against a
    deliberately wrong oracle.
    """
    if scenario.kind != "session":
        raise ScenarioError("oracle-check supports single-chain session scenarios only")
    base = scenario.seed if seed is None else seed
    rows = []
    for index, point in enumerate(scenario.points()):
        config = session_config(scenario, point, derive_seed(base, index))
        if config.relay_count != 1:
            raise ScenarioError("oracle-check needs one-relay runs")
        transcript, _ = run_session(config)
        observed = measure_statistics(transcript)
        d1, d2 = (leg.intrinsic_qber for leg in config.channels)
        expected = exact(config.attack, d1, d2)
        for name in StatisticsReport.FIELDS:
            rows.append(OracleRow(index, _label(point), name, float(getattr(observed, name)),
                                  float(getattr(expected, name)), observed.n))
    return OracleReport(rows, threshold)
