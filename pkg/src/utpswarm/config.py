"""Scenario definition and its INI-style text format.

Example::

    [scenario]
    name = desk-homog-tcp
    file_size = 10485760
    chunk_size = 262144
    rng_seeds = 1, 2, 3

    [seed]
    count = 1
    disposition = 31
    uplink_bps = 1000000

    [class tcp]
    count = 23
    disposition = 5
    uplink_bps = 1000000
    target_us = 100000

Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field
from typing import Optional

from .swarm.disposition import check_disposition
from .transport.tcp import Flavor


class ConfigError(ValueError):
    pass


@dataclass
class PeerClass:
    name: str
    count: int
    disposition: int
    uplink_bps: int = 1_000_000
    target_us: int = 100_000


@dataclass
class ScenarioConfig:
    name: str
    leechers: list[PeerClass]
    seed_count: int = 1
    seed_disposition: int = 31
    seed_uplink_bps: int = 1_000_000
    seed_target_us: int = 100_000
    file_size: int = 10 * 1024 * 1024
    chunk_size: int = 256 * 1024
    block_size: int = 16 * 1024
    buffer_seconds: float = 1.0
    base_owd_us: int = 1000
    pipeline_depth: int = 5
    upload_slots: int = 4
    rechoke_interval_s: float = 10.0
    optimistic_interval_s: float = 30.0
    rate_window_s: float = 20.0
    tcp_flavor: str = "NewReno"
    ledbat_gain: float = 1.0
    mss: int = 1448
    ledbat_init_segments: int = 2
    tcp_init_segments: int = 3
    min_rto_us: int = 200_000
    utp_connect_failure: float = 0.1
    rng_seeds: list[int] = field(default_factory=lambda: [1])
    stop: str = "all-complete"
    time_limit_s: float = 20_000.0

    def __post_init__(self) -> None:
        self.validate()

    @property
    def replications(self) -> int:
        return len(self.rng_seeds)

    @property
    def leecher_count(self) -> int:
        return sum(c.count for c in self.leechers)

    @property
    def peer_count(self) -> int:
        return self.seed_count + self.leecher_count

    @property
    def chunk_count(self) -> int:
        return -(-self.file_size // self.chunk_size)

    def validate(self) -> None:
        if self.seed_count < 1:
            raise ConfigError("at least one seed is required (content unobtainable otherwise)")
        if self.leecher_count < 1:
            raise ConfigError("at least one leecher is required")
        if not self.leechers:
            raise ConfigError("no leecher classes defined")
        names = [c.name for c in self.leechers]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate leecher class names: {names}")
        try:
            check_disposition(self.seed_disposition)
            for c in self.leechers:
                check_disposition(c.disposition)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for c in self.leechers:
            if c.count < 0:
                raise ConfigError(f"class {c.name}: negative count")
            if c.uplink_bps <= 0 or c.target_us <= 0:
                raise ConfigError(f"class {c.name}: uplink_bps and target_us must be positive")
        if self.buffer_seconds <= 0:
            raise ConfigError("buffer_seconds must be positive")
        if self.file_size <= 0 or self.chunk_size <= 0 or self.block_size <= 0:
            raise ConfigError("file_size, chunk_size and block_size must be positive")
        if self.chunk_size % self.block_size:
            raise ConfigError("chunk_size must be a multiple of block_size")
        if self.pipeline_depth < 1 or self.upload_slots < 1:
            raise ConfigError("pipeline_depth and upload_slots must be >= 1")
        if not 0.0 <= self.utp_connect_failure <= 1.0:
            raise ConfigError("utp_connect_failure must be a probability")
        if not 0 < self.mss <= 1448:
            raise ConfigError("mss must fit a 1500 B MTU packet (<= 1448)")
        if self.tcp_flavor not in {f.value for f in Flavor}:
            raise ConfigError(f"tcp_flavor must be one of {[f.value for f in Flavor]}")
        if not self.rng_seeds:
            raise ConfigError("rng_seeds must list at least one seed")
        if self.stop != "all-complete":
            raise ConfigError("only the 'all-complete' stop condition is supported")

    def with_seeds(self, seeds: list[int]) -> "ScenarioConfig":
        return dataclasses.replace(self, rng_seeds=list(seeds))

    def digest(self) -> str:
        """Hash of everything except the RNG seed list."""
        text = serialize(dataclasses.replace(self, rng_seeds=[0]))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


_SCENARIO_KEYS = {f.name: f for f in dataclasses.fields(ScenarioConfig)
                  if f.name not in {"leechers", "seed_count", "seed_disposition",
                                    "seed_uplink_bps", "seed_target_us"}}
_SEED_KEYS = {"count": "seed_count", "disposition": "seed_disposition",
              "uplink_bps": "seed_uplink_bps", "target_us": "seed_target_us"}
_CLASS_KEYS = {"count", "disposition", "uplink_bps", "target_us"}


def _convert(raw: str, typ, key: str):
    try:
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        if typ in ("list[int]",):
            return [int(x) for x in raw.replace(",", " ").split()]
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None


def parse(text: str) -> ScenarioConfig:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str  # keys are case-sensitive
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    if "scenario" not in cp:
        raise ConfigError("missing [scenario] section")
    kwargs: dict = {}
    leechers: list[PeerClass] = []
    for section in cp.sections():
        items = dict(cp.items(section))
        if section == "scenario":
            for key, raw in items.items():
                f = _SCENARIO_KEYS.get(key)
                if f is None:
                    raise ConfigError(f"unknown key {key!r} in [scenario]")
                kwargs[key] = _convert(raw, f.type, key)
        elif section == "seed":
            for key, raw in items.items():
                if key not in _SEED_KEYS:
                    raise ConfigError(f"unknown key {key!r} in [seed]")
                kwargs[_SEED_KEYS[key]] = int(_convert(raw, int, key))
        elif section.startswith("class "):
            name = section[len("class "):].strip()
            unknown = set(items) - _CLASS_KEYS
            if unknown:
                raise ConfigError(f"unknown key(s) {sorted(unknown)} in [{section}]")
            if "count" not in items or "disposition" not in items:
                raise ConfigError(f"[{section}] needs count and disposition")
            leechers.append(PeerClass(name=name, **{k: _convert(v, int, k)
                                                    for k, v in items.items()}))
        else:
            raise ConfigError(f"unknown section [{section}]")
    if "name" not in kwargs:
        raise ConfigError("[scenario] needs a name")
    return ScenarioConfig(leechers=leechers, **kwargs)


def _fmt(value) -> str:
    if isinstance(value, list):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize(config: ScenarioConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["scenario"] = {k: _fmt(getattr(config, k)) for k in _SCENARIO_KEYS}
    cp["seed"] = {k: _fmt(getattr(config, attr)) for k, attr in _SEED_KEYS.items()}
    for c in config.leechers:
        cp[f"class {c.name}"] = {"count": str(c.count), "disposition": str(c.disposition),
                                 "uplink_bps": str(c.uplink_bps), "target_us": str(c.target_us)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def load(path: str) -> ScenarioConfig:
    with open(path) as fh:
        return parse(fh.read())


def save(config: ScenarioConfig, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(serialize(config))


def per_peer_layout(config: ScenarioConfig) -> list[tuple[str, int, int, int]]:
    """(class name, disposition, uplink bps, target us) for every peer, seeds
    first.  Peer ids are list indices."""
    layout = [("seed", config.seed_disposition, config.seed_uplink_bps, config.seed_target_us)
              for _ in range(config.seed_count)]
    for c in config.leechers:
        layout.extend((c.name, c.disposition, c.uplink_bps, c.target_us) for _ in range(c.count))
    return layout


def find_class(config: ScenarioConfig, name: str) -> Optional[PeerClass]:
    for c in config.leechers:
        if c.name == name:
            return c
    return None
