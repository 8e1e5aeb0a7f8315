"""Scenario configuration: pydantic schema, JSON loading, bundled presets, environment.

A scenario file is UTF-8 JSON with the sections ``topology``, ``propagation``,
``delays``, ``channel``, ``handoff``, ``mobility``, ``traffic`` and ``seed``. Every
section is optional except ``topology``; omitted values take the defaults below and
are echoed back into each run report. Unknown keys are rejected.

Environment variables (read fresh on every call, so tests and servers can flip them):
    HANDOFF_SIM_LOG_LEVEL  default "WARNING". Root log level used by the CLI.
    HANDOFF_SIM_DB         path of the run-history SQLite file. Default
                           $XDG_CONFIG_HOME/dual-radio-handoff/runs.sqlite3.
    HANDOFF_SIM_MAX_RUNS   default "50". Largest batch the MCP tool will accept.
"""

from __future__ import annotations

import json
import os
from collections import deque
from importlib import resources
from ipaddress import IPv4Address
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

DEFAULT_MAX_RUNS = 50
PRESETS = ("fig1", "fig1_outdoor")


class ConfigError(ValueError):
    """Raised when a scenario config cannot be parsed or fails validation."""

    def __init__(self, message: str, field: str | None = None) -> None:
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# --- topology ----------------------------------------------------------------

class ApConfig(_Section):
    id: str
    role: Literal["edge", "core"]
    position: tuple[float, float]
    hostname: str | None = None
    channel: int = Field(default=1, ge=1)
    path_capacity_kbps: int = Field(default=10_000, ge=0)
    ip: IPv4Address | None = None
    mac: str | None = None

    @property
    def name(self) -> str:
        return self.hostname or self.id.lower()


class GatewayConfig(_Section):
    id: str = "G"
    ip: IPv4Address = IPv4Address("10.0.0.1")


class MobileConfig(_Section):
    id: str = "MN"
    vip: IPv4Address = IPv4Address("172.16.0.10")
    radio_ips: tuple[IPv4Address, IPv4Address] = (
        IPv4Address("192.168.77.2"),
        IPv4Address("192.168.77.3"),
    )
    radio_macs: tuple[str, str] = ("02:00:00:00:77:01", "02:00:00:00:77:02")


class TopologyConfig(_Section):
    aps: list[ApConfig]
    gateway: GatewayConfig
    links: list[tuple[str, str]] = Field(default_factory=list)
    mobile: MobileConfig = MobileConfig()

    @model_validator(mode="after")
    def _check_graph(self) -> TopologyConfig:
        ids = [ap.id for ap in self.aps] + [self.gateway.id]
        seen: set[str] = set()
        for node_id in ids:
            if node_id in seen:
                raise ValueError(f"duplicate node id '{node_id}' (topology.aps.id)")
            seen.add(node_id)
        names = [ap.name for ap in self.aps]
        if len(set(names)) != len(names):
            raise ValueError("duplicate AP hostname (topology.aps.hostname)")
        if not any(ap.role == "edge" for ap in self.aps):
            raise ValueError("at least one edge AP is required (topology.aps)")
        for a, b in self.links:
            for end in (a, b):
                if end not in seen:
                    raise ValueError(f"link endpoint '{end}' is not a known node (topology.links)")
        hops = backhaul_hops(self.links, self.gateway.id)
        for ap in self.aps:
            if ap.role == "edge" and ap.id not in hops:
                raise ValueError(
                    f"edge AP '{ap.id}' has no backhaul path to the gateway (topology.links)"
                )
        return self

    def edge_aps(self) -> list[ApConfig]:
        return [ap for ap in self.aps if ap.role == "edge"]


def backhaul_hops(links: list[tuple[str, str]], gateway_id: str) -> dict[str, int]:
    """Hop count from every node that can reach ``gateway_id`` over the backhaul links."""
    adjacency: dict[str, list[str]] = {}
    for a, b in links:
        adjacency.setdefault(a, []).append(b)
        adjacency.setdefault(b, []).append(a)
    hops = {gateway_id: 0}
    queue = deque([gateway_id])
    while queue:
        node = queue.popleft()
        for peer in adjacency.get(node, ()):
            if peer not in hops:
                hops[peer] = hops[node] + 1
                queue.append(peer)
    return hops


# --- radio / timing ------------------------------------------------------------

class PropagationParams(_Section):
    tx_power_dbm: float = 20.0
    ref_loss_db: float = 40.0
    path_loss_exponent: float = Field(default=3.0, ge=2.0)
    noise_floor_dbm: float = -95.0
    shadowing_sigma_db: float = Field(default=0.0, ge=0.0)
    rx_sensitivity_dbm: float = -90.0

    @model_validator(mode="after")
    def _check_sensitivity(self) -> PropagationParams:
        if self.rx_sensitivity_dbm >= self.tx_power_dbm - self.ref_loss_db:
            raise ValueError(
                "rx_sensitivity_dbm must be below tx_power_dbm - ref_loss_db "
                "(propagation.rx_sensitivity_dbm)"
            )
        return self


class DelayConfig(_Section):
    """All values in milliseconds."""

    mn_ap_hop: float = Field(default=2.0, ge=0)
    backhaul_hop: float = Field(default=3.0, ge=0)
    agent_processing: float = Field(default=2.5, ge=0)
    association: float = Field(default=15.0, ge=0)
    channel_switch: float = Field(default=5.0, ge=0)
    dissociation: float = Field(default=3.0, ge=0)
    arp_query: float = Field(default=5.0, ge=0)
    data_air_hop: float = Field(default=1.0, ge=0)
    data_backhaul_hop: float = Field(default=1.0, ge=0)


class ChannelConfig(_Section):
    p_bcast: float = Field(default=0.0, ge=0, le=1)
    p_unicast: float = Field(default=0.0, ge=0, le=1)
    p_data: float = Field(default=0.0, ge=0, le=1)


class HandoffConfig(_Section):
    lq_threshold_dbm: float = -75.0
    lq_margin_db: float = Field(default=5.0, ge=0)
    ewma_alpha: float = Field(default=0.5, gt=0, le=1)
    history_depth: int = Field(default=5, ge=1)
    history_max_age_ms: float = Field(default=1000.0, gt=0)
    requested_bandwidth_kbps: int = Field(default=2000, ge=0)
    request_retry_timeout_ms: float = Field(default=25.0, gt=0)
    max_retries: int = Field(default=5, ge=0)
    switch_ok_timeout_ms: float = Field(default=100.0, gt=0)
    commitment_timeout_ms: float = Field(default=2000.0, gt=0)
    abandon_holddown_ms: float = Field(default=1000.0, ge=0)
    scan_channels: list[int] = Field(default_factory=lambda: list(range(1, 12)), min_length=1)
    scan_dwell_ms: float = Field(default=10.0, gt=0)
    supervision_interval_ms: float = Field(default=100.0, gt=0)
    baseline_holddown_ms: float = Field(default=1000.0, ge=0)


class MobilityConfig(_Section):
    speed_kmph: float = Field(default=40.0, ge=0)
    waypoints: list[tuple[float, float]] = Field(
        default_factory=lambda: [(30.0, 0.0), (570.0, 0.0), (30.0, 0.0), (570.0, 0.0), (30.0, 0.0)],
        min_length=1,
    )


class TrafficConfig(_Section):
    packet_count: int = Field(default=10_000, ge=0)
    interval_ms: float = Field(default=10.0, gt=0)
    reply_timeout_ms: float = Field(default=500.0, gt=0)
    payload_tag: str = "echo"


class ScenarioConfig(_Section):
    name: str = "custom"
    seed: int = Field(default=0, ge=0, lt=2**64)
    topology: TopologyConfig
    propagation: PropagationParams = PropagationParams()
    delays: DelayConfig = DelayConfig()
    channel: ChannelConfig = ChannelConfig()
    handoff: HandoffConfig = HandoffConfig()
    mobility: MobilityConfig = MobilityConfig()
    traffic: TrafficConfig = TrafficConfig()

    def config_echo(self) -> dict[str, Any]:
        """Fully-defaulted, JSON-ready copy of the config (goes into every run report)."""
        return self.model_dump(mode="json")

    def with_overrides(self, **sections: dict[str, Any]) -> ScenarioConfig:
        """Return a validated copy with per-section field overrides.

        ``cfg.with_overrides(channel={"p_bcast": 0.3}, seed=4)`` style; a non-dict value
        replaces a top-level field.
        """
        data = self.model_dump()
        for key, value in sections.items():
            if isinstance(value, dict) and isinstance(data.get(key), dict):
                data[key] = {**data[key], **value}
            else:
                data[key] = value
        return _validate(data)


# --- loading -------------------------------------------------------------------

def _validate(data: Any) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as e:
        err = e.errors()[0]
        field = ".".join(str(p) for p in err["loc"]) or None
        raise ConfigError(err["msg"], field=field) from None


def load_topology(text: str) -> ScenarioConfig:
    """Parse and validate a scenario config from JSON text."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError("top level must be a JSON object")
    return _validate(data)


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}' (available: {', '.join(PRESETS)})")
    return resources.files("dual_radio_handoff").joinpath("data", f"{name}.json").read_text(
        encoding="utf-8"
    )


def load_config(source: str | Path = "fig1") -> ScenarioConfig:
    """Load a bundled preset by name, or a scenario file by path."""
    if isinstance(source, str) and source in PRESETS:
        return load_topology(preset_text(source))
    path = Path(source).expanduser()
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"could not read config file '{path}': {e.strerror or e}") from None
    return load_topology(text)


# --- environment ---------------------------------------------------------------

def _default_db_file() -> Path:
    base = os.environ.get("XDG_CONFIG_HOME") or str(Path.home() / ".config")
    return Path(base) / "dual-radio-handoff" / "runs.sqlite3"


def settings() -> dict[str, Any]:
    """Snapshot of the environment-driven settings."""
    db = os.environ.get("HANDOFF_SIM_DB")
    try:
        max_runs = int(os.environ.get("HANDOFF_SIM_MAX_RUNS", str(DEFAULT_MAX_RUNS)))
    except ValueError:
        max_runs = DEFAULT_MAX_RUNS
    return {
        "log_level": os.environ.get("HANDOFF_SIM_LOG_LEVEL", "WARNING").strip().upper(),
        "db_file": str(Path(db).expanduser()) if db else str(_default_db_file()),
        "max_runs": max(1, max_runs),
    }
