"""Scenario driver: mobility, echo traffic and full simulation runs.

``run_scenario`` builds a fresh engine and network per run, attaches the MN to the
strongest AP, then drives echo traffic while the chosen scheme (``dual`` or
``baseline``) handles handoffs. After the last reply deadline the handoff agent is
stopped and the engine drains long enough for every bandwidth commitment to settle.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .agents import ApAgent, GatewayAgent, MobileAgent, gateway_route_mismatch
from .baseline import SingleRadioAgent
from .config import ConfigError, MobilityConfig, ScenarioConfig, TrafficConfig
from .messages import decode_fields, parse_trace_line
from .metrics import PacketRecord, RunReport, loss_reasons, loss_stats
from .net_model import DataPacket, DataPlane, Direction, Network, Node, Position
from .sim_engine import SECOND, Engine, EventKind, RandomStreams, SimTime, ms

logger = logging.getLogger(__name__)

SCHEMES = ("dual", "baseline")


# --- mobility ------------------------------------------------------------------

class MobilityPath:
    """Piecewise-linear path at constant speed; clamps at the last waypoint."""

    def __init__(self, waypoints: Sequence[tuple[float, float]], speed_kmph: float) -> None:
        if not waypoints:
            raise ConfigError("mobility path needs at least one waypoint", field="mobility.waypoints")
        self.waypoints = [tuple(map(float, w)) for w in waypoints]
        self.speed_mps = speed_kmph * 1000.0 / 3600.0
        self._cumulative = [0.0]
        for a, b in zip(self.waypoints, self.waypoints[1:]):
            self._cumulative.append(self._cumulative[-1] + math.dist(a, b))

    @classmethod
    def from_config(cls, cfg: MobilityConfig) -> MobilityPath:
        return cls(cfg.waypoints, cfg.speed_kmph)

    @property
    def length(self) -> float:
        return self._cumulative[-1]

    def position_at(self, t: SimTime) -> Position:
        if t < 0:
            raise ValueError("t must be >= 0")
        travelled = self.speed_mps * t / SECOND
        if travelled >= self.length:
            return self.waypoints[-1]
        for i in range(1, len(self._cumulative)):
            if travelled <= self._cumulative[i]:
                seg = self._cumulative[i] - self._cumulative[i - 1]
                frac = (travelled - self._cumulative[i - 1]) / seg if seg else 0.0
                (x0, y0), (x1, y1) = self.waypoints[i - 1], self.waypoints[i]
                return (x0 + (x1 - x0) * frac, y0 + (y1 - y0) * frac)
        return self.waypoints[-1]


def position_at(path: MobilityPath, t: SimTime) -> Position:
    return path.position_at(t)


# --- echo traffic --------------------------------------------------------------

class EchoTraffic:
    """Request ``k`` leaves the MN at exactly ``k * interval``; the gateway sink replies."""

    def __init__(self, network: Network, profile: TrafficConfig) -> None:
        self.network = network
        self.profile = profile
        self.interval = ms(profile.interval_ms)
        self.reply_timeout = ms(profile.reply_timeout_ms)
        self.records: list[PacketRecord] = []
        self.sink_sources: set = set()
        self.plane = DataPlane(network, self.on_local)

    @property
    def duration(self) -> SimTime:
        """Time by which the last reply is due."""
        if self.profile.packet_count == 0:
            return 0
        return (self.profile.packet_count - 1) * self.interval + self.reply_timeout

    def start(self) -> None:
        if self.profile.packet_count > 0:
            self.network.engine.schedule(EventKind.TRAFFIC, self.network.mobile.id, 0, self._emit, 0)

    def _emit(self, k: int) -> None:
        net = self.network
        mn = net.mobile
        self.records.append(PacketRecord(k, net.engine.now()))
        packet = DataPacket(mn.primary.private_ip, net.gateway.ip, k, Direction.OUTBOUND)
        self.plane.inject(mn, packet)
        if k + 1 < self.profile.packet_count:
            net.engine.schedule(EventKind.TRAFFIC, mn.id, self.interval, self._emit, k + 1)

    def on_local(self, node: Node, packet: DataPacket) -> None:
        net = self.network
        if node is net.gateway and packet.kind == "request":
            self.sink_sources.add(packet.src_ip)
            reply = DataPacket(net.gateway.ip, packet.src_ip, packet.payload_id,
                               Direction.INBOUND, "reply")
            self.plane.inject(net.gateway, reply)
        elif node is net.mobile and packet.kind == "reply":
            record = self.records[packet.payload_id]
            if record.t_replied is None:
                record.t_replied = net.engine.now()

    def finish(self) -> list[PacketRecord]:
        """Attach the last recorded drop reason to every packet that missed its deadline."""
        reasons = {payload: reason for _, payload, _, _, reason in self.plane.drops}
        for record in self.records:
            if not record.in_time(self.reply_timeout):
                record.drop_reason = reasons.get(record.seq, "late")
        return self.records


def run_echo_traffic(network: Network, profile: TrafficConfig) -> EchoTraffic:
    traffic = EchoTraffic(network, profile)
    traffic.start()
    return traffic


# --- runs ------------------------------------------------------------------------

@dataclass
class ScenarioRun:
    """Everything one run produced; ``report`` is the serializable part."""

    report: RunReport
    network: Network
    agent: MobileAgent | SingleRadioAgent
    gateway: GatewayAgent
    ap_agents: dict[str, ApAgent]
    traffic: EchoTraffic
    engine: Engine
    violations: list[str] = field(default_factory=list)

    @property
    def trace(self) -> list[str]:
        return self.network.control_trace

    @property
    def event_trace(self) -> list[tuple[int, int, str, str]]:
        return self.engine.trace or []


def build_network(
    config: ScenarioConfig,
    scheme: str = "dual",
    seed: int | None = None,
    *,
    record_events: bool = False,
) -> tuple[Engine, Network, GatewayAgent, dict[str, ApAgent], MobileAgent | SingleRadioAgent]:
    """Wire up one run: entities, agents and the initial attachment."""
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme '{scheme}' (dual or baseline)", field="scheme")
    engine = Engine(record_trace=record_events)
    streams = RandomStreams(config.seed if seed is None else seed)
    path = MobilityPath.from_config(config.mobility)
    network = Network(engine, streams, config, path.position_at)

    gateway = GatewayAgent(network)
    network.agents[network.gateway.id] = gateway
    timeout = ms(config.handoff.commitment_timeout_ms)
    ap_agents = {ap.id: ApAgent(network, ap, timeout) for ap in network.edge_aps}
    for ap_agent in ap_agents.values():
        network.agents[ap_agent.ap.id] = ap_agent
        network.dissociation_listeners.append(ap_agent.on_dissociated)

    agent_cls = MobileAgent if scheme == "dual" else SingleRadioAgent
    agent = agent_cls(network, gateway, config.handoff)
    network.agents[network.mobile.id] = agent

    first = network.attach_initial()
    if first is not None:
        mn = network.mobile
        ap_agents[first.id].ledger.reserve_in_use(
            mn.vip, config.handoff.requested_bandwidth_kbps, mn.primary.mac
        )
    return engine, network, gateway, ap_agents, agent


def simulate(
    config: ScenarioConfig,
    scheme: str = "dual",
    seed: int | None = None,
    run_id: int = 0,
    *,
    record_events: bool = False,
    prepare: Callable[[Network], None] | None = None,
) -> ScenarioRun:
    """One full run. ``prepare`` may instrument the network before anything starts."""
    seed = config.seed if seed is None else seed
    engine, network, gateway, ap_agents, agent = build_network(
        config, scheme, seed, record_events=record_events
    )
    if prepare is not None:
        prepare(network)
    agent.start()
    traffic = run_echo_traffic(network, config.traffic)

    t_end = traffic.duration
    engine.run_until(t_end)
    agent.stop()
    engine.run_until(t_end + ms(config.handoff.commitment_timeout_ms) + SECOND)

    packets = traffic.finish()
    in_time = sum(p.in_time(traffic.reply_timeout) for p in packets)
    completed = [r for r in agent.records if r.outcome == "completed"]
    report = RunReport(
        run_id=run_id,
        seed=seed,
        scheme=scheme,
        sent=len(packets),
        received_in_time=in_time,
        lost=loss_stats(len(packets), in_time)["lost"],
        loss_reasons=loss_reasons(packets, traffic.reply_timeout),
        latencies_us=[r.handoff_latency() for r in completed],
        reattached=sum(r.outcome == "reattached" for r in agent.records),
        handoffs=[r.to_dict() for r in agent.records],
        packets=packets,
        control_sent=network.control_sent,
        control_lost=network.control_lost,
        reply_timeout_us=traffic.reply_timeout,
        config=config.config_echo(),
        trace=list(network.control_trace),
    )
    run = ScenarioRun(report, network, agent, gateway, ap_agents, traffic, engine)
    run.violations = check_run_invariants(run)
    logger.info(
        "run %d (%s, seed %d): %d handoffs, %d/%d lost, %d events",
        run_id, scheme, seed, len(completed), report.lost, report.sent, engine.events_fired,
    )
    return run


def run_scenario(
    config: ScenarioConfig,
    scheme: str = "dual",
    seed: int | None = None,
    run_id: int = 0,
) -> RunReport:
    return simulate(config, scheme, seed, run_id).report


def check_run_invariants(run: ScenarioRun) -> list[str]:
    """Post-run property checks; returns one string per violation (empty when clean)."""
    problems = list(run.agent.violations)
    net = run.network
    mn = net.mobile

    if run.agent.scheme == "dual":
        for rec in run.agent.records:
            if rec.outcome != "completed":
                continue
            stamps = rec.timestamps()
            if any(t is None for t in stamps):
                problems.append(f"handoff to {rec.new_ap} at t={rec.t_trigger} has missing times")
            elif stamps != sorted(stamps):
                problems.append(f"handoff to {rec.new_ap} at t={rec.t_trigger} out of order")

    primaries = sum(r.role.value == "primary" for r in mn.radios)
    if primaries != 1:
        problems.append(f"{primaries} primary radios at end of run")

    primary = mn.primary
    for ap_id, ap_agent in run.ap_agents.items():
        ledger = ap_agent.ledger
        if ledger.commitments:
            problems.append(f"{ap_id}: {len(ledger.commitments)} commitments leaked")
        if ledger.effective < 0:
            problems.append(f"{ap_id}: effective bandwidth {ledger.effective} < 0")
        serving = primary.association == ap_agent.ap.bssid
        expected = {mn.vip: primary.mac} if serving else {}
        actual = {vip: mac for vip, (_, mac) in ledger.in_use.items()}
        if actual != expected:
            problems.append(f"{ap_id}: in-use reservations {actual} != served MNs {expected}")

    stray = run.traffic.sink_sources - {mn.vip}
    if stray:
        problems.append(f"sink saw non-VIP sources {sorted(map(str, stray))}")

    if not run.agent.in_flight:
        mismatch = gateway_route_mismatch(net)
        if mismatch is not None:
            problems.append(f"end of run: {mismatch}")

    for t, ap_id, radio_id, clean in net.cleanup_log:
        if not clean:
            problems.append(f"t={t}: {ap_id} kept state for {radio_id} after dissociation")

    for line in net.control_trace:
        try:
            _, _, _, variant, values = parse_trace_line(line)
            msg = decode_fields(variant, values)
        except ValueError as e:
            problems.append(f"bad trace line: {e}")
            continue
        if getattr(msg, "floating_ip", mn.vip) != mn.vip:
            problems.append(f"message with foreign floating_ip: {line}")
    return problems


def _run_one(args: tuple[ScenarioConfig, str, int, int]) -> RunReport:
    config, scheme, seed, run_id = args
    return run_scenario(config, scheme, seed, run_id)


def run_batch(
    config: ScenarioConfig,
    runs: int = 10,
    scheme: str = "dual",
    seed: int | None = None,
    jobs: int = 1,
) -> list[RunReport]:
    """Runs with seeds ``seed + 0 .. seed + runs - 1``, returned in seed order."""
    if runs < 1:
        raise ConfigError("runs must be >= 1", field="runs")
    base = config.seed if seed is None else seed
    tasks = [(config, scheme, base + i, i) for i in range(runs)]
    if jobs <= 1 or runs == 1:
        return [_run_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, tasks))
