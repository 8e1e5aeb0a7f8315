"""Radios, propagation, association, control messaging and the forwarding plane.

The network is built from a validated :class:`~dual_radio_handoff.config.ScenarioConfig`:
edge and core APs on a wireless backhaul, one gateway holding a pre-configured GRE
tunnel per edge AP, and one mobile node with two radios sharing a virtual IP (VIP).

Control messages are unreliable datagrams. Data packets move hop by hop through
:class:`DataPlane`, which applies :func:`forward_packet` at every node.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field, replace
from enum import Enum
from ipaddress import IPv4Address, IPv4Network, ip_network
from typing import Any, Protocol

from .config import DelayConfig, PropagationParams, ScenarioConfig, backhaul_hops
from .messages import BROADCAST, HandoffMessage, format_trace_line
from .sim_engine import Engine, EventKind, RandomStreams, SimTime, ms

logger = logging.getLogger(__name__)

NodeId = str
RadioId = str
MacAddr = str
Position = tuple[float, float]

AP_RADIO_IFACE = "wlan0"
BACKHAUL_IFACE = "backhaul"
DEFAULT_ROUTE = ip_network("0.0.0.0/0")


def host_net(ip: IPv4Address) -> IPv4Network:
    return IPv4Network(f"{ip}/32")


# --- radios and link quality ---------------------------------------------------

class RadioRole(str, Enum):
    PRIMARY = "primary"
    SECONDARY = "secondary"


@dataclass(eq=False, slots=True)
class Radio:
    id: RadioId
    mac: MacAddr
    private_ip: IPv4Address
    role: RadioRole
    owner: NodeId
    association: str | None = None  # BSSID


@dataclass(frozen=True, slots=True)
class LinkQuality:
    rssi_dbm: float
    snr_db: float
    lq_score: float


def mean_rssi(tx_pos: Position, rx_pos: Position, params: PropagationParams) -> float:
    """Log-distance path loss without shadowing; distances under 1 m count as 1 m."""
    d = max(1.0, math.hypot(tx_pos[0] - rx_pos[0], tx_pos[1] - rx_pos[1]))
    return params.tx_power_dbm - params.ref_loss_db - 10.0 * params.path_loss_exponent * math.log10(d)


def compute_rssi(
    tx_pos: Position,
    rx_pos: Position,
    params: PropagationParams,
    rng: Any | None = None,
) -> float:
    """RSSI in dBm, plus a zero-mean normal shadowing draw when sigma > 0 and ``rng`` is given."""
    rssi = mean_rssi(tx_pos, rx_pos, params)
    if params.shadowing_sigma_db > 0 and rng is not None:
        rssi += float(rng.normal(0.0, params.shadowing_sigma_db))
    return rssi


def link_quality(rssi_dbm: float, params: PropagationParams) -> LinkQuality:
    # The score is the raw RSSI; smoothing happens in the scan history.
    return LinkQuality(rssi_dbm, rssi_dbm - params.noise_floor_dbm, rssi_dbm)


class ShadowingField:
    """Shadowing offsets indexed by (BSSID, time slot) rather than by draw order.

    Every AP has its own sub-stream and values are consumed slot by slot, so two runs
    with the same seed see the same offsets at the same instants whatever they sample.
    With ``keep_us`` set, slots older than that behind the newest one asked for are
    dropped and can no longer be read.
    """

    _BLOCK = 64

    def __init__(
        self,
        streams: RandomStreams,
        sigma_db: float,
        slot_us: SimTime,
        keep_us: SimTime | None = None,
    ) -> None:
        self._streams = streams
        self.sigma_db = sigma_db
        self.slot_us = max(1, slot_us)
        self._keep = None if keep_us is None else keep_us // self.slot_us + 1
        self._values: dict[str, list[float]] = {}
        # slot number of _values[bssid][0]
        self._first: dict[str, int] = {}

    def offset(self, bssid: str, t: SimTime) -> float:
        if self.sigma_db <= 0:
            return 0.0
        slot = t // self.slot_us
        values = self._values.setdefault(bssid, [])
        first = self._first.setdefault(bssid, 0)
        if slot < first:
            raise ValueError(f"shadowing for {bssid} at t={t} was already discarded")
        gen = self._streams.stream(RandomStreams.SHADOWING, bssid)
        while first + len(values) <= slot:
            values.extend(gen.normal(0.0, self.sigma_db, self._BLOCK).tolist())
        if self._keep is not None and slot - first > self._keep + self._BLOCK:
            drop = slot - first - self._keep
            del values[:drop]
            first += drop
            self._first[bssid] = first
        return values[slot - first]

    def retained(self, bssid: str) -> int:
        return len(self._values.get(bssid, ()))


# --- forwarding state ----------------------------------------------------------

class ArpOrigin(str, Enum):
    LEARNED = "learned"
    PREINSTALLED = "handoff-preinstalled"


@dataclass(frozen=True, slots=True)
class ArpEntry:
    mac: MacAddr
    origin: ArpOrigin


class HopKind(str, Enum):
    INTERFACE = "interface"
    TUNNEL = "tunnel"
    BACKHAUL = "backhaul"


@dataclass(frozen=True, slots=True)
class NextHop:
    kind: HopKind
    name: str
    gateway: IPv4Address | None = None

    @classmethod
    def interface(cls, name: str, gateway: IPv4Address | None = None) -> NextHop:
        return cls(HopKind.INTERFACE, name, gateway)

    @classmethod
    def tunnel(cls, tunnel_id: str) -> NextHop:
        return cls(HopKind.TUNNEL, tunnel_id)

    @classmethod
    def backhaul(cls) -> NextHop:
        return cls(HopKind.BACKHAUL, BACKHAUL_IFACE)


@dataclass(slots=True)
class ForwardingState:
    route_table: dict[IPv4Network, NextHop] = field(default_factory=dict)
    arp_cache: dict[IPv4Address, ArpEntry] = field(default_factory=dict)
    tunnel_table: dict[str, str] = field(default_factory=dict)
    snat_vip: IPv4Address | None = None

    def set_route(self, dest: IPv4Network, hop: NextHop) -> None:
        # Single assignment: an existing entry is replaced, never deleted first.
        self.route_table[dest] = hop

    def remove_route(self, dest: IPv4Network) -> bool:
        return self.route_table.pop(dest, None) is not None

    def lookup(self, dst: IPv4Address) -> NextHop | None:
        best: IPv4Network | None = None
        for net in self.route_table:
            if dst in net and (best is None or net.prefixlen > best.prefixlen):
                best = net
        return self.route_table[best] if best is not None else None

    def set_arp(self, ip: IPv4Address, mac: MacAddr, origin: ArpOrigin) -> None:
        self.arp_cache[ip] = ArpEntry(mac, origin)

    def remove_arp(self, ip: IPv4Address) -> bool:
        return self.arp_cache.pop(ip, None) is not None

    def references(self, ips: Iterable[IPv4Address], macs: Iterable[MacAddr]) -> bool:
        ips, macs = set(ips), set(macs)
        if any(net.prefixlen == 32 and net.network_address in ips for net in self.route_table):
            return True
        return any(ip in ips or entry.mac in macs for ip, entry in self.arp_cache.items())

    def purge(self, ips: Iterable[IPv4Address], macs: Iterable[MacAddr]) -> int:
        """Drop host routes to ``ips`` and ARP entries keyed by ``ips`` or pointing at ``macs``."""
        ips, macs = set(ips), set(macs)
        routes = [n for n in self.route_table if n.prefixlen == 32 and n.network_address in ips]
        arps = [ip for ip, e in self.arp_cache.items() if ip in ips or e.mac in macs]
        for net in routes:
            del self.route_table[net]
        for ip in arps:
            del self.arp_cache[ip]
        return len(routes) + len(arps)


# --- nodes -----------------------------------------------------------------------

@dataclass(eq=False, kw_only=True)
class Node:
    id: NodeId
    fwd: ForwardingState = field(default_factory=ForwardingState)
    local_ips: set[IPv4Address] = field(default_factory=set)


@dataclass(eq=False, kw_only=True)
class ApNode(Node):
    hostname: str
    role: str
    ip: IPv4Address
    mac: MacAddr
    position: Position
    channel: int
    capacity_kbps: int
    hops_to_gateway: int
    clients: set[MacAddr] = field(default_factory=set)

    @property
    def bssid(self) -> str:
        return self.mac

    @property
    def tunnel_id(self) -> str:
        return f"gre-{self.hostname}"


@dataclass(eq=False, kw_only=True)
class Gateway(Node):
    ip: IPv4Address


@dataclass(eq=False, kw_only=True)
class MobileNode(Node):
    vip: IPv4Address
    radios: list[Radio]

    @property
    def primary(self) -> Radio:
        return next(r for r in self.radios if r.role is RadioRole.PRIMARY)

    @property
    def secondary(self) -> Radio:
        return next(r for r in self.radios if r.role is RadioRole.SECONDARY)

    def radio_by_mac(self, mac: MacAddr) -> Radio | None:
        return next((r for r in self.radios if r.mac == mac), None)

    def radio_by_id(self, radio_id: RadioId) -> Radio | None:
        return next((r for r in self.radios if r.id == radio_id), None)

    @property
    def macs(self) -> set[MacAddr]:
        return {r.mac for r in self.radios}


# --- packets and forwarding decisions ------------------------------------------

class Direction(str, Enum):
    OUTBOUND = "outbound"
    INBOUND = "inbound"


@dataclass(frozen=True, slots=True)
class DataPacket:
    src_ip: IPv4Address
    dst_ip: IPv4Address
    payload_id: int
    direction: Direction
    kind: str = "request"
    encapsulation: str | None = None


class ActionKind(str, Enum):
    DELIVER_LOCAL = "deliver-local"
    EMIT = "emit-on-interface"
    ENCAPSULATE = "encapsulate-into-tunnel"
    DECAPSULATE = "decapsulate"
    DROP = "drop"


class DropReason(str, Enum):
    NO_ROUTE = "no-route"
    NO_ARP = "no-arp"
    NOT_ASSOCIATED = "not-associated"
    OUT_OF_RANGE = "out-of-range"
    AIR_LOSS = "air-loss"


@dataclass(frozen=True, slots=True)
class ForwardAction:
    kind: ActionKind
    packet: DataPacket
    interface: str | None = None
    mac: MacAddr | None = None
    tunnel: str | None = None
    reason: DropReason | None = None
    arp_resolved: bool = False


ArpResolver = Callable[[Node, str, IPv4Address], "MacAddr | None"]


def forward_packet(
    node: Node,
    packet: DataPacket,
    resolver: ArpResolver | None = None,
) -> ForwardAction:
    """Decide what ``node`` does with ``packet`` (longest-prefix match on its routes)."""
    if packet.encapsulation is not None:
        if isinstance(node, ApNode) and packet.encapsulation == node.tunnel_id:
            return ForwardAction(ActionKind.DECAPSULATE, replace(packet, encapsulation=None))
        return ForwardAction(ActionKind.DROP, packet, reason=DropReason.NO_ROUTE)

    if packet.dst_ip in node.local_ips:
        return ForwardAction(ActionKind.DELIVER_LOCAL, packet)

    vip = node.fwd.snat_vip
    if vip is not None and packet.direction is Direction.OUTBOUND and packet.src_ip != vip:
        packet = replace(packet, src_ip=vip)

    hop = node.fwd.lookup(packet.dst_ip)
    if hop is None:
        return ForwardAction(ActionKind.DROP, packet, reason=DropReason.NO_ROUTE)
    if hop.kind is HopKind.TUNNEL:
        return ForwardAction(
            ActionKind.ENCAPSULATE, replace(packet, encapsulation=hop.name), tunnel=hop.name
        )
    if hop.kind is HopKind.BACKHAUL:
        return ForwardAction(ActionKind.EMIT, packet, interface=hop.name)

    next_ip = hop.gateway or packet.dst_ip
    entry = node.fwd.arp_cache.get(next_ip)
    if entry is not None:
        return ForwardAction(ActionKind.EMIT, packet, interface=hop.name, mac=entry.mac)
    mac = resolver(node, hop.name, next_ip) if resolver else None
    if mac is not None:
        return ForwardAction(
            ActionKind.EMIT, packet, interface=hop.name, mac=mac, arp_resolved=True
        )
    return ForwardAction(ActionKind.DROP, packet, reason=DropReason.NO_ARP)


# --- the network ---------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Timing:
    """Delays in integer microseconds."""

    mn_ap_hop: SimTime
    backhaul_hop: SimTime
    processing: SimTime
    association: SimTime
    channel_switch: SimTime
    dissociation: SimTime
    arp_query: SimTime
    data_air_hop: SimTime
    data_backhaul_hop: SimTime

    @classmethod
    def from_config(cls, delays: DelayConfig) -> Timing:
        return cls(
            mn_ap_hop=ms(delays.mn_ap_hop),
            backhaul_hop=ms(delays.backhaul_hop),
            processing=ms(delays.agent_processing),
            association=ms(delays.association),
            channel_switch=ms(delays.channel_switch),
            dissociation=ms(delays.dissociation),
            arp_query=ms(delays.arp_query),
            data_air_hop=ms(delays.data_air_hop),
            data_backhaul_hop=ms(delays.data_backhaul_hop),
        )


class ControlHandler(Protocol):
    def on_message(self, message: HandoffMessage, src: NodeId, radio_mac: MacAddr | None) -> None:
        ...


DissociationListener = Callable[[ApNode, MobileNode, Radio], None]


class Network:
    """All entities of one run plus the unreliable control channel between them."""

    def __init__(
        self,
        engine: Engine,
        streams: RandomStreams,
        config: ScenarioConfig,
        mobile_position: Callable[[SimTime], Position],
    ) -> None:
        self.engine = engine
        self.streams = streams
        self.config = config
        self.params = config.propagation
        self.timing = Timing.from_config(config.delays)
        self._position = mobile_position
        self.shadowing = ShadowingField(
            streams,
            self.params.shadowing_sigma_db,
            ms(config.handoff.scan_dwell_ms),
            keep_us=ms(config.handoff.history_max_age_ms),
        )
        self.agents: dict[NodeId, ControlHandler] = {}
        self.dissociation_listeners: list[DissociationListener] = []
        self.control_trace: list[str] = []
        self.control_sent = 0
        self.control_lost = 0
        # (t, ap id, radio id, ap state clean afterwards)
        self.cleanup_log: list[tuple[SimTime, NodeId, RadioId, bool]] = []
        self._build(config)

    # -- construction --

    def _build(self, config: ScenarioConfig) -> None:
        topo = config.topology
        hops = backhaul_hops(topo.links, topo.gateway.id)
        backhaul_net = ip_network(f"{topo.gateway.ip}/24", strict=False)

        self.aps: dict[NodeId, ApNode] = {}
        for i, ap_cfg in enumerate(topo.aps):
            ap = ApNode(
                id=ap_cfg.id,
                hostname=ap_cfg.name,
                role=ap_cfg.role,
                ip=ap_cfg.ip or IPv4Address(int(backhaul_net.network_address) + 11 + i),
                mac=ap_cfg.mac or f"02:00:00:00:0a:{i + 1:02x}",
                position=ap_cfg.position,
                channel=ap_cfg.channel,
                capacity_kbps=ap_cfg.path_capacity_kbps,
                hops_to_gateway=hops.get(ap_cfg.id, 0),
            )
            ap.local_ips.add(ap.ip)
            ap.fwd.set_route(backhaul_net, NextHop.backhaul())
            self.aps[ap.id] = ap
        self.edge_aps = [ap for ap in self.aps.values() if ap.role == "edge"]
        self.ap_by_bssid = {ap.bssid: ap for ap in self.aps.values()}
        self.ap_by_hostname = {ap.hostname: ap for ap in self.edge_aps}
        self.ap_by_tunnel = {ap.tunnel_id: ap for ap in self.edge_aps}

        self.gateway = Gateway(id=topo.gateway.id, ip=topo.gateway.ip)
        self.gateway.local_ips.add(self.gateway.ip)
        for ap in self.edge_aps:
            self.gateway.fwd.tunnel_table[ap.hostname] = ap.tunnel_id

        mcfg = topo.mobile
        radios = [
            Radio(f"{mcfg.id}.RADIO{n + 1}", mcfg.radio_macs[n], mcfg.radio_ips[n],
                  RadioRole.PRIMARY if n == 0 else RadioRole.SECONDARY, mcfg.id)
            for n in range(2)
        ]
        self.mobile = MobileNode(id=mcfg.id, vip=mcfg.vip, radios=radios)
        self.mobile.fwd.snat_vip = mcfg.vip
        self.mobile.local_ips.update({mcfg.vip, *mcfg.radio_ips})

    def node(self, node_id: NodeId) -> Node:
        if node_id == self.gateway.id:
            return self.gateway
        if node_id == self.mobile.id:
            return self.mobile
        return self.aps[node_id]

    def tunnel_count(self) -> int:
        return len(self.gateway.fwd.tunnel_table)

    # -- radio environment --

    def mobile_position(self, t: SimTime | None = None) -> Position:
        return self._position(self.engine.now() if t is None else t)

    def ap_rssi(self, ap: ApNode, t: SimTime | None = None) -> float:
        return mean_rssi(ap.position, self.mobile_position(t), self.params)

    def in_range(self, ap: ApNode, t: SimTime | None = None) -> bool:
        return self.ap_rssi(ap, t) >= self.params.rx_sensitivity_dbm

    def link_up(self, radio: Radio, ap: ApNode) -> bool:
        return radio.association == ap.bssid and self.in_range(ap)

    def sample(self, ap: ApNode) -> LinkQuality | None:
        """One LQ measurement of ``ap`` now (shadowed); None when below sensitivity."""
        now = self.engine.now()
        rssi = self.ap_rssi(ap) + self.shadowing.offset(ap.bssid, now)
        if rssi < self.params.rx_sensitivity_dbm:
            return None
        return link_quality(rssi, self.params)

    def scan_step(
        self,
        radio: Radio,
        channel: int,
        history: Any | None = None,
        *,
        allow_primary: bool = False,
    ) -> list[tuple[str, LinkQuality]]:
        """Probe one channel; one sample per edge AP on it that is heard above sensitivity."""
        if radio.role is not RadioRole.SECONDARY and not allow_primary:
            raise ValueError(f"{radio.id} is the primary radio; only the secondary scans")
        samples = []
        for ap in self.edge_aps:
            if ap.channel != channel:
                continue
            lq = self.sample(ap)
            if lq is not None:
                samples.append((ap.bssid, lq))
        if history is not None:
            now = self.engine.now()
            for bssid, lq in samples:
                history.add(now, bssid, lq)
        return samples

    # -- association --

    def associate(self, radio: Radio, bssid: str, on_done: Callable[[bool], None]) -> None:
        """Start associating ``radio`` with ``bssid``; ``on_done(ok)`` fires on completion."""
        ap = self.ap_by_bssid.get(bssid)
        if ap is None or ap.role != "edge":
            raise ValueError(f"{bssid} is not an edge AP")
        if radio.association == bssid:
            self.engine.schedule(EventKind.TIMER, radio.owner, 0, on_done, True)
            return
        if radio.association is not None:
            self.dissociate(radio)
        delay = self.timing.channel_switch + self.timing.association
        self.engine.schedule(
            EventKind.TIMER, radio.owner, delay, self._complete_association, radio, ap, on_done
        )

    def _complete_association(
        self, radio: Radio, ap: ApNode, on_done: Callable[[bool], None]
    ) -> None:
        if not self.in_range(ap):
            logger.info("%s: association with %s failed (out of range)", radio.id, ap.id)
            on_done(False)
            return
        radio.association = ap.bssid
        ap.clients.add(radio.mac)
        logger.debug("%s associated with %s", radio.id, ap.id)
        on_done(True)

    def dissociate(
        self,
        radio: Radio,
        *,
        delay: SimTime = 0,
        on_done: Callable[[], None] | None = None,
    ) -> None:
        """Tear down ``radio``'s association (after ``delay``); the AP forgets the MN."""
        if delay > 0:
            self.engine.schedule(
                EventKind.TIMER, radio.owner, delay, self._complete_dissociation, radio, on_done
            )
        else:
            self._complete_dissociation(radio, on_done)

    def _complete_dissociation(self, radio: Radio, on_done: Callable[[], None] | None) -> None:
        bssid = radio.association
        if bssid is not None:
            ap = self.ap_by_bssid[bssid]
            mn = self.mobile
            radio.association = None
            ap.clients.discard(radio.mac)
            ap.fwd.purge({mn.vip, *(r.private_ip for r in mn.radios)}, mn.macs)
            mn.fwd.purge({ap.ip}, {ap.mac})
            clean = not ap.fwd.references({mn.vip}, mn.macs)
            self.cleanup_log.append((self.engine.now(), ap.id, radio.id, clean))
            logger.debug("%s dissociated from %s", radio.id, ap.id)
            for listener in self.dissociation_listeners:
                listener(ap, mn, radio)
        if on_done is not None:
            on_done()

    def attach_initial(self) -> ApNode | None:
        """Bootstrap: attach the primary radio to the strongest edge AP in range at t=0."""
        in_range = [ap for ap in self.edge_aps if self.in_range(ap)]
        if not in_range:
            logger.warning("no edge AP in range at start; waiting for the scanner")
            return None
        ap = max(in_range, key=lambda a: (self.ap_rssi(a), a.id))
        mn = self.mobile
        radio = mn.primary
        radio.association = ap.bssid
        ap.clients.add(radio.mac)
        ap.fwd.set_arp(mn.vip, radio.mac, ArpOrigin.PREINSTALLED)
        ap.fwd.set_route(host_net(mn.vip), NextHop.interface(AP_RADIO_IFACE))
        mn.fwd.set_arp(ap.ip, ap.mac, ArpOrigin.PREINSTALLED)
        mn.fwd.set_route(host_net(ap.ip), NextHop.interface(radio.id))
        mn.fwd.set_route(DEFAULT_ROUTE, NextHop.interface(radio.id, gateway=ap.ip))
        self.gateway.fwd.set_route(host_net(mn.vip), NextHop.tunnel(ap.tunnel_id))
        logger.info("%s attached to %s at start", radio.id, ap.id)
        return ap

    def resolve(self, node: Node, iface: str, ip: IPv4Address) -> MacAddr | None:
        """ARP query answer, or None when nothing on that link owns ``ip``."""
        if isinstance(node, MobileNode):
            radio = node.radio_by_id(iface)
            if radio is None or radio.association is None:
                return None
            ap = self.ap_by_bssid[radio.association]
            return ap.mac if ap.ip == ip else None
        if isinstance(node, ApNode):
            # The VIP never answers ARP; only a client's private address does.
            for radio in self.mobile.radios:
                if radio.private_ip == ip and radio.mac in node.clients:
                    return radio.mac
        return None

    # -- control channel --

    def _control_delay(self, src: NodeId, dst: NodeId) -> SimTime:
        mn, gw = self.mobile.id, self.gateway.id
        if mn in (src, dst):
            base = self.timing.mn_ap_hop
        else:
            ap_id = dst if src == gw else src
            base = self.aps[ap_id].hops_to_gateway * self.timing.backhaul_hop
        return base + self.timing.processing

    def send_control(
        self,
        src: NodeId,
        message: HandoffMessage,
        *,
        dst: NodeId | None = None,
        radio: Radio | None = None,
        to_mac: MacAddr | None = None,
        broadcast: bool = False,
    ) -> None:
        """Send one datagram. Loss is silent to the sender.

        MN senders pass the sending ``radio``; a broadcast goes to the AP that radio is
        associated with. AP-to-MN sends pass ``to_mac`` for the receiving radio.
        """
        now = self.engine.now()
        radio_mac = to_mac
        if radio is not None:
            if radio.association is None:
                raise ValueError(f"{radio.id} is not associated; cannot send {message.VARIANT}")
            dst = self.ap_by_bssid[radio.association].id if broadcast else dst
            radio_mac = radio.mac
            src_label = radio.id
        else:
            src_label = src
        if dst is None:
            raise ValueError(f"no destination for {message.VARIANT}")
        if broadcast:
            dst_label = BROADCAST
        elif to_mac is not None:
            target = self.mobile.radio_by_mac(to_mac)
            dst_label = target.id if target else dst
        else:
            dst_label = dst

        self.control_sent += 1
        self.control_trace.append(format_trace_line(now, src_label, dst_label, message))
        p = self.config.channel.p_bcast if broadcast else self.config.channel.p_unicast
        if p > 0 and self.streams.stream(RandomStreams.CONTROL_LOSS).random() < p:
            self.control_lost += 1
            logger.debug("t=%d %s lost (%s -> %s)", now, message.VARIANT, src_label, dst_label)
            return
        self.engine.schedule(
            EventKind.MESSAGE, dst, self._control_delay(src, dst),
            self._deliver, src, dst, message, radio_mac,
        )

    def _deliver(
        self, src: NodeId, dst: NodeId, message: HandoffMessage, radio_mac: MacAddr | None
    ) -> None:
        if radio_mac is not None:
            ap = self.aps[dst] if dst in self.aps else self.aps[src]
            radio = self.mobile.radio_by_mac(radio_mac)
            if radio is None or not self.link_up(radio, ap):
                self.control_lost += 1
                logger.debug("%s to/from %s dropped: radio link down", message.VARIANT, ap.id)
                return
        handler = self.agents.get(dst)
        if handler is None:
            logger.debug("%s delivered to %s with no agent", message.VARIANT, dst)
            return
        handler.on_message(message, src, radio_mac)


# --- data plane ----------------------------------------------------------------

LocalDelivery = Callable[[Node, DataPacket], None]


class DataPlane:
    """Moves data packets hop by hop; every node applies :func:`forward_packet`."""

    def __init__(self, network: Network, on_local: LocalDelivery) -> None:
        self.network = network
        self.on_local = on_local
        # (t, payload id, packet kind, node id, reason)
        self.drops: list[tuple[SimTime, int, str, NodeId, str]] = []
        self._engine = network.engine

    def inject(self, node: Node, packet: DataPacket) -> None:
        self._process(node, packet)

    def _drop(self, node: Node, packet: DataPacket, reason: DropReason) -> None:
        self.drops.append((self._engine.now(), packet.payload_id, packet.kind, node.id, reason.value))
        logger.debug("drop %s #%d at %s: %s", packet.kind, packet.payload_id, node.id, reason.value)

    def _air_lost(self) -> bool:
        p = self.network.config.channel.p_data
        return p > 0 and self.network.streams.stream(RandomStreams.DATA_LOSS).random() < p

    def _process(self, node: Node, packet: DataPacket) -> None:
        net = self.network
        action = forward_packet(node, packet, resolver=net.resolve)
        packet = action.packet
        if action.kind is ActionKind.DELIVER_LOCAL:
            self.on_local(node, packet)
        elif action.kind is ActionKind.DECAPSULATE:
            self._process(node, packet)
        elif action.kind is ActionKind.DROP:
            self._drop(node, packet, action.reason or DropReason.NO_ROUTE)
        elif action.kind is ActionKind.ENCAPSULATE:
            ap = net.ap_by_tunnel[action.tunnel or ""]
            delay = ap.hops_to_gateway * net.timing.data_backhaul_hop
            self._engine.schedule(EventKind.MESSAGE, ap.id, delay, self._process, ap, packet)
        elif action.interface == BACKHAUL_IFACE:
            assert isinstance(node, ApNode)
            delay = node.hops_to_gateway * net.timing.data_backhaul_hop
            self._engine.schedule(
                EventKind.MESSAGE, net.gateway.id, delay, self._process, net.gateway, packet
            )
        elif isinstance(node, ApNode):
            self._emit_downlink(node, packet, action)
        elif isinstance(node, MobileNode):
            self._emit_uplink(node, packet, action)
        else:
            self._drop(node, packet, DropReason.NO_ROUTE)

    def _emit_downlink(self, ap: ApNode, packet: DataPacket, action: ForwardAction) -> None:
        net = self.network
        radio = net.mobile.radio_by_mac(action.mac or "")
        if radio is None or radio.association != ap.bssid:
            self._drop(ap, packet, DropReason.NOT_ASSOCIATED)
            return
        if not net.in_range(ap):
            self._drop(ap, packet, DropReason.OUT_OF_RANGE)
            return
        if self._air_lost():
            self._drop(ap, packet, DropReason.AIR_LOSS)
            return
        self._engine.schedule(
            EventKind.MESSAGE, net.mobile.id, net.timing.data_air_hop,
            self._arrive_over_air, ap, radio, net.mobile, packet,
        )

    def _emit_uplink(self, mn: MobileNode, packet: DataPacket, action: ForwardAction) -> None:
        net = self.network
        radio = mn.radio_by_id(action.interface or "")
        if radio is None or radio.association is None:
            self._drop(mn, packet, DropReason.NOT_ASSOCIATED)
            return
        ap = net.ap_by_bssid[radio.association]
        if ap.mac != action.mac:
            self._drop(mn, packet, DropReason.NOT_ASSOCIATED)
            return
        if not net.in_range(ap):
            self._drop(mn, packet, DropReason.OUT_OF_RANGE)
            return
        delay = net.timing.data_air_hop
        if action.arp_resolved:
            mn.fwd.set_arp(ap.ip, ap.mac, ArpOrigin.LEARNED)
            delay += net.timing.arp_query
        if self._air_lost():
            self._drop(mn, packet, DropReason.AIR_LOSS)
            return
        self._engine.schedule(
            EventKind.MESSAGE, ap.id, delay, self._arrive_over_air, ap, radio, ap, packet
        )

    def _arrive_over_air(self, ap: ApNode, radio: Radio, receiver: Node, packet: DataPacket) -> None:
        if radio.association != ap.bssid:
            self._drop(receiver, packet, DropReason.NOT_ASSOCIATED)
            return
        self._process(receiver, packet)
