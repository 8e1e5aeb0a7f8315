"""Handoff agents: the mobile node (dual radio), the edge APs and the gateway.

Agents are plain state machines driven by the engine. They only talk to each other
through :meth:`Network.send_control`, so any message may be lost on the way.

Sequence for one make-before-break handoff from A to B::

    MN: scan -> find_better_ap -> associate RADIO2 with B -> REQUEST-ROUTE (broadcast)
    B:  check bandwidth, commit, pre-install ARP + route for the VIP -> OFFER-ROUTE
    MN: ARP + route for B via RADIO2 -> SWITCH-ROUTE-MN-TO-B
    B:  -> SWITCH-ROUTE-B-TO-G
    G:  VIP route -> tunnel to B (single replace) -> SWITCH-ROUTE-OK
    B:  consume commitment -> SWITCH-ROUTE-OK to RADIO2
    MN: default route via RADIO2, swap roles, dissociate RADIO1
"""

from __future__ import annotations

import logging
from collections import deque
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from enum import Enum
from ipaddress import IPv4Address

from .config import HandoffConfig
from .messages import (
    HandoffMessage,
    OfferRoute,
    RequestRoute,
    SwitchRouteBToG,
    SwitchRouteMnToB,
    SwitchRouteOk,
)
from .net_model import (
    AP_RADIO_IFACE,
    DEFAULT_ROUTE,
    ApNode,
    ArpOrigin,
    LinkQuality,
    MacAddr,
    MobileNode,
    Network,
    NextHop,
    NodeId,
    Radio,
    RadioRole,
    host_net,
)
from .sim_engine import Engine, EventId, EventKind, SimTime, SimulationFault, ms

logger = logging.getLogger(__name__)


class TopologyFault(SimulationFault):
    """Run-time misconfiguration, e.g. a route switch towards an AP with no tunnel."""


# --- bandwidth admission -------------------------------------------------------

@dataclass(slots=True)
class Commitment:
    vip: IPv4Address
    amount: int
    mac: MacAddr
    offered: int
    expiry: SimTime
    timer: EventId | None = None


class BandwidthLedger:
    """Bandwidth an edge AP has promised (commitments) or handed out (in use).

    effective = capacity - in use - committed. A commitment is either consumed, when
    the route switch completes, or freed by its timer; never both.
    """

    def __init__(
        self,
        engine: Engine,
        owner: NodeId,
        capacity_kbps: int,
        timeout: SimTime,
        on_expire=None,
    ) -> None:
        self._engine = engine
        self.owner = owner
        self.capacity = capacity_kbps
        self.timeout = timeout
        self.on_expire = on_expire
        self.commitments: dict[IPv4Address, Commitment] = {}
        self.in_use: dict[IPv4Address, tuple[int, MacAddr]] = {}
        self.expired = 0
        self.consumed = 0

    @property
    def monitored(self) -> int:
        return self.capacity - sum(amount for amount, _ in self.in_use.values())

    @property
    def committed(self) -> int:
        return sum(c.amount for c in self.commitments.values())

    @property
    def effective(self) -> int:
        return self.monitored - self.committed

    def commit(self, vip: IPv4Address, amount: int, mac: MacAddr) -> Commitment | None:
        """Admit ``amount`` if strictly less than the effective bandwidth."""
        available = self.effective
        if not available > amount:
            return None
        c = Commitment(vip, amount, mac, available, self._engine.now() + self.timeout)
        c.timer = self._engine.schedule(EventKind.TIMER, self.owner, self.timeout, self._expire, vip)
        self.commitments[vip] = c
        return c

    def refresh(self, vip: IPv4Address) -> Commitment | None:
        c = self.commitments.get(vip)
        if c is None:
            return None
        self._engine.cancel(c.timer)
        c.expiry = self._engine.now() + self.timeout
        c.timer = self._engine.schedule(EventKind.TIMER, self.owner, self.timeout, self._expire, vip)
        return c

    def consume(self, vip: IPv4Address) -> bool:
        """Turn a live commitment into an in-use reservation."""
        c = self.commitments.pop(vip, None)
        if c is None:
            return False
        self._engine.cancel(c.timer)
        self.in_use[vip] = (c.amount, c.mac)
        self.consumed += 1
        return True

    def reserve_in_use(self, vip: IPv4Address, amount: int, mac: MacAddr) -> None:
        self.in_use[vip] = (amount, mac)

    def release_in_use(self, vip: IPv4Address, mac: MacAddr | None = None) -> bool:
        entry = self.in_use.get(vip)
        if entry is None or (mac is not None and entry[1] != mac):
            return False
        del self.in_use[vip]
        return True

    def _expire(self, vip: IPv4Address) -> None:
        c = self.commitments.pop(vip, None)
        if c is None:
            return
        self.expired += 1
        logger.warning("%s: commitment of %d kbps for %s timed out", self.owner, c.amount, vip)
        if self.on_expire is not None:
            self.on_expire(c)

    def holds(self, vip: IPv4Address) -> bool:
        return vip in self.commitments or vip in self.in_use


# --- link-quality history ------------------------------------------------------

class ScanHistory:
    """Recent LQ samples per BSSID, smoothed with an exponentially weighted average."""

    def __init__(self, depth: int, alpha: float, max_age: SimTime) -> None:
        self.depth = depth
        self.alpha = alpha
        self.max_age = max_age
        self._samples: dict[str, deque[tuple[SimTime, float]]] = {}

    def add(self, t: SimTime, bssid: str, lq: LinkQuality | float) -> None:
        score = lq.lq_score if isinstance(lq, LinkQuality) else float(lq)
        self._samples.setdefault(bssid, deque(maxlen=self.depth)).append((t, score))

    def bssids(self) -> list[str]:
        return sorted(self._samples)

    def clear(self) -> None:
        self._samples.clear()

    def smoothed(self, bssid: str, now: SimTime) -> float | None:
        samples = [s for t, s in self._samples.get(bssid, ()) if now - t <= self.max_age]
        if not samples:
            return None
        value = samples[0]
        for s in samples[1:]:
            value = self.alpha * s + (1 - self.alpha) * value
        return value

    def __len__(self) -> int:
        return sum(len(d) for d in self._samples.values())


def find_better_ap(
    history: ScanHistory,
    current_bssid: str | None,
    *,
    threshold_dbm: float,
    margin_db: float,
    now: SimTime,
    exclude: Iterable[str] = (),
) -> str | None:
    """Pick a handoff target, or None.

    With a current AP: only when its smoothed LQ is under the threshold and the best
    candidate beats it by at least the margin. Without one: the best candidate heard.
    """
    skip = set(exclude)
    if current_bssid is not None:
        skip.add(current_bssid)
    candidates = []
    for bssid in history.bssids():
        if bssid in skip:
            continue
        lq = history.smoothed(bssid, now)
        if lq is not None:
            candidates.append((lq, bssid))
    if not candidates:
        return None
    best_lq, best = max(candidates)
    if current_bssid is None:
        return best
    current = history.smoothed(current_bssid, now)
    if current is None or current >= threshold_dbm:
        return None
    return best if best_lq >= current + margin_db else None


# --- handoff records -----------------------------------------------------------

@dataclass(slots=True)
class HandoffRecord:
    mn: NodeId
    old_ap: NodeId | None
    new_ap: NodeId
    t_trigger: SimTime
    scheme: str = "dual"
    t_associated: SimTime | None = None
    t_route_switched_gateway: SimTime | None = None
    t_default_route_switched: SimTime | None = None
    t_dissociated: SimTime | None = None
    retries: int = 0
    outcome: str | None = None  # completed | reattached | abandoned
    reason: str | None = None

    @property
    def finished(self) -> bool:
        return self.outcome in ("completed", "reattached")

    def handoff_latency(self) -> SimTime | None:
        """Trigger to old-link teardown (dual); trigger to service restored (baseline)."""
        if not self.finished:
            return None
        if self.scheme == "baseline":
            return self.t_default_route_switched - self.t_trigger
        return self.t_dissociated - self.t_trigger

    def control_exchange_latency(self) -> SimTime | None:
        if not self.finished or self.t_associated is None:
            return None
        return self.t_default_route_switched - self.t_associated

    def timestamps(self) -> list[SimTime | None]:
        return [
            self.t_trigger,
            self.t_associated,
            self.t_route_switched_gateway,
            self.t_default_route_switched,
            self.t_dissociated,
        ]

    def to_dict(self) -> dict:
        return {
            "mn": self.mn,
            "old_ap": self.old_ap,
            "new_ap": self.new_ap,
            "scheme": self.scheme,
            "t_trigger": self.t_trigger,
            "t_associated": self.t_associated,
            "t_route_switched_gateway": self.t_route_switched_gateway,
            "t_default_route_switched": self.t_default_route_switched,
            "t_dissociated": self.t_dissociated,
            "retries": self.retries,
            "outcome": self.outcome,
            "reason": self.reason,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> HandoffRecord:
        return cls(**dict(data))


def handoff_latency(record: HandoffRecord) -> SimTime | None:
    return record.handoff_latency()


# --- gateway -------------------------------------------------------------------

class GatewayAgent:
    def __init__(self, network: Network) -> None:
        self.network = network
        self.node = network.gateway
        # (t, vip, hostname)
        self.switch_log: list[tuple[SimTime, IPv4Address, str]] = []

    def on_message(self, message: HandoffMessage, src: NodeId, radio_mac: MacAddr | None) -> None:
        if isinstance(message, SwitchRouteBToG):
            self.on_switch_route(message, src)
        else:
            logger.debug("gateway ignores %s from %s", message.VARIANT, src)

    def on_switch_route(self, message: SwitchRouteBToG, src: NodeId) -> None:
        tunnel = self.node.fwd.tunnel_table.get(message.ap_hostname)
        if tunnel is None:
            raise TopologyFault(f"no tunnel provisioned for AP hostname '{message.ap_hostname}'")
        self.node.fwd.set_route(host_net(message.floating_ip), NextHop.tunnel(tunnel))
        now = self.network.engine.now()
        self.switch_log.append((now, message.floating_ip, message.ap_hostname))
        logger.info("t=%d gateway: %s now via %s", now, message.floating_ip, tunnel)
        ap = self.network.ap_by_hostname[message.ap_hostname]
        self.network.send_control(
            self.node.id, SwitchRouteOk(message.floating_ip, message.ap_hostname), dst=ap.id
        )

    def last_switch(self, vip: IPv4Address, hostname: str, since: SimTime) -> SimTime | None:
        for t, v, h in reversed(self.switch_log):
            if t < since:
                break
            if v == vip and h == hostname:
                return t
        return None


def gateway_route_mismatch(network: Network) -> str | None:
    """Describe a gateway VIP route that does not lead to the primary radio's AP."""
    radio = network.mobile.primary
    if radio.association is None:
        return None
    ap = network.ap_by_bssid[radio.association]
    hop = network.gateway.fwd.lookup(network.mobile.vip)
    via = hop.name if hop is not None else None
    if via == ap.tunnel_id:
        return None
    return f"gateway sends {network.mobile.vip} via {via} but {radio.id} is on {ap.id}"


# --- edge AP -------------------------------------------------------------------

class ApAgent:
    def __init__(self, network: Network, ap: ApNode, commitment_timeout: SimTime) -> None:
        self.network = network
        self.ap = ap
        self.ledger = BandwidthLedger(
            network.engine, ap.id, ap.capacity_kbps, commitment_timeout, self._on_expire
        )
        self.offers_sent = 0
        self.denied = 0

    def on_message(self, message: HandoffMessage, src: NodeId, radio_mac: MacAddr | None) -> None:
        if isinstance(message, RequestRoute):
            self.on_request_route(message)
        elif isinstance(message, SwitchRouteMnToB):
            self.relay_switch_route(message)
        elif isinstance(message, SwitchRouteOk) and src == self.network.gateway.id:
            self.relay_switch_route_ok(message)
        else:
            logger.debug("%s ignores %s from %s", self.ap.id, message.VARIANT, src)

    def _preinstall(self, vip: IPv4Address, mac: MacAddr) -> None:
        self.ap.fwd.set_arp(vip, mac, ArpOrigin.PREINSTALLED)
        self.ap.fwd.set_route(host_net(vip), NextHop.interface(AP_RADIO_IFACE))

    def on_request_route(self, message: RequestRoute) -> None:
        vip, mac = message.floating_ip, message.radio2_mac
        if mac not in self.ap.clients:
            logger.debug("%s: REQUEST-ROUTE from unassociated %s dropped", self.ap.id, mac)
            return
        c = self.ledger.refresh(vip)
        if c is not None:
            c.mac = mac
        else:
            c = self.ledger.commit(vip, message.requested_bandwidth, mac)
            if c is None:
                # Denied: no reply, the MN will give up on this AP.
                self.denied += 1
                logger.info(
                    "%s: denied %d kbps for %s (effective %d)",
                    self.ap.id, message.requested_bandwidth, vip, self.ledger.effective,
                )
                return
        self._preinstall(vip, mac)
        self.offers_sent += 1
        offer = OfferRoute(c.offered, self.ap.ip, self.ap.mac)
        self.network.send_control(self.ap.id, offer, dst=self.network.mobile.id, to_mac=mac)

    def relay_switch_route(self, message: SwitchRouteMnToB) -> None:
        if not self.ledger.holds(message.floating_ip):
            logger.info("%s: SWITCH-ROUTE for %s without commitment dropped", self.ap.id,
                        message.floating_ip)
            return
        # A repeated SWITCH-ROUTE keeps the commitment alive.
        self.ledger.refresh(message.floating_ip)
        relay = SwitchRouteBToG(message.floating_ip, self.ap.hostname)
        self.network.send_control(self.ap.id, relay, dst=self.network.gateway.id)

    def relay_switch_route_ok(self, message: SwitchRouteOk) -> None:
        vip = message.floating_ip
        c = self.ledger.commitments.get(vip)
        if c is not None and c.mac in self.ap.clients:
            self.ledger.consume(vip)
            mac = c.mac
        else:
            mac = self.ledger.in_use.get(vip, (0, None))[1]
            if mac is None or mac not in self.ap.clients:
                logger.info("%s: SWITCH-ROUTE-OK for %s but the MN is gone", self.ap.id, vip)
                return
        self.network.send_control(self.ap.id, message, dst=self.network.mobile.id, to_mac=mac)

    def _on_expire(self, c: Commitment) -> None:
        fwd = self.ap.fwd
        entry = fwd.arp_cache.get(c.vip)
        if entry is not None and entry.mac == c.mac:
            fwd.remove_arp(c.vip)
            fwd.remove_route(host_net(c.vip))

    def on_dissociated(self, ap: ApNode, mn: MobileNode, radio: Radio) -> None:
        if ap is self.ap:
            self.ledger.release_in_use(mn.vip, radio.mac)


# --- mobile node ---------------------------------------------------------------

class MnPhase(str, Enum):
    IDLE = "idle"
    SCANNING = "scanning"
    ASSOCIATING = "associating"
    AWAIT_OFFER = "await-offer"
    AWAIT_SWITCH_OK = "await-switch-ok"
    FINALIZING = "finalizing"
    RECLAIMING = "reclaiming"


@dataclass(slots=True)
class MnHandoffState:
    phase: MnPhase = MnPhase.IDLE
    candidate_bssid: str | None = None
    retry_count: int = 0
    retry_timer: EventId | None = None
    # SWITCH-ROUTE sends in the current phase; phase changes between candidate and old AP
    switch_attempts: int = 0
    switch_rounds: int = 0
    record: HandoffRecord | None = None
    scan_index: int = 0
    holddown: dict[str, SimTime] = field(default_factory=dict)


def install_ap_route(mn: MobileNode, radio: Radio, offer: OfferRoute) -> None:
    """CREATE-ARP-ENTRY(B) and CREATE-ROUTE(B) on the MN."""
    mn.fwd.set_arp(offer.ap_ip, offer.ap_mac, ArpOrigin.PREINSTALLED)
    mn.fwd.set_route(host_net(offer.ap_ip), NextHop.interface(radio.id))


class MobileAgent:
    """Dual-radio make-before-break handoff agent on the MN."""

    scheme = "dual"

    def __init__(self, network: Network, gateway: GatewayAgent, cfg: HandoffConfig) -> None:
        self.network = network
        self.engine = network.engine
        self.mn = network.mobile
        self.gateway = gateway
        self.cfg = cfg
        self.state = MnHandoffState()
        self.history = ScanHistory(cfg.history_depth, cfg.ewma_alpha, ms(cfg.history_max_age_ms))
        self.records: list[HandoffRecord] = []
        self.violations: list[str] = []
        self._stopped = False
        self._dwell = ms(cfg.scan_dwell_ms)
        self._supervision = ms(cfg.supervision_interval_ms)

    # -- lifecycle --

    def start(self) -> None:
        self.state.phase = MnPhase.SCANNING
        self.engine.schedule(EventKind.SCAN, self.mn.id, 0, self._scan_tick)
        self.engine.schedule(EventKind.MOBILITY, self.mn.id, self._supervision, self._supervise)

    def stop(self) -> None:
        """Stop scanning and supervision. A handoff in flight is left to finish."""
        if self.state.phase is MnPhase.SCANNING:
            self.state.phase = MnPhase.IDLE
        self._stopped = True

    @property
    def stopped(self) -> bool:
        return self._stopped

    @property
    def in_flight(self) -> bool:
        return self.state.record is not None

    def _ap(self, radio: Radio) -> ApNode | None:
        return self.network.ap_by_bssid[radio.association] if radio.association else None

    # -- scanning and decision --

    def _scan_tick(self) -> None:
        if self.stopped:
            return
        primary = self.mn.primary
        current = self._ap(primary)
        now = self.engine.now()
        if current is not None:
            lq = self.network.sample(current)
            if lq is not None:
                self.history.add(now, current.bssid, lq)
        secondary = self.mn.secondary
        if self.state.phase is MnPhase.SCANNING and secondary.association is None:
            channels = self.cfg.scan_channels
            channel = channels[self.state.scan_index % len(channels)]
            self.state.scan_index += 1
            self.network.scan_step(secondary, channel, self.history)
            self._evaluate(current)
        self.engine.schedule(EventKind.SCAN, self.mn.id, self._dwell, self._scan_tick)

    def _held_down(self, now: SimTime) -> set[str]:
        return {b for b, until in self.state.holddown.items() if until > now}

    def _evaluate(self, current: ApNode | None) -> None:
        now = self.engine.now()
        if current is None:
            # Recovery: hold-downs are lifted, but the AP must still be reachable.
            exclude = {ap.bssid for ap in self.network.edge_aps if not self.network.in_range(ap)}
        else:
            exclude = self._held_down(now)
        target = find_better_ap(
            self.history,
            current.bssid if current else None,
            threshold_dbm=self.cfg.lq_threshold_dbm,
            margin_db=self.cfg.lq_margin_db,
            now=now,
            exclude=exclude,
        )
        if target is not None:
            self.begin_handoff(target)

    # -- the handoff --

    def begin_handoff(self, bssid: str) -> None:
        if self.state.phase is not MnPhase.SCANNING:
            raise RuntimeError(f"handoff already in flight ({self.state.phase.value})")
        new_ap = self.network.ap_by_bssid[bssid]
        old_ap = self._ap(self.mn.primary)
        record = HandoffRecord(
            self.mn.id, old_ap.id if old_ap else None, new_ap.id, self.engine.now(), self.scheme
        )
        st = self.state
        st.phase, st.candidate_bssid, st.retry_count, st.record = (
            MnPhase.ASSOCIATING, bssid, 0, record
        )
        logger.info(
            "t=%d %s: handoff %s -> %s triggered",
            record.t_trigger, self.mn.id, record.old_ap, record.new_ap,
        )
        self.network.associate(self.mn.secondary, bssid, self._on_associated)

    def _on_associated(self, ok: bool) -> None:
        st = self.state
        if st.phase is not MnPhase.ASSOCIATING:
            return
        if not ok:
            self.abandon("association-failed")
            return
        st.record.t_associated = self.engine.now()
        st.phase = MnPhase.AWAIT_OFFER
        self._send_request_route()

    def _send_request_route(self) -> None:
        secondary = self.mn.secondary
        if secondary.association is None:
            self.abandon("secondary-link-lost")
            return
        msg = RequestRoute(self.cfg.requested_bandwidth_kbps, secondary.mac, self.mn.vip)
        self.network.send_control(self.mn.id, msg, radio=secondary, broadcast=True)
        self.state.retry_timer = self.engine.schedule(
            EventKind.TIMER, self.mn.id, ms(self.cfg.request_retry_timeout_ms), self._on_retry
        )

    def _on_retry(self) -> None:
        st = self.state
        if st.phase is not MnPhase.AWAIT_OFFER:
            return
        if st.retry_count >= self.cfg.max_retries:
            self.abandon("no-offer")
            return
        st.retry_count += 1
        st.record.retries = st.retry_count
        logger.debug("%s: REQUEST-ROUTE retry %d", self.mn.id, st.retry_count)
        self._send_request_route()

    def on_message(self, message: HandoffMessage, src: NodeId, radio_mac: MacAddr | None) -> None:
        if isinstance(message, OfferRoute):
            self.on_offer(message, radio_mac)
        elif isinstance(message, SwitchRouteOk):
            self.on_switch_ok(message, radio_mac)

    def on_offer(self, message: OfferRoute, radio_mac: MacAddr | None) -> None:
        st = self.state
        secondary = self.mn.secondary
        if (
            st.phase is not MnPhase.AWAIT_OFFER
            or radio_mac != secondary.mac
            or message.ap_mac != st.candidate_bssid
        ):
            logger.debug("%s: late or duplicate OFFER-ROUTE ignored", self.mn.id)
            return
        self.engine.cancel(st.retry_timer)
        if message.available_bandwidth < self.cfg.requested_bandwidth_kbps:
            self.abandon("insufficient-bandwidth")
            return
        install_ap_route(self.mn, secondary, message)
        if not self._switch_via(MnPhase.AWAIT_SWITCH_OK):
            self.abandon("secondary-link-lost")

    def _switch_via(self, phase: MnPhase) -> bool:
        """Send SWITCH-ROUTE through the candidate (AWAIT_SWITCH_OK) or the old AP (RECLAIMING).

        Returns False, sending nothing, when that radio has no usable link.
        """
        st = self.state
        radio = self.mn.secondary if phase is MnPhase.AWAIT_SWITCH_OK else self.mn.primary
        ap = self._ap(radio)
        if ap is None or not self.network.link_up(radio, ap):
            return False
        if st.phase is not phase:
            st.phase = phase
            st.switch_attempts = 0
            st.switch_rounds += 1
        st.switch_attempts += 1
        self.network.send_control(self.mn.id, SwitchRouteMnToB(self.mn.vip), dst=ap.id, radio=radio)
        st.retry_timer = self.engine.schedule(
            EventKind.TIMER, self.mn.id, ms(self.cfg.switch_ok_timeout_ms), self._on_ok_timeout
        )
        return True

    def on_switch_ok(self, message: SwitchRouteOk, radio_mac: MacAddr | None) -> None:
        st = self.state
        if st.phase is MnPhase.AWAIT_SWITCH_OK:
            candidate = self.network.ap_by_bssid[st.candidate_bssid]
            if message.ap_hostname == candidate.hostname and radio_mac == self.mn.secondary.mac:
                self.engine.cancel(st.retry_timer)
                self.finalize()
                return
        elif st.phase is MnPhase.RECLAIMING:
            old = self._ap(self.mn.primary)
            if (
                old is not None
                and message.ap_hostname == old.hostname
                and radio_mac == self.mn.primary.mac
            ):
                self.engine.cancel(st.retry_timer)
                self.abandon("switch-ok-timeout")
                return
        logger.debug("%s: SWITCH-ROUTE-OK in %s ignored", self.mn.id, st.phase.value)

    def finalize(self) -> None:
        st = self.state
        record = st.record
        new_ap = self.network.ap_by_bssid[st.candidate_bssid]
        old_radio, new_radio = self.mn.primary, self.mn.secondary
        now = self.engine.now()
        st.phase = MnPhase.FINALIZING
        self.mn.fwd.set_route(DEFAULT_ROUTE, NextHop.interface(new_radio.id, gateway=new_ap.ip))
        record.t_default_route_switched = now
        record.t_route_switched_gateway = self.gateway.last_switch(
            self.mn.vip, new_ap.hostname, record.t_associated
        )
        old_radio.role, new_radio.role = RadioRole.SECONDARY, RadioRole.PRIMARY
        self.network.dissociate(
            old_radio, delay=self.network.timing.dissociation, on_done=self._on_old_released
        )

    def _on_old_released(self) -> None:
        st = self.state
        record = st.record
        record.t_dissociated = self.engine.now()
        record.outcome = "completed"
        self.records.append(record)
        logger.info(
            "t=%d %s: handoff %s -> %s completed in %.3f ms (%d retries)",
            record.t_dissociated, self.mn.id, record.old_ap, record.new_ap,
            record.handoff_latency() / 1000, record.retries,
        )
        self._reset()

    def _on_ok_timeout(self) -> None:
        """No SWITCH-ROUTE-OK: the gateway may tunnel the VIP to either AP.

        The first miss through the candidate moves on to reclaiming the route through
        the old AP; every later phase gets ``max_retries`` resends before switching
        sides. No radio is released until one SWITCH-ROUTE-OK arrives, unless both
        links are gone or a side with no partner runs out of resends.
        """
        st = self.state
        if st.phase not in (MnPhase.AWAIT_SWITCH_OK, MnPhase.RECLAIMING):
            return
        limit = 1 if st.switch_rounds == 1 else self.cfg.max_retries + 1
        if st.switch_attempts < limit and self._switch_via(st.phase):
            return
        other = (
            MnPhase.RECLAIMING if st.phase is MnPhase.AWAIT_SWITCH_OK else MnPhase.AWAIT_SWITCH_OK
        )
        if self._switch_via(other):
            return
        if st.switch_attempts <= self.cfg.max_retries and self._switch_via(st.phase):
            return
        self.abandon("switch-ok-timeout")

    def abandon(self, reason: str) -> None:
        st = self.state
        self.engine.cancel(st.retry_timer)
        now = self.engine.now()
        record = st.record
        record.outcome = "abandoned"
        record.reason = reason
        self.records.append(record)
        # A lost SWITCH-ROUTE-OK says nothing against the candidate itself.
        if st.candidate_bssid is not None and reason != "switch-ok-timeout":
            st.holddown[st.candidate_bssid] = now + ms(self.cfg.abandon_holddown_ms)
        logger.warning(
            "t=%d %s: handoff to %s abandoned (%s)", now, self.mn.id, record.new_ap, reason
        )
        mismatch = gateway_route_mismatch(self.network)
        if mismatch is not None:
            self.violations.append(f"t={now}: after abandoning: {mismatch}")
        secondary = self.mn.secondary
        if secondary.association is not None:
            self.network.dissociate(secondary, delay=self.network.timing.dissociation)
        self._reset()

    def _reset(self) -> None:
        st = self.state
        st.phase = MnPhase.IDLE if self.stopped else MnPhase.SCANNING
        st.candidate_bssid = None
        st.retry_timer = None
        st.record = None
        st.retry_count = 0
        st.switch_attempts = 0
        st.switch_rounds = 0

    # -- supervision --

    def _supervise(self) -> None:
        if self.stopped:
            return
        now = self.engine.now()
        primary = self.mn.primary
        current = self._ap(primary)
        if current is not None and not self.network.in_range(current):
            logger.warning("t=%d %s: primary link to %s lost", now, self.mn.id, current.id)
            self.network.dissociate(primary)
            current = None
        if (
            current is None
            and self.state.phase is MnPhase.SCANNING
            and self.mn.secondary.association is None
        ):
            self._evaluate(None)
        self._sample_invariants(now)
        self.engine.schedule(EventKind.MOBILITY, self.mn.id, self._supervision, self._supervise)

    def _sample_invariants(self, now: SimTime) -> None:
        primaries = sum(r.role is RadioRole.PRIMARY for r in self.mn.radios)
        if primaries != 1:
            self.violations.append(f"t={now}: {primaries} primary radios")
        covered = any(self.network.in_range(ap) for ap in self.network.edge_aps)
        associated = any(r.association for r in self.mn.radios)
        if covered and not associated:
            self.violations.append(f"t={now}: in coverage with no radio associated")
