"""Single-radio break-before-make handoff, the comparison baseline.

The MN has one usable radio. When its link quality falls under the threshold it
dissociates, sweeps every scan channel, associates with the best AP it heard and then
runs the same REQUEST-ROUTE / SWITCH-ROUTE exchange as the dual-radio scheme. The
data path is dead from the dissociation until the new default route is in place.
"""

from __future__ import annotations

import dataclasses
import logging
from enum import Enum

from .agents import GatewayAgent, HandoffRecord, ScanHistory, install_ap_route
from .config import HandoffConfig
from .messages import HandoffMessage, OfferRoute, RequestRoute, SwitchRouteMnToB, SwitchRouteOk
from .net_model import DEFAULT_ROUTE, ApNode, LinkQuality, MacAddr, Network, NextHop, NodeId
from .sim_engine import EventId, EventKind, SimTime, ms

logger = logging.getLogger(__name__)


class BaselinePhase(str, Enum):
    IDLE = "idle"
    CONNECTED = "connected"
    SWEEPING = "sweeping"
    ASSOCIATING = "associating"
    AWAIT_OFFER = "await-offer"
    AWAIT_SWITCH_OK = "await-switch-ok"


class SingleRadioAgent:
    scheme = "baseline"

    def __init__(self, network: Network, gateway: GatewayAgent, cfg: HandoffConfig) -> None:
        self.network = network
        self.engine = network.engine
        self.mn = network.mobile
        self.radio = self.mn.primary
        self.gateway = gateway
        self.cfg = cfg
        self.phase = BaselinePhase.IDLE
        self.history = ScanHistory(cfg.history_depth, cfg.ewma_alpha, ms(cfg.history_max_age_ms))
        self.records: list[HandoffRecord] = []
        self.violations: list[str] = []
        self.record: HandoffRecord | None = None
        self.target: ApNode | None = None
        self.retry_count = 0
        self._timer: EventId | None = None
        self._sweep: dict[str, LinkQuality] = {}
        self._sweep_index = 0
        self._holddown_until: SimTime = 0
        self._stopped = False
        self._dwell = ms(cfg.scan_dwell_ms)

    def start(self) -> None:
        if self.radio.association is None:
            self._start_sweep()
        else:
            self.phase = BaselinePhase.CONNECTED
        self.engine.schedule(EventKind.SCAN, self.mn.id, 0, self._tick)

    def stop(self) -> None:
        self._stopped = True
        if self.phase in (BaselinePhase.CONNECTED, BaselinePhase.SWEEPING):
            self.phase = BaselinePhase.IDLE

    @property
    def stopped(self) -> bool:
        return self._stopped

    @property
    def in_flight(self) -> bool:
        return self.record is not None

    def _current(self) -> ApNode | None:
        bssid = self.radio.association
        return self.network.ap_by_bssid[bssid] if bssid else None

    # -- monitoring and the sweep --

    def _tick(self) -> None:
        if self._stopped:
            return
        if self.phase is BaselinePhase.CONNECTED:
            self._monitor()
        elif self.phase is BaselinePhase.SWEEPING:
            self._sweep_step()
        self.engine.schedule(EventKind.SCAN, self.mn.id, self._dwell, self._tick)

    def _monitor(self) -> None:
        now = self.engine.now()
        current = self._current()
        if current is None or not self.network.in_range(current):
            self._trigger(current, "link-lost")
            return
        lq = self.network.sample(current)
        if lq is not None:
            self.history.add(now, current.bssid, lq)
        smoothed = self.history.smoothed(current.bssid, now)
        if (
            smoothed is not None
            and smoothed < self.cfg.lq_threshold_dbm
            and now >= self._holddown_until
        ):
            self._trigger(current, "lq-below-threshold")

    def _trigger(self, current: ApNode | None, why: str) -> None:
        now = self.engine.now()
        self.record = HandoffRecord(
            self.mn.id, current.id if current else None, "", now, self.scheme
        )
        logger.info("t=%d %s: baseline handoff triggered (%s)", now, self.mn.id, why)
        self.phase = BaselinePhase.SWEEPING
        self.network.dissociate(
            self.radio, delay=self.network.timing.dissociation, on_done=self._on_released
        )
        self._start_sweep()

    def _on_released(self) -> None:
        if self.record is not None and self.record.t_dissociated is None:
            self.record.t_dissociated = self.engine.now()

    def _start_sweep(self) -> None:
        self.phase = BaselinePhase.SWEEPING
        self._sweep = {}
        self._sweep_index = 0

    def _sweep_step(self) -> None:
        if self.radio.association is not None:
            # Dissociation still in progress.
            return
        channels = self.cfg.scan_channels
        channel = channels[self._sweep_index]
        self._sweep_index += 1
        for bssid, lq in self.network.scan_step(self.radio, channel, allow_primary=True):
            best = self._sweep.get(bssid)
            if best is None or lq.lq_score > best.lq_score:
                self._sweep[bssid] = lq
        if self._sweep_index < len(channels):
            return
        if not self._sweep:
            logger.debug("%s: sweep found no AP, rescanning", self.mn.id)
            self._start_sweep()
            return
        bssid = max(self._sweep, key=lambda b: (self._sweep[b].lq_score, b))
        self.target = self.network.ap_by_bssid[bssid]
        if self.record is None:
            self.record = HandoffRecord(self.mn.id, None, "", self.engine.now(), self.scheme)
        self.record.new_ap = self.target.id
        self.phase = BaselinePhase.ASSOCIATING
        self.network.associate(self.radio, bssid, self._on_associated)

    # -- the route exchange --

    def _on_associated(self, ok: bool) -> None:
        if self.phase is not BaselinePhase.ASSOCIATING:
            return
        if not ok:
            self._restart("association-failed")
            return
        self.record.t_associated = self.engine.now()
        self.retry_count = 0
        self.phase = BaselinePhase.AWAIT_OFFER
        self._send_request_route()

    def _send_request_route(self) -> None:
        if self.radio.association is None:
            self._restart("link-lost")
            return
        msg = RequestRoute(self.cfg.requested_bandwidth_kbps, self.radio.mac, self.mn.vip)
        self.network.send_control(self.mn.id, msg, radio=self.radio, broadcast=True)
        self._timer = self.engine.schedule(
            EventKind.TIMER, self.mn.id, ms(self.cfg.request_retry_timeout_ms), self._on_retry
        )

    def _on_retry(self) -> None:
        if self.phase is not BaselinePhase.AWAIT_OFFER:
            return
        if self.retry_count >= self.cfg.max_retries:
            self._restart("no-offer")
            return
        self.retry_count += 1
        self.record.retries += 1
        self._send_request_route()

    def on_message(self, message: HandoffMessage, src: NodeId, radio_mac: MacAddr | None) -> None:
        if isinstance(message, OfferRoute):
            self._on_offer(message)
        elif isinstance(message, SwitchRouteOk):
            self._on_switch_ok(message)

    def _on_offer(self, message: OfferRoute) -> None:
        if self.phase is not BaselinePhase.AWAIT_OFFER or message.ap_mac != self.target.bssid:
            return
        self.engine.cancel(self._timer)
        if message.available_bandwidth < self.cfg.requested_bandwidth_kbps:
            self._restart("insufficient-bandwidth")
            return
        install_ap_route(self.mn, self.radio, message)
        self.network.send_control(
            self.mn.id, SwitchRouteMnToB(self.mn.vip), dst=self.target.id, radio=self.radio
        )
        self.phase = BaselinePhase.AWAIT_SWITCH_OK
        self._timer = self.engine.schedule(
            EventKind.TIMER, self.mn.id, ms(self.cfg.switch_ok_timeout_ms), self._on_ok_timeout
        )

    def _on_ok_timeout(self) -> None:
        if self.phase is BaselinePhase.AWAIT_SWITCH_OK:
            self._restart("switch-ok-timeout")

    def _on_switch_ok(self, message: SwitchRouteOk) -> None:
        if (
            self.phase is not BaselinePhase.AWAIT_SWITCH_OK
            or message.ap_hostname != self.target.hostname
        ):
            return
        self.engine.cancel(self._timer)
        now = self.engine.now()
        record = self.record
        self.mn.fwd.set_route(DEFAULT_ROUTE, NextHop.interface(self.radio.id, gateway=self.target.ip))
        record.t_default_route_switched = now
        record.t_route_switched_gateway = self.gateway.last_switch(
            self.mn.vip, self.target.hostname, record.t_associated
        )
        record.outcome = "reattached" if record.old_ap == record.new_ap else "completed"
        self.records.append(record)
        logger.info(
            "t=%d %s: baseline handoff %s -> %s %s after %.3f ms",
            now, self.mn.id, record.old_ap, record.new_ap, record.outcome,
            record.handoff_latency() / 1000,
        )
        self.record = None
        self.history.clear()
        self._holddown_until = now + ms(self.cfg.baseline_holddown_ms)
        self.phase = BaselinePhase.IDLE if self._stopped else BaselinePhase.CONNECTED

    def _restart(self, reason: str) -> None:
        """Give up on the chosen AP and sweep again; the radio stays unserved meanwhile."""
        self.engine.cancel(self._timer)
        logger.warning("t=%d %s: baseline attempt failed (%s)", self.engine.now(), self.mn.id,
                       reason)
        if self.radio.association is not None:
            self.network.dissociate(self.radio)
        if self.record is not None:
            self.records.append(
                dataclasses.replace(self.record, outcome="abandoned", reason=reason)
            )
            self.record.retries += 1
        self._start_sweep()
        if self._stopped:
            self.phase = BaselinePhase.IDLE
