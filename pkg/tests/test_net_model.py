"""Propagation, forwarding decisions, association and the control channel."""

from ipaddress import IPv4Address, ip_network

import pytest

from dual_radio_handoff.config import PropagationParams
from dual_radio_handoff.messages import RequestRoute
from dual_radio_handoff.net_model import (
    DEFAULT_ROUTE,
    ActionKind,
    ArpOrigin,
    DataPacket,
    DataPlane,
    Direction,
    DropReason,
    ForwardingState,
    Gateway,
    MobileNode,
    Network,
    NextHop,
    ShadowingField,
    compute_rssi,
    forward_packet,
    host_net,
    link_quality,
    mean_rssi,
)
from dual_radio_handoff.sim_engine import Engine, RandomStreams

VIP = IPv4Address("172.16.0.10")
G_IP = IPv4Address("10.0.0.1")
A_IP = IPv4Address("10.0.0.11")
A_MAC = "02:00:00:00:0a:01"
B_MAC = "02:00:00:00:0a:02"
C_MAC = "02:00:00:00:0a:03"


def _network(cfg, pos=(150.0, 0.0)):
    return Network(Engine(), RandomStreams(0), cfg, lambda t: pos)


# --- propagation ---------------------------------------------------------------

def test_mean_rssi_log_distance():
    p = PropagationParams()
    assert mean_rssi((0, 0), (1, 0), p) == pytest.approx(-20.0)
    assert mean_rssi((0, 0), (10, 0), p) == pytest.approx(-50.0)
    assert mean_rssi((0, 0), (0.2, 0), p) == pytest.approx(-20.0)


def test_compute_rssi_without_shadowing_ignores_rng():
    p = PropagationParams()
    assert compute_rssi((0, 0), (10, 0), p, rng=object()) == pytest.approx(-50.0)


def test_link_quality_snr():
    lq = link_quality(-60.0, PropagationParams())
    assert lq.snr_db == pytest.approx(35.0)
    assert lq.lq_score == -60.0


def test_shadowing_independent_of_query_order():
    forward = ShadowingField(RandomStreams(3), 2.0, 10_000)
    backward = ShadowingField(RandomStreams(3), 2.0, 10_000)
    times = [0, 10_000, 250_000, 990_000]
    a = [forward.offset(A_MAC, t) for t in times]
    b = [backward.offset(A_MAC, t) for t in reversed(times)][::-1]
    assert a == b
    assert forward.offset(A_MAC, 5_000) == forward.offset(A_MAC, 0)


def test_shadowing_off_when_sigma_zero():
    assert ShadowingField(RandomStreams(3), 0.0, 10_000).offset(A_MAC, 123) == 0.0


def test_shadowing_trims_old_slots_without_changing_values():
    full = ShadowingField(RandomStreams(3), 2.0, 10_000)
    trimmed = ShadowingField(RandomStreams(3), 2.0, 10_000, keep_us=1_000_000)
    times = range(0, 30_000_000, 10_000)
    assert [trimmed.offset(A_MAC, t) for t in times] == [full.offset(A_MAC, t) for t in times]
    assert trimmed.retained(A_MAC) < full.retained(A_MAC) // 10
    assert trimmed.offset(A_MAC, 29_000_000) == full.offset(A_MAC, 29_000_000)
    with pytest.raises(ValueError, match="discarded"):
        trimmed.offset(A_MAC, 0)


# --- forwarding state ----------------------------------------------------------

def test_lookup_is_longest_prefix():
    fwd = ForwardingState()
    fwd.set_route(DEFAULT_ROUTE, NextHop.interface("wlan0", gateway=A_IP))
    fwd.set_route(ip_network("10.0.0.0/24"), NextHop.backhaul())
    fwd.set_route(host_net(VIP), NextHop.tunnel("gre-ap-a"))
    assert fwd.lookup(VIP).name == "gre-ap-a"
    assert fwd.lookup(G_IP).name == "backhaul"
    assert fwd.lookup(IPv4Address("8.8.8.8")).gateway == A_IP


def test_purge_and_references():
    fwd = ForwardingState()
    fwd.set_route(host_net(VIP), NextHop.interface("wlan0"))
    fwd.set_route(ip_network("10.0.0.0/24"), NextHop.backhaul())
    fwd.set_arp(IPv4Address("192.168.77.2"), "02:00:00:00:77:01", ArpOrigin.LEARNED)
    assert fwd.references({VIP}, set())
    assert fwd.purge({VIP}, {"02:00:00:00:77:01"}) == 2
    assert not fwd.references({VIP}, {"02:00:00:00:77:01"})
    assert ip_network("10.0.0.0/24") in fwd.route_table


# --- forward_packet ------------------------------------------------------------

def _mn_with_default_route():
    mn = MobileNode(id="MN", vip=VIP, radios=[])
    mn.fwd.snat_vip = VIP
    mn.fwd.set_route(DEFAULT_ROUTE, NextHop.interface("MN.RADIO1", gateway=A_IP))
    return mn


def test_outbound_is_snatted_and_arp_resolved_on_demand():
    mn = _mn_with_default_route()
    pkt = DataPacket(IPv4Address("192.168.77.2"), G_IP, 1, Direction.OUTBOUND)
    action = forward_packet(mn, pkt, resolver=lambda node, iface, ip: A_MAC)
    assert action.kind is ActionKind.EMIT
    assert action.packet.src_ip == VIP
    assert action.mac == A_MAC
    assert action.arp_resolved is True


def test_missing_arp_without_resolver_drops():
    mn = _mn_with_default_route()
    pkt = DataPacket(IPv4Address("192.168.77.2"), G_IP, 1, Direction.OUTBOUND)
    action = forward_packet(mn, pkt)
    assert action.kind is ActionKind.DROP
    assert action.reason is DropReason.NO_ARP


def test_no_route_and_foreign_tunnel_drop():
    gw = Gateway(id="G", ip=G_IP)
    pkt = DataPacket(G_IP, VIP, 1, Direction.INBOUND)
    assert forward_packet(gw, pkt).reason is DropReason.NO_ROUTE
    wrapped = DataPacket(G_IP, VIP, 1, Direction.INBOUND, encapsulation="gre-ap-a")
    assert forward_packet(gw, wrapped).reason is DropReason.NO_ROUTE


def test_local_delivery():
    gw = Gateway(id="G", ip=G_IP)
    gw.local_ips.add(G_IP)
    pkt = DataPacket(VIP, G_IP, 1, Direction.OUTBOUND)
    assert forward_packet(gw, pkt).kind is ActionKind.DELIVER_LOCAL


# --- network construction and association --------------------------------------

def test_network_addresses_and_tunnels(fig1):
    net = _network(fig1)
    a, b, c = net.aps["A"], net.aps["B"], net.aps["C"]
    assert (a.ip, a.mac, a.tunnel_id) == (A_IP, A_MAC, "gre-ap-a")
    assert b.bssid == B_MAC
    assert c.role == "core"
    assert net.tunnel_count() == 2
    assert net.gateway.fwd.tunnel_table == {"ap-a": "gre-ap-a", "ap-b": "gre-ap-b"}
    assert a.hops_to_gateway == 2


def test_attach_initial_picks_strongest(fig1):
    net = _network(fig1)
    ap = net.attach_initial()
    assert ap.id == "A"
    mn = net.mobile
    assert mn.primary.association == A_MAC
    assert mn.secondary.association is None
    assert net.gateway.fwd.lookup(VIP).name == "gre-ap-a"
    assert mn.fwd.lookup(G_IP).gateway == A_IP


def test_attach_initial_out_of_coverage(fig1):
    net = _network(fig1, pos=(300.0, 400.0))
    assert net.attach_initial() is None


def test_associate_completes_after_switch_and_association(fig1):
    net = _network(fig1, pos=(300.0, 0.0))
    done = []
    net.associate(net.mobile.secondary, B_MAC, done.append)
    net.engine.run_until(19_999)
    assert done == []
    net.engine.run_until(20_000)
    assert done == [True]
    assert net.mobile.secondary.mac in net.aps["B"].clients


def test_associate_out_of_range_fails(fig1):
    net = _network(fig1, pos=(150.0, 0.0))
    done = []
    net.associate(net.mobile.secondary, B_MAC, done.append)
    net.engine.run_until(50_000)
    assert done == [False]
    assert net.mobile.secondary.association is None


def test_associate_with_core_ap_rejected(fig1):
    net = _network(fig1)
    with pytest.raises(ValueError, match="not an edge AP"):
        net.associate(net.mobile.secondary, C_MAC, lambda ok: None)


def test_dissociate_cleans_both_ends(fig1):
    net = _network(fig1)
    net.attach_initial()
    heard = []
    net.dissociation_listeners.append(lambda ap, mn, radio: heard.append((ap.id, radio.id)))
    net.dissociate(net.mobile.primary)
    a = net.aps["A"]
    assert not a.fwd.references({VIP}, net.mobile.macs)
    assert A_IP not in net.mobile.fwd.arp_cache
    assert net.cleanup_log == [(0, "A", "MN.RADIO1", True)]
    assert heard == [("A", "MN.RADIO1")]


def test_only_secondary_scans(fig1):
    net = _network(fig1, pos=(300.0, 0.0))
    with pytest.raises(ValueError, match="primary"):
        net.scan_step(net.mobile.primary, 1)
    seen = net.scan_step(net.mobile.secondary, 6)
    assert [bssid for bssid, _ in seen] == [B_MAC]
    assert net.scan_step(net.mobile.secondary, 11) == []


# --- control channel -----------------------------------------------------------

class _Recorder:
    def __init__(self):
        self.got = []

    def on_message(self, message, src, radio_mac):
        self.got.append((message, src, radio_mac))


def test_broadcast_goes_to_associated_ap_and_is_traced(fig1):
    net = _network(fig1)
    net.attach_initial()
    rec = _Recorder()
    net.agents["A"] = rec
    radio = net.mobile.primary
    msg = RequestRoute(2000, net.mobile.secondary.mac, VIP)
    net.send_control("MN", msg, radio=radio, broadcast=True)
    assert net.control_trace[0].startswith("t=0 MN.RADIO1->* REQUEST-ROUTE {")
    net.engine.run_until(4_499)
    assert rec.got == []
    net.engine.run_until(4_500)
    assert rec.got == [(msg, "MN", radio.mac)]


def test_unassociated_radio_cannot_send(fig1):
    net = _network(fig1)
    with pytest.raises(ValueError, match="not associated"):
        net.send_control(
            "MN", RequestRoute(1, "x", VIP), radio=net.mobile.secondary, broadcast=True
        )


# --- data plane ----------------------------------------------------------------

def test_echo_round_trip_takes_six_ms(fig1):
    net = _network(fig1)
    net.attach_initial()
    arrivals = []

    def on_local(node, packet):
        arrivals.append((net.engine.now(), node.id, packet.src_ip))
        if node is net.gateway:
            plane.inject(node, DataPacket(G_IP, packet.src_ip, packet.payload_id,
                                          Direction.INBOUND, kind="reply"))

    plane = DataPlane(net, on_local)
    radio = net.mobile.primary
    plane.inject(net.mobile, DataPacket(radio.private_ip, G_IP, 0, Direction.OUTBOUND))
    net.engine.run_until(10_000)
    assert arrivals == [(3_000, "G", VIP), (6_000, "MN", G_IP)]
    assert plane.drops == []


def test_reply_after_dissociation_dropped_at_old_ap(fig1):
    net = _network(fig1)
    net.attach_initial()
    plane = DataPlane(net, lambda node, packet: None)
    net.dissociate(net.mobile.primary)
    plane.inject(net.gateway, DataPacket(G_IP, VIP, 7, Direction.INBOUND, kind="reply"))
    net.engine.run_until(10_000)
    assert plane.drops == [(2_000, 7, "reply", "A", "no-route")]


def test_reassociating_same_bssid_is_immediate_success(fig1):
    net = _network(fig1)
    net.attach_initial()
    done = []
    net.associate(net.mobile.primary, A_MAC, done.append)
    net.engine.run_until(0)
    assert done == [True]


def test_second_dissociate_is_noop(fig1):
    net = _network(fig1)
    net.attach_initial()
    net.dissociate(net.mobile.primary)
    net.dissociate(net.mobile.primary)
    assert len(net.cleanup_log) == 1


def test_certain_broadcast_loss_is_silent(fig1):
    net = _network(fig1.with_overrides(channel={"p_bcast": 1.0}))
    net.attach_initial()
    rec = _Recorder()
    net.agents["A"] = rec
    net.send_control(
        "MN", RequestRoute(2000, "x", VIP), radio=net.mobile.primary, broadcast=True
    )
    net.engine.run_until(100_000)
    assert rec.got == []
    assert (net.control_sent, net.control_lost) == (1, 1)
    assert len(net.control_trace) == 1
