"""End-to-end runs: handoff timing, failure paths, determinism, baseline, batches."""

import pytest

from dual_radio_handoff.config import ConfigError, load_config
from dual_radio_handoff.messages import (
    RequestRoute,
    SwitchRouteMnToB,
    SwitchRouteOk,
    parse_trace_line,
)
from dual_radio_handoff.net_model import NextHop, host_net
from dual_radio_handoff.scenario import (
    MobilityPath,
    build_network,
    check_run_invariants,
    run_batch,
    simulate,
)
from dual_radio_handoff.sim_engine import EventKind

# --- mobility ------------------------------------------------------------------

def test_path_moves_at_constant_speed_and_clamps():
    path = MobilityPath([(0.0, 0.0), (100.0, 0.0), (100.0, 50.0)], speed_kmph=36.0)
    assert path.length == 150.0
    assert path.position_at(0) == (0.0, 0.0)
    assert path.position_at(5_000_000) == pytest.approx((50.0, 0.0))
    assert path.position_at(12_000_000) == pytest.approx((100.0, 20.0))
    assert path.position_at(60_000_000) == (100.0, 50.0)


def test_single_waypoint_path_is_parked():
    path = MobilityPath([(150.0, 0.0)], speed_kmph=40.0)
    assert path.position_at(9_000_000) == (150.0, 0.0)


def test_path_rejects_bad_input():
    with pytest.raises(ConfigError):
        MobilityPath([], 40.0)
    with pytest.raises(ValueError):
        MobilityPath([(0.0, 0.0)], 40.0).position_at(-1)


# --- the dual-radio handoff ----------------------------------------------------

def _completed(run):
    return [r for r in run.agent.records if r.outcome == "completed"]


def test_single_crossing_hands_off_once_in_58_ms(crossing):
    run = simulate(crossing)
    done = _completed(run)
    assert len(done) == 1
    rec = done[0]
    assert (rec.old_ap, rec.new_ap, rec.retries) == ("A", "B", 0)
    assert 3_000_000 < rec.t_trigger < 4_000_000
    assert rec.t_associated - rec.t_trigger == 20_000
    assert rec.t_route_switched_gateway - rec.t_trigger == 42_000
    assert rec.t_default_route_switched - rec.t_trigger == 55_000
    assert rec.handoff_latency() == 58_000
    assert run.report.latencies_us == [58_000]
    assert run.report.lost == 0
    assert run.violations == []


def test_control_trace_of_one_handoff(crossing):
    run = simulate(crossing)
    steps = [parse_trace_line(line)[1:4] for line in run.trace]
    assert steps == [
        ("MN.RADIO2", "*", "REQUEST-ROUTE"),
        ("B", "MN.RADIO2", "OFFER-ROUTE"),
        ("MN.RADIO2", "B", "SWITCH-ROUTE-MN-TO-B"),
        ("B", "G", "SWITCH-ROUTE-B-TO-G"),
        ("G", "B", "SWITCH-ROUTE-OK"),
        ("B", "MN.RADIO2", "SWITCH-ROUTE-OK"),
    ]


def test_radio_roles_swap_after_handoff(crossing):
    run = simulate(crossing)
    mn = run.network.mobile
    assert mn.primary.id == "MN.RADIO2"
    assert mn.primary.association == run.network.aps["B"].bssid
    assert run.ap_agents["B"].ledger.in_use == {mn.vip: (2_000, mn.primary.mac)}
    assert run.ap_agents["A"].ledger.in_use == {}


def test_lost_request_route_costs_one_retry(crossing, drop_first):
    prepare = drop_first(lambda src, msg: isinstance(msg, RequestRoute))
    run = simulate(crossing, prepare=prepare)
    assert len(run.network.dropped_by_test) == 1
    rec = _completed(run)[0]
    assert rec.retries == 1
    assert rec.handoff_latency() == 83_000
    assert run.report.lost == 0


def test_lost_switch_ok_reclaims_then_retries(crossing, drop_first):
    prepare = drop_first(lambda src, msg: src == "G" and isinstance(msg, SwitchRouteOk))
    run = simulate(crossing, prepare=prepare)
    outcomes = [(r.outcome, r.reason) for r in run.agent.records]
    assert outcomes[0] == ("abandoned", "switch-ok-timeout")
    assert outcomes[-1] == ("completed", None)
    assert run.report.lost == 0
    assert all(not agent.ledger.commitments for agent in run.ap_agents.values())
    assert run.violations == []


def _gateway_ok(src, msg, dst):
    return src == "G" and isinstance(msg, SwitchRouteOk)


def test_lost_reclaim_is_resent_until_the_gateway_confirms(crossing, drop_matching):
    prepare = drop_matching(
        (_gateway_ok, 1),
        (lambda src, msg, dst: isinstance(msg, SwitchRouteMnToB), 2),
    )
    run = simulate(crossing, prepare=prepare)
    assert len(run.network.dropped_by_test) == 2
    records = run.agent.records
    assert (records[0].outcome, records[0].reason) == ("abandoned", "switch-ok-timeout")
    assert records[-1].outcome == "completed"
    # No hold-down after a lost confirmation: B is tried again right away.
    assert records[1].t_trigger - records[0].t_trigger < 1_000_000
    assert run.report.lost == 0
    assert run.violations == []
    assert run.gateway.node.fwd.lookup(run.network.mobile.vip).name == "gre-ap-b"


def test_unreachable_old_ap_falls_back_to_the_candidate(crossing, drop_matching):
    prepare = drop_matching(
        (_gateway_ok, 1),
        (lambda src, msg, dst: isinstance(msg, SwitchRouteMnToB) and dst == "A", None),
    )
    run = simulate(crossing, prepare=prepare)
    # One lost OK, then the first reclaim plus max_retries resends through A.
    assert len(run.network.dropped_by_test) == 1 + 6
    records = run.agent.records
    assert [(r.old_ap, r.new_ap, r.outcome) for r in records] == [("A", "B", "completed")]
    assert run.report.lost == 0
    assert run.violations == []


def test_invariant_checker_flags_gateway_pointing_elsewhere(parked):
    run = simulate(parked)
    assert check_run_invariants(run) == []
    vip = run.network.mobile.vip
    run.network.gateway.fwd.set_route(host_net(vip), NextHop.tunnel("gre-ap-b"))
    problems = check_run_invariants(run)
    assert any("gateway sends" in p and "gre-ap-b" in p for p in problems)


def test_recovery_ignores_holddown_but_not_range(parked):
    engine, network, _, _, agent = build_network(parked)
    agent.start()
    engine.run_until(50_000)
    mn = network.mobile
    a, b = network.aps["A"], network.aps["B"]
    network.dissociate(mn.primary)
    # B is out of range from under A; a stale loud sample must not win.
    agent.history.add(engine.now(), b.bssid, -40.0)
    agent.state.holddown[a.bssid] = 10**12
    engine.run_until(400_000)
    rec = agent.records[0]
    assert (rec.old_ap, rec.new_ap, rec.outcome) == (None, "A", "completed")
    assert mn.primary.association == a.bssid


def test_denied_admission_abandons_without_loss(crossing, edit_ap):
    short = crossing.with_overrides(mobility={"waypoints": [(290.0, 0.0), (350.0, 0.0)]})
    cfg = edit_ap(short, "B", path_capacity_kbps=0)
    run = simulate(cfg)
    records = run.agent.records
    assert len(records) >= 2
    assert {(r.outcome, r.reason) for r in records} == {("abandoned", "no-offer")}
    assert run.report.latencies_us == []
    assert run.ap_agents["B"].denied >= 1
    assert run.report.lost == 0
    assert run.violations == []


# --- data-plane loss accounting ------------------------------------------------

def test_dead_route_reports_no_route_then_no_arp(parked):
    def prepare(network):
        network.engine.schedule(
            EventKind.TIMER, "test", 1_002_000, network.dissociate, network.mobile.primary
        )

    run = simulate(parked, prepare=prepare)
    packets = run.report.packets
    assert packets[99].drop_reason is None
    assert packets[100].drop_reason == "no-route"
    assert packets[101].drop_reason == "no-arp"
    assert packets[199].in_time(run.report.reply_timeout_us)
    assert {"no-route", "no-arp"} <= set(run.report.loss_reasons)
    rec = _completed(run)[0]
    assert (rec.old_ap, rec.new_ap) == (None, "A")


def test_late_replies_count_as_lost(parked):
    run = simulate(parked.with_overrides(traffic={"reply_timeout_ms": 5.0}))
    report = run.report
    assert report.received_in_time == 0
    assert report.lost == 200
    assert report.loss_reasons == {"late": 200}


def test_parked_run_is_clean(parked):
    run = simulate(parked)
    report = run.report
    assert (report.sent, report.lost, report.latencies_us) == (200, 0, [])
    assert report.trace == []
    assert report.config["handoff"]["lq_threshold_dbm"] == -75.0
    assert run.violations == []


def test_no_traffic(parked):
    report = simulate(parked.with_overrides(traffic={"packet_count": 0})).report
    assert report.sent == 0
    assert report.row()["per_10k"] is None


def test_invariant_checker_flags_leaked_commitment(parked):
    run = simulate(parked)
    run.ap_agents["B"].ledger.commit(run.network.mobile.vip, 100, "02:00:00:00:77:02")
    problems = check_run_invariants(run)
    assert any("commitments leaked" in p for p in problems)


# --- determinism ---------------------------------------------------------------

def test_same_seed_same_run():
    cfg = load_config("fig1_outdoor").with_overrides(
        mobility={"waypoints": [(290.0, 0.0), (400.0, 0.0)]},
        traffic={"packet_count": 600},
    )
    a = simulate(cfg, seed=11, record_events=True)
    b = simulate(cfg, seed=11, record_events=True)
    assert a.report.to_dict() == b.report.to_dict()
    assert a.trace == b.trace
    assert a.event_trace == b.event_trace
    assert len(a.event_trace) > 0


# --- baseline ------------------------------------------------------------------

def test_baseline_breaks_before_making(crossing):
    run = simulate(crossing, scheme="baseline")
    finished = [r for r in run.agent.records if r.finished]
    assert finished
    first = finished[0]
    assert (first.old_ap, first.new_ap, first.outcome) == ("A", "A", "reattached")
    assert first.handoff_latency() == 165_000
    assert all(r.handoff_latency() >= 150_000 for r in finished)
    assert run.report.lost >= len(finished)
    # Reattachments are counted apart from handoffs.
    completed = [r for r in finished if r.outcome == "completed"]
    assert run.report.latencies_us == [r.handoff_latency() for r in completed]
    assert run.report.reattached == len(finished) - len(completed) >= 1


def test_failed_baseline_attempt_is_recorded(crossing, drop_first):
    prepare = drop_first(lambda src, msg: src == "G" and isinstance(msg, SwitchRouteOk))
    run = simulate(crossing, scheme="baseline", prepare=prepare)
    records = run.agent.records
    failed = [r for r in records if r.outcome == "abandoned"]
    assert [(r.reason, r.retries) for r in failed] == [("switch-ok-timeout", 0)]
    retried = [r for r in records if r.finished and r.t_trigger == failed[0].t_trigger]
    assert len(retried) == 1
    assert retried[0].retries == 1
    assert run.report.latencies_us == [
        r.handoff_latency() for r in records if r.outcome == "completed"
    ]


def test_unknown_scheme_rejected(fig1):
    with pytest.raises(ConfigError, match="unknown scheme"):
        build_network(fig1, "triple")


# --- batches -------------------------------------------------------------------

def test_batch_seeds_and_order(parked):
    cfg = parked.with_overrides(traffic={"packet_count": 50})
    reports = run_batch(cfg, runs=3, seed=5)
    assert [(r.run_id, r.seed) for r in reports] == [(0, 5), (1, 6), (2, 7)]
    assert run_batch(cfg, runs=3, seed=5, jobs=2) == reports


def test_batch_needs_a_run(parked):
    with pytest.raises(ConfigError, match="runs"):
        run_batch(parked, runs=0)
