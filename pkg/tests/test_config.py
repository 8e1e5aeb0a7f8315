"""Scenario config loading, validation and environment settings."""

import json

import pytest

from dual_radio_handoff import config
from dual_radio_handoff.config import ConfigError, backhaul_hops, load_config, load_topology


def _minimal(**extra):
    doc = {
        "topology": {
            "aps": [
                {"id": "A", "role": "edge", "position": [0, 0], "channel": 1},
                {"id": "C", "role": "core", "position": [50, 0]},
            ],
            "gateway": {"id": "G"},
            "links": [["A", "C"], ["C", "G"]],
        }
    }
    doc.update(extra)
    return doc


# --- presets -------------------------------------------------------------------

def test_fig1_preset_has_two_edges_one_core_and_gateway():
    cfg = load_config("fig1")
    roles = sorted(ap.role for ap in cfg.topology.aps)
    assert roles == ["core", "edge", "edge"]
    assert cfg.topology.gateway.id == "G"
    assert [ap.id for ap in cfg.topology.edge_aps()] == ["A", "B"]


def test_outdoor_preset_has_lossy_broadcast():
    cfg = load_config("fig1_outdoor")
    assert cfg.channel.p_bcast == pytest.approx(0.3)
    assert cfg.handoff.request_retry_timeout_ms == 25


def test_fig1_backhaul_hops():
    cfg = load_config("fig1")
    hops = backhaul_hops(cfg.topology.links, "G")
    assert hops == {"G": 0, "C": 1, "A": 2, "B": 2}


def test_load_from_path(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps(_minimal(seed=9)), encoding="utf-8")
    assert load_config(path).seed == 9


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError, match="could not read"):
        load_config(tmp_path / "nope.json")


# --- defaults ------------------------------------------------------------------

def test_omitted_threshold_defaults_and_is_echoed():
    cfg = load_topology(json.dumps(_minimal()))
    assert cfg.handoff.lq_threshold_dbm == -75.0
    echo = cfg.config_echo()
    assert echo["handoff"]["lq_threshold_dbm"] == -75.0
    assert echo["handoff"]["ewma_alpha"] == 0.5
    assert echo["delays"]["association"] == 15.0
    json.dumps(echo)  # JSON-ready


def test_with_overrides_validates():
    cfg = load_config("fig1")
    faster = cfg.with_overrides(mobility={"speed_kmph": 100.0}, seed=5)
    assert faster.mobility.speed_kmph == 100.0
    assert faster.seed == 5
    assert faster.mobility.waypoints == cfg.mobility.waypoints
    with pytest.raises(ConfigError):
        cfg.with_overrides(channel={"p_bcast": 1.5})


# --- validation errors ---------------------------------------------------------

def test_unknown_key_rejected_with_field_path():
    doc = _minimal(handoff={"lq_treshold_dbm": -70})
    with pytest.raises(ConfigError) as info:
        load_topology(json.dumps(doc))
    assert info.value.field == "handoff.lq_treshold_dbm"


def test_missing_gateway_named():
    doc = _minimal()
    del doc["topology"]["gateway"]
    with pytest.raises(ConfigError) as info:
        load_topology(json.dumps(doc))
    assert info.value.field == "topology.gateway"


def test_zero_edge_aps_rejected():
    doc = _minimal()
    doc["topology"]["aps"] = [{"id": "C", "role": "core", "position": [0, 0]}]
    doc["topology"]["links"] = [["C", "G"]]
    with pytest.raises(ConfigError, match="edge AP"):
        load_topology(json.dumps(doc))


def test_edge_ap_without_backhaul_path_rejected():
    doc = _minimal()
    doc["topology"]["links"] = [["C", "G"]]
    with pytest.raises(ConfigError, match="no backhaul path"):
        load_topology(json.dumps(doc))


def test_duplicate_ids_rejected():
    doc = _minimal()
    doc["topology"]["aps"].append({"id": "A", "role": "edge", "position": [9, 9]})
    with pytest.raises(ConfigError, match="duplicate node id 'A'"):
        load_topology(json.dumps(doc))


def test_unknown_link_endpoint_rejected():
    doc = _minimal()
    doc["topology"]["links"].append(["A", "Z"])
    with pytest.raises(ConfigError, match="'Z'"):
        load_topology(json.dumps(doc))


@pytest.mark.parametrize("text", ["{not json", "[1, 2]"])
def test_malformed_text_rejected(text):
    with pytest.raises(ConfigError):
        load_topology(text)


def test_sensitivity_must_be_below_reference_power():
    doc = _minimal(propagation={"rx_sensitivity_dbm": -10})
    with pytest.raises(ConfigError, match="rx_sensitivity_dbm"):
        load_topology(json.dumps(doc))


def test_unknown_preset():
    with pytest.raises(ConfigError, match="unknown preset"):
        config.preset_text("fig9")


# --- environment ---------------------------------------------------------------

def test_settings_defaults(monkeypatch, tmp_path):
    monkeypatch.delenv("HANDOFF_SIM_DB", raising=False)
    monkeypatch.setenv("XDG_CONFIG_HOME", str(tmp_path))
    s = config.settings()
    assert s["log_level"] == "WARNING"
    assert s["max_runs"] == config.DEFAULT_MAX_RUNS
    assert s["db_file"] == str(tmp_path / "dual-radio-handoff" / "runs.sqlite3")


def test_settings_read_fresh(monkeypatch):
    monkeypatch.setenv("HANDOFF_SIM_MAX_RUNS", "3")
    monkeypatch.setenv("HANDOFF_SIM_LOG_LEVEL", "debug")
    s = config.settings()
    assert s["max_runs"] == 3
    assert s["log_level"] == "DEBUG"
    monkeypatch.setenv("HANDOFF_SIM_MAX_RUNS", "bogus")
    assert config.settings()["max_runs"] == config.DEFAULT_MAX_RUNS
