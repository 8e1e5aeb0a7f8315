import pytest

from dual_radio_handoff.config import ScenarioConfig, load_config


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch, tmp_path):
    # Every test gets its own history database and default settings.
    monkeypatch.setenv("HANDOFF_SIM_DB", str(tmp_path / "runs.sqlite3"))
    monkeypatch.delenv("HANDOFF_SIM_MAX_RUNS", raising=False)
    monkeypatch.delenv("HANDOFF_SIM_LOG_LEVEL", raising=False)


@pytest.fixture
def fig1() -> ScenarioConfig:
    return load_config("fig1")


@pytest.fixture
def crossing(fig1) -> ScenarioConfig:
    """A six-second drive across the A/B boundary: exactly one handoff A -> B."""
    return fig1.with_overrides(
        mobility={"waypoints": [(290.0, 0.0), (400.0, 0.0)]},
        traffic={"packet_count": 600},
    )


@pytest.fixture
def parked(fig1) -> ScenarioConfig:
    """MN standing right under AP A."""
    return fig1.with_overrides(
        mobility={"waypoints": [(150.0, 0.0)]},
        traffic={"packet_count": 200},
    )


@pytest.fixture
def edit_ap():
    """Return a copy of a config with one AP's fields changed."""

    def _edit(config: ScenarioConfig, ap_id: str, **changes) -> ScenarioConfig:
        data = config.model_dump()
        for ap in data["topology"]["aps"]:
            if ap["id"] == ap_id:
                ap.update(changes)
        return ScenarioConfig.model_validate(data)

    return _edit


@pytest.fixture
def drop_first():
    """Build a ``prepare`` hook that silently drops the first matching control message."""

    def _factory(predicate):
        def prepare(network):
            original = network.send_control
            dropped = []

            def send(src, message, **kwargs):
                if not dropped and predicate(src, message):
                    dropped.append(message)
                    return
                original(src, message, **kwargs)

            network.send_control = send
            network.dropped_by_test = dropped

        return prepare

    return _factory


@pytest.fixture
def drop_matching():
    """Build a ``prepare`` hook from ``(predicate, nth)`` rules.

    ``predicate(src, message, dst)`` selects control messages; a rule drops its
    ``nth`` match (1-based) or, with ``nth=None``, every match.
    """

    def _factory(*rules):
        def prepare(network):
            original = network.send_control
            seen = [0] * len(rules)
            dropped = []

            def send(src, message, **kwargs):
                for i, (predicate, nth) in enumerate(rules):
                    if not predicate(src, message, kwargs.get("dst")):
                        continue
                    seen[i] += 1
                    if nth is None or seen[i] == nth:
                        dropped.append(message)
                        return
                original(src, message, **kwargs)

            network.send_control = send
            network.dropped_by_test = dropped

        return prepare

    return _factory
