"""FastMCP server exposing the simulator to MCP clients (stdio by default)."""

from typing import Any

from mcp.server.fastmcp import FastMCP

from . import metrics, results_db
from .config import ConfigError, load_config, settings
from .scenario import SCHEMES, run_batch

mcp = FastMCP("handoff_sim")


@mcp.tool(
    name="handoff_run_scenario",
    annotations={
        "title": "Run handoff simulation batch",
        "readOnlyHint": False,
        "destructiveHint": False,
        "idempotentHint": True,
        "openWorldHint": False,
    },
)
def handoff_run_scenario(
    config: str = "fig1",
    seed: int | None = None,
    runs: int = 1,
    scheme: str = "dual",
    speed_kmph: float | None = None,
    store: bool = False,
) -> dict[str, Any]:
    """Run ``runs`` simulations (seeds seed..seed+runs-1) and summarize them.

    ``config`` is a bundled preset name (``fig1``, ``fig1_outdoor``) or a path to a
    scenario JSON file. ``scheme`` is ``dual`` or ``baseline``. Batches larger than
    $HANDOFF_SIM_MAX_RUNS are refused.

    Returns:
        The batch summary: {"runs", "handoffs", "reattached", "mean_latency_ms", "lost",
        "sent", "mean_per_10k", "overlap_required_m", "rows": [...]} plus "batch" when stored,
        or {"error": str} on a bad request.
    """
    cap = settings()["max_runs"]
    if not 1 <= runs <= cap:
        return {"error": f"runs must be between 1 and {cap}"}
    if scheme not in SCHEMES:
        return {"error": f"unknown scheme '{scheme}' (dual or baseline)"}
    try:
        cfg = load_config(config)
        if speed_kmph is not None:
            cfg = cfg.with_overrides(mobility={"speed_kmph": speed_kmph})
    except ConfigError as e:
        return {"error": str(e)}
    reports = run_batch(cfg, runs=runs, scheme=scheme, seed=seed)
    result = metrics.summarize(reports).to_dict()
    if store:
        result["batch"] = results_db.save_batch(reports, cfg.name)
    return result


@mcp.tool(
    name="handoff_overlap_required",
    annotations={
        "title": "AP overlap needed for a handoff",
        "readOnlyHint": True,
        "destructiveHint": False,
        "idempotentHint": True,
        "openWorldHint": False,
    },
)
def handoff_overlap_required(speed_kmph: float, latency_ms: float) -> dict[str, Any]:
    """Coverage overlap (metres) a vehicle at ``speed_kmph`` needs to finish a handoff.

    Returns:
        {"speed_kmph": float, "latency_ms": float, "overlap_m": float}
    """
    try:
        overlap = metrics.overlap_required(speed_kmph, latency_ms)
    except ValueError as e:
        return {"error": str(e)}
    return {"speed_kmph": speed_kmph, "latency_ms": latency_ms, "overlap_m": round(overlap, 3)}


@mcp.tool(
    name="handoff_list_runs",
    annotations={
        "title": "List stored runs",
        "readOnlyHint": True,
        "destructiveHint": False,
        "idempotentHint": True,
        "openWorldHint": False,
    },
)
def handoff_list_runs(limit: int = 20) -> dict[str, Any]:
    """Most recent stored runs, newest first.

    Returns:
        {"runs": [{"id", "batch", "config_name", "scheme", "run", "seed", "handoffs",
        "mean_latency_ms", "max_latency_ms", "lost", "sent", "per_10k", ...}, ...]}
    """
    return {"runs": results_db.list_runs(limit)}


def run() -> None:
    """Start the MCP server over stdio."""
    mcp.run()
