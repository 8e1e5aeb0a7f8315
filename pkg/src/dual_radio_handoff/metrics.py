"""Loss, latency and overlap metrics plus report/series emission.

Everything here is a pure function over finished run reports, so sweep workers can
call it freely. File emission is single-writer.
"""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

REFERENCE_SPEEDS_KMPH = (40, 60, 100, 120)
REPORT_COLUMNS = (
    "run", "seed", "scheme", "handoffs", "mean_latency_ms", "max_latency_ms", "lost", "sent",
    "per_10k",
)
DROP_SERIES_COLUMNS = ("run", "seed", "scheme", "lost", "sent", "per_10k")
LATENCY_SERIES_COLUMNS = ("run", "seed", "scheme", "handoff", "latency_ms")


def _ms(us: float) -> float:
    return round(us / 1000.0, 3)


# --- statistics ----------------------------------------------------------------

def loss_stats(sent: int, received_in_time: int) -> dict[str, Any]:
    """``lost``, ``per_10k`` and ``percent``; the rates are None when nothing was sent."""
    if received_in_time > sent or received_in_time < 0:
        raise ValueError(f"received_in_time ({received_in_time}) must be within 0..{sent}")
    lost = sent - received_in_time
    if sent == 0:
        return {"lost": 0, "per_10k": None, "percent": None}
    return {"lost": lost, "per_10k": lost * 10_000 / sent, "percent": lost * 100 / sent}


def latency_stats(latencies_us: Sequence[int]) -> dict[str, Any]:
    """Mean/min/max in ms (3 decimals); the series keeps the raw microseconds."""
    if not latencies_us:
        return {"mean_ms": None, "min_ms": None, "max_ms": None, "count": 0, "series_us": []}
    arr = np.asarray(latencies_us, dtype=np.int64)
    return {
        "mean_ms": _ms(float(arr.mean())),
        "min_ms": _ms(float(arr.min())),
        "max_ms": _ms(float(arr.max())),
        "count": int(arr.size),
        "series_us": [int(v) for v in latencies_us],
    }


def overlap_required(speed_kmph: float, latency_ms: float) -> float:
    """Metres of AP coverage overlap needed to finish a handoff at this speed."""
    if speed_kmph < 0 or latency_ms < 0:
        raise ValueError("speed and latency must be non-negative")
    return speed_kmph * 1000.0 / 3600.0 * latency_ms / 1000.0


# --- reports -------------------------------------------------------------------

@dataclass(slots=True)
class PacketRecord:
    seq: int
    t_sent: int
    t_replied: int | None = None
    drop_reason: str | None = None

    def in_time(self, reply_timeout_us: int) -> bool:
        return self.t_replied is not None and self.t_replied - self.t_sent <= reply_timeout_us


@dataclass
class RunReport:
    run_id: int
    seed: int
    scheme: str
    sent: int
    received_in_time: int
    lost: int
    loss_reasons: dict[str, int]
    latencies_us: list[int]
    handoffs: list[dict[str, Any]]
    packets: list[PacketRecord]
    control_sent: int
    control_lost: int
    reply_timeout_us: int
    config: dict[str, Any]
    reattached: int = 0
    trace: list[str] = field(default_factory=list, compare=False, repr=False)

    @property
    def handoff_count(self) -> int:
        return len(self.latencies_us)

    def row(self) -> dict[str, Any]:
        stats = latency_stats(self.latencies_us)
        return {
            "run": self.run_id,
            "seed": self.seed,
            "scheme": self.scheme,
            "handoffs": self.handoff_count,
            "reattached": self.reattached,
            "mean_latency_ms": stats["mean_ms"],
            "max_latency_ms": stats["max_ms"],
            "lost": self.lost,
            "sent": self.sent,
            "per_10k": loss_stats(self.sent, self.received_in_time)["per_10k"],
        }

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data.pop("trace")
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RunReport:
        data = dict(data)
        data["packets"] = [PacketRecord(**p) for p in data["packets"]]
        return cls(**data)


def recompute_loss(report: RunReport) -> dict[str, Any]:
    """Loss from the raw packet records, independent of the scenario's own count."""
    in_time = sum(p.in_time(report.reply_timeout_us) for p in report.packets)
    return loss_stats(len(report.packets), in_time)


def loss_reasons(packets: Iterable[PacketRecord], reply_timeout_us: int) -> dict[str, int]:
    counts = Counter(
        p.drop_reason or "late" for p in packets if not p.in_time(reply_timeout_us)
    )
    return dict(sorted(counts.items()))


@dataclass
class BatchSummary:
    scheme: str
    runs: int
    rows: list[dict[str, Any]]
    handoffs: int
    reattached: int
    mean_latency_ms: float | None
    min_latency_ms: float | None
    max_latency_ms: float | None
    lost: int
    sent: int
    mean_per_10k: float | None
    overlap_required_m: dict[str, float | None]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def summarize(reports: Sequence[RunReport]) -> BatchSummary:
    if not reports:
        raise ValueError("at least one report is required")
    latencies = [v for r in reports for v in r.latencies_us]
    stats = latency_stats(latencies)
    rates = [
        loss_stats(r.sent, r.received_in_time)["per_10k"] for r in reports if r.sent > 0
    ]
    mean_latency = stats["mean_ms"]
    overlap = {
        str(v): (round(overlap_required(v, mean_latency), 3) if mean_latency is not None else None)
        for v in REFERENCE_SPEEDS_KMPH
    }
    schemes = sorted({r.scheme for r in reports})
    return BatchSummary(
        scheme=",".join(schemes),
        runs=len(reports),
        rows=[r.row() for r in reports],
        handoffs=len(latencies),
        reattached=sum(r.reattached for r in reports),
        mean_latency_ms=mean_latency,
        min_latency_ms=stats["min_ms"],
        max_latency_ms=stats["max_ms"],
        lost=sum(r.lost for r in reports),
        sent=sum(r.sent for r in reports),
        mean_per_10k=round(float(np.mean(rates)), 3) if rates else None,
        overlap_required_m=overlap,
    )


# --- emission ------------------------------------------------------------------

def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.3f}"
    return str(value)


def _csv_text(columns: Sequence[str], rows: Iterable[dict[str, Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in columns])
    return buf.getvalue()


def render_report(reports: Sequence[RunReport], fmt: str = "csv") -> str:
    if not reports:
        raise ValueError("at least one report is required")
    summary = summarize(reports)
    if fmt == "csv":
        rows = list(summary.rows)
        rows.append({
            "run": "summary",
            "seed": "",
            "scheme": summary.scheme,
            "handoffs": summary.handoffs,
            "mean_latency_ms": summary.mean_latency_ms,
            "max_latency_ms": summary.max_latency_ms,
            "lost": summary.lost,
            "sent": summary.sent,
            "per_10k": summary.mean_per_10k,
        })
        return _csv_text(REPORT_COLUMNS, rows)
    if fmt == "json":
        doc = {"runs": [r.to_dict() for r in reports], "summary": summary.to_dict()}
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"
    raise ValueError(f"unknown report format '{fmt}' (csv or json)")


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise OSError(e.errno, f"cannot write report to '{path}': {e.strerror or e}") from e


def emit_report(reports: Sequence[RunReport], fmt: str, path: str | Path) -> Path:
    """Write the batch report; same reports always give the same bytes."""
    path = Path(path)
    _write(path, render_report(reports, fmt))
    return path


def emit_series(reports: Sequence[RunReport], out_dir: str | Path) -> tuple[Path, Path]:
    """Plot-ready ``drops.csv`` (per run) and ``latencies.csv`` (per handoff)."""
    out = Path(out_dir)
    drops = [
        {
            "run": r.run_id, "seed": r.seed, "scheme": r.scheme, "lost": r.lost, "sent": r.sent,
            "per_10k": loss_stats(r.sent, r.received_in_time)["per_10k"],
        }
        for r in reports
    ]
    latencies = [
        {
            "run": r.run_id, "seed": r.seed, "scheme": r.scheme, "handoff": i,
            "latency_ms": _ms(v),
        }
        for r in reports
        for i, v in enumerate(r.latencies_us)
    ]
    drops_path, lat_path = out / "drops.csv", out / "latencies.csv"
    _write(drops_path, _csv_text(DROP_SERIES_COLUMNS, drops))
    _write(lat_path, _csv_text(LATENCY_SERIES_COLUMNS, latencies))
    return drops_path, lat_path
