import json
import os
import sqlite3
import time
import uuid
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from .config import settings
from .metrics import RunReport


def db_file() -> str:
    """Resolve the history database path ($HANDOFF_SIM_DB, else under XDG config)."""
    path = Path(settings()["db_file"])
    path.parent.mkdir(parents=True, exist_ok=True)
    return str(path)


def init_db() -> str:
    """Create the runs table if it doesn't exist. Returns the database path."""
    path = db_file()
    with sqlite3.connect(path) as conn:
        conn.execute(
            """
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                batch TEXT NOT NULL,
                created_at REAL NOT NULL,
                config_name TEXT NOT NULL,
                scheme TEXT NOT NULL,
                run INTEGER NOT NULL,
                seed TEXT NOT NULL,
                handoffs INTEGER NOT NULL,
                mean_latency_ms REAL,
                max_latency_ms REAL,
                lost INTEGER NOT NULL,
                sent INTEGER NOT NULL,
                per_10k REAL,
                row_json TEXT NOT NULL
            )
            """
        )
        conn.commit()
    try:
        os.chmod(path, 0o600)
    except OSError:
        pass  # best-effort
    return path


def save_batch(reports: Sequence[RunReport], config_name: str = "custom") -> str:
    """Store one row per run under a fresh batch id and return that id."""
    batch = uuid.uuid4().hex[:12]
    now = time.time()
    path = init_db()
    with sqlite3.connect(path) as conn:
        for report in reports:
            row = report.row()
            conn.execute(
                """
                INSERT INTO runs (batch, created_at, config_name, scheme, run, seed, handoffs,
                    mean_latency_ms, max_latency_ms, lost, sent, per_10k, row_json)
                VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
                """,
                (
                    batch, now, config_name, row["scheme"], row["run"], str(row["seed"]),
                    row["handoffs"], row["mean_latency_ms"], row["max_latency_ms"], row["lost"],
                    row["sent"], row["per_10k"], json.dumps(row, sort_keys=True),
                ),
            )
        conn.commit()
    return batch


def list_runs(limit: int = 20) -> list[dict[str, Any]]:
    """Most recent runs first."""
    path = init_db()
    with sqlite3.connect(path) as conn:
        cursor = conn.execute(
            """
            SELECT id, batch, created_at, config_name, scheme, run, seed, handoffs,
                   mean_latency_ms, max_latency_ms, lost, sent, per_10k
            FROM runs ORDER BY id DESC LIMIT ?
            """,
            (max(1, int(limit)),),
        )
        columns = [c[0] for c in cursor.description]
        rows = [dict(zip(columns, values)) for values in cursor.fetchall()]
    for row in rows:
        row["seed"] = int(row["seed"])
    return rows


def delete_batch(batch: str) -> bool:
    """Delete every run of a batch. Returns True if a row was removed."""
    with sqlite3.connect(init_db()) as conn:
        cursor = conn.execute("DELETE FROM runs WHERE batch = ?", (batch,))
        conn.commit()
        return cursor.rowcount > 0
