"""SQLite store for run records and summaries."""

import json
from datetime import datetime, timezone
from typing import Any

import aiosqlite

from collusion_lab.harness import RunRecord


class ResultStore:
    """Async SQLite store; the single writer for a CLI invocation.

    Rows are keyed by an experiment label ("baseline", "c=0.9", ...) so a
    sweep keeps every estimate's records side by side.
    """

    def __init__(self, db_path: str):
        self.db_path = db_path
        self._conn: aiosqlite.Connection | None = None

    async def initialize(self) -> None:
        """Open the database and create tables."""
        self._conn = await aiosqlite.connect(self.db_path)
        self._conn.row_factory = aiosqlite.Row

        await self._conn.executescript("""
            CREATE TABLE IF NOT EXISTS runs (
                label TEXT NOT NULL,
                sim_id INTEGER NOT NULL,
                base_seed INTEGER NOT NULL,
                converged INTEGER NOT NULL,
                cycle_detected INTEGER NOT NULL,
                data TEXT NOT NULL,
                PRIMARY KEY (label, sim_id)
            );

            CREATE TABLE IF NOT EXISTS summaries (
                label TEXT PRIMARY KEY,
                created_at TEXT NOT NULL,
                data TEXT NOT NULL
            );
        """)
        await self._conn.commit()

    async def close(self) -> None:
        if self._conn:
            await self._conn.close()
            self._conn = None

    def _require(self) -> aiosqlite.Connection:
        if not self._conn:
            raise RuntimeError("Store not initialized")
        return self._conn

    # Run records

    async def save_record(self, label: str, record: RunRecord) -> None:
        """Insert or replace one record (trajectories are not stored)."""
        conn = self._require()
        await conn.execute(
            """
            INSERT OR REPLACE INTO runs (label, sim_id, base_seed, converged,
                                         cycle_detected, data)
            VALUES (?, ?, ?, ?, ?, ?)
            """,
            (
                label,
                record.sim_id,
                record.base_seed,
                int(record.converged),
                int(record.cycle_detected),
                json.dumps(record.to_dict(), sort_keys=True),
            ),
        )
        await conn.commit()

    async def get_records(self, label: str) -> list[RunRecord]:
        """All records for ``label``, ordered by simulation id."""
        conn = self._require()
        async with conn.execute(
            "SELECT data FROM runs WHERE label = ? ORDER BY sim_id ASC", (label,)
        ) as cursor:
            rows = await cursor.fetchall()
        return [RunRecord.from_dict(json.loads(row["data"])) for row in rows]

    async def get_labels(self) -> list[str]:
        conn = self._require()
        async with conn.execute("SELECT DISTINCT label FROM runs ORDER BY label") as cursor:
            rows = await cursor.fetchall()
        return [row["label"] for row in rows]

    # Summaries

    async def save_summary(self, label: str, summary: dict[str, Any]) -> None:
        conn = self._require()
        await conn.execute(
            "INSERT OR REPLACE INTO summaries (label, created_at, data) VALUES (?, ?, ?)",
            (label, datetime.now(timezone.utc).isoformat(), json.dumps(summary, sort_keys=True)),
        )
        await conn.commit()

    async def get_summary(self, label: str) -> dict[str, Any] | None:
        conn = self._require()
        async with conn.execute(
            "SELECT data FROM summaries WHERE label = ?", (label,)
        ) as cursor:
            row = await cursor.fetchone()
        return None if row is None else json.loads(row["data"])
