"""Run manifest: what was run, with which seeds, into which files."""

from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any

from collusion_lab import __version__


@dataclass
class RunManifest:
    """Enough to reproduce a CLI invocation.

    Seeds are listed as (base_seed, spawn key) pairs; see
    ``collusion_lab.harness`` for how streams are derived from them.
    ``findings`` lists excluded runs, top-ups on the greedy path and errors
    reported during the invocation.
    """

    command: str
    config: dict[str, Any]
    base_seed: int
    sim_ids: list[int] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    findings: list[dict[str, str]] = field(default_factory=list)
    version: str = __version__
    created_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))

    @property
    def seeds(self) -> list[dict[str, Any]]:
        return [{"base_seed": self.base_seed, "spawn_key": [i]} for i in self.sim_ids]

    def to_dict(self) -> dict[str, Any]:
        return {
            "command": self.command,
            "config": self.config,
            "base_seed": self.base_seed,
            "sim_ids": self.sim_ids,
            "seeds": self.seeds,
            "outputs": self.outputs,
            "timings": self.timings,
            "findings": self.findings,
            "version": self.version,
            "created_at": self.created_at.isoformat(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunManifest":
        created_at = data.get("created_at")
        if isinstance(created_at, str):
            created_at = datetime.fromisoformat(created_at)
        elif created_at is None:
            created_at = datetime.now(timezone.utc)

        return cls(
            command=data["command"],
            config=data["config"],
            base_seed=data["base_seed"],
            sim_ids=data.get("sim_ids", []),
            outputs=data.get("outputs", []),
            timings=data.get("timings", {}),
            findings=data.get("findings", []),
            version=data.get("version", __version__),
            created_at=created_at,
        )
