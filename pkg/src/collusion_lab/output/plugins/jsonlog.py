"""JSON Lines log output plugin - writes events to a .jsonl file."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import aiofiles
from aiofiles.threadpool.text import AsyncTextIOWrapper

from collusion_lab.output.events import OutputEvent, OutputEventType


@dataclass
class JsonLogPlugin:
    """Output plugin that writes events to a JSON Lines file.

    Args:
        log_path: Path to the .jsonl log file
        handled_types: Event types to handle, or None for all

    Raises:
        ValueError: If the parent directory of log_path does not exist
    """

    log_path: str
    handled_types: set[OutputEventType] | None = None
    _file: AsyncTextIOWrapper | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        path = Path(self.log_path)
        if not path.parent.exists():
            raise ValueError(f"Parent directory does not exist: {path.parent}")

    @property
    def name(self) -> str:
        return "jsonlog"

    async def start(self) -> None:
        self._file = await aiofiles.open(self.log_path, "a", encoding="utf-8")

    async def stop(self) -> None:
        if self._file:
            await self._file.close()
            self._file = None

    async def handle(self, event: OutputEvent) -> None:
        if not self._file:
            return
        data = {
            "event_type": event.event_type.value,
            "source": event.source,
            "content": event.content,
            "timestamp": event.timestamp.isoformat(),
            "metadata": event.metadata,
        }
        await self._file.write(json.dumps(data, sort_keys=True, default=str) + "\n")
        await self._file.flush()
