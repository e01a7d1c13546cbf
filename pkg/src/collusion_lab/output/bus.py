"""Event bus for routing run events to output plugins."""

import asyncio
import logging
from collections import Counter
from dataclasses import dataclass, field

from collusion_lab.output.events import OutputEvent, OutputEventType
from collusion_lab.output.plugin import OutputPlugin

logger = logging.getLogger(__name__)


@dataclass
class EventBus:
    """Routes simulation, sweep and verifier events to plugins.

    The bus keeps a tally of everything emitted per event type, so a caller
    can tell after a run how many simulations were excluded or failed
    without registering a plugin for it.

    Usage:
        bus = EventBus()
        bus.register(ConsolePlugin())
        bus.register(JsonLogPlugin("events.jsonl"))

        await bus.start()
        await bus.publish(OutputEventType.PRICE_CYCLE, "sim_0003", "Greedy prices cycle")
        await bus.stop()
        bus.counts[OutputEventType.PRICE_CYCLE]  # 1
    """

    plugins: list[OutputPlugin] = field(default_factory=list)
    counts: Counter = field(default_factory=Counter)

    def register(self, plugin: OutputPlugin) -> None:
        self.plugins.append(plugin)

    def unregister(self, name: str) -> None:
        self.plugins = [p for p in self.plugins if p.name != name]

    async def emit(self, event: OutputEvent) -> None:
        """Hand ``event`` to every plugin that handles its type, concurrently.

        A plugin that raises is logged and skipped.
        """
        self.counts[event.event_type] += 1
        targets = [
            p for p in self.plugins if p.handled_types is None or event.event_type in p.handled_types
        ]
        results = await asyncio.gather(
            *(p.handle(event) for p in targets), return_exceptions=True
        )
        for plugin, result in zip(targets, results):
            if isinstance(result, Exception):
                logger.error(
                    "Plugin %s failed on a %s event: %s",
                    plugin.name,
                    event.event_type.value,
                    result,
                    exc_info=result,
                )

    async def publish(
        self, event_type: OutputEventType, source: str, content: str, **metadata
    ) -> OutputEvent:
        event = OutputEvent(event_type=event_type, source=source, content=content, metadata=metadata)
        await self.emit(event)
        return event

    async def report_error(self, source: str, error: BaseException) -> OutputEvent:
        """Publish an ERROR event naming the exception type."""
        return await self.publish(
            OutputEventType.ERROR,
            source,
            f"{type(error).__name__}: {error}",
            error_type=type(error).__name__,
        )

    async def start(self) -> None:
        await self._each("start")

    async def stop(self) -> None:
        """Stop all plugins; every plugin gets stop() even if one fails."""
        await self._each("stop")

    async def _each(self, action: str) -> None:
        for plugin in self.plugins:
            try:
                await getattr(plugin, action)()
            except Exception:
                logger.exception("Plugin %s failed to %s", plugin.name, action)
