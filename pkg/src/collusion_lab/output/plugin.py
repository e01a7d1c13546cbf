"""Output plugin protocol definition."""

from typing import Protocol, runtime_checkable

from collusion_lab.output.events import OutputEvent, OutputEventType


@runtime_checkable
class OutputPlugin(Protocol):
    """Protocol for output plugins.

    Example implementation:

        class CountingPlugin:
            name = "counting"

            @property
            def handled_types(self) -> set[OutputEventType] | None:
                return {OutputEventType.PRICE_CYCLE}

            async def handle(self, event: OutputEvent) -> None:
                self.count += 1

            async def start(self) -> None:
                self.count = 0

            async def stop(self) -> None:
                pass
    """

    @property
    def name(self) -> str:
        """Unique name for this plugin."""
        ...

    @property
    def handled_types(self) -> set[OutputEventType] | None:
        """Event types this plugin handles, or None for all."""
        ...

    async def handle(self, event: OutputEvent) -> None:
        ...

    async def start(self) -> None:
        """Called when the EventBus starts."""
        ...

    async def stop(self) -> None:
        """Called when the EventBus stops."""
        ...
