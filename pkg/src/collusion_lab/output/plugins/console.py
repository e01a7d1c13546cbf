"""Console output plugin - prints run events to stdout."""

from dataclasses import dataclass

from collusion_lab.output.events import OutputEvent, OutputEventType

_PREFIXES = {
    OutputEventType.SYSTEM: "[System]",
    OutputEventType.ERROR: "[Error]",
    OutputEventType.NONCONVERGENCE: "[Excluded]",
    OutputEventType.PRICE_CYCLE: "[Excluded]",
    OutputEventType.TOPUP_ON_PATH: "[Warning]",
    OutputEventType.SWEEP_ROW: "[Sweep]",
    OutputEventType.CERTIFICATE: "[Verify]",
}


@dataclass
class ConsolePlugin:
    """Output plugin that prints events to console.

    Args:
        handled_types: Event types to handle, or None for all
        show_timestamps: Whether to include timestamps
    """

    handled_types: set[OutputEventType] | None = None
    show_timestamps: bool = False

    @property
    def name(self) -> str:
        return "console"

    async def handle(self, event: OutputEvent) -> None:
        prefix = _PREFIXES.get(event.event_type, f"[{event.source}]")
        if self.show_timestamps:
            ts = event.timestamp.strftime("%H:%M:%S")
            print(f"[{ts}] {prefix} {event.content}")
        else:
            print(f"{prefix} {event.content}")

    async def start(self) -> None:
        pass

    async def stop(self) -> None:
        pass
