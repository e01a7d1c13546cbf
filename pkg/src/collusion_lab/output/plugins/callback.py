"""Callback output plugin - hands run events to plain functions."""

import inspect
from dataclasses import dataclass, field
from typing import Awaitable, Callable

from collusion_lab.output.events import OutputEvent, OutputEventType

# Sync or async
EventCallback = Callable[[OutputEvent], None] | Callable[[OutputEvent], Awaitable[None]]
LifecycleCallback = Callable[[], None] | Callable[[], Awaitable[None]] | None

FINDING_TYPES = frozenset({
    OutputEventType.NONCONVERGENCE,
    OutputEventType.PRICE_CYCLE,
    OutputEventType.TOPUP_ON_PATH,
    OutputEventType.ERROR,
})


async def _call(function: Callable, *args) -> None:
    result = function(*args)
    if inspect.isawaitable(result):
        await result


@dataclass
class CallbackPlugin:
    """Output plugin that wraps callback functions.

    Args:
        name: Unique name for this plugin
        callback: Function called for every handled event
        handled_types: Event types to handle; None means all, or the keys of
            ``on_type`` when no ``callback`` is given
        sources: Only events from these sources ("sim_0003", "sweep",
            "verifier", ...); None for all
        on_type: Extra callback per event type, run after ``callback``
        on_start: Optional callback when plugin starts
        on_stop: Optional callback when plugin stops

    Example:
        plugin = CallbackPlugin(
            name="exclusions",
            on_type={
                OutputEventType.PRICE_CYCLE: cycles.append,
                OutputEventType.NONCONVERGENCE: capped.append,
            },
        )
    """

    name: str
    callback: EventCallback | None = None
    handled_types: set[OutputEventType] | None = None
    sources: set[str] | None = None
    on_type: dict[OutputEventType, EventCallback] = field(default_factory=dict)
    on_start: LifecycleCallback = None
    on_stop: LifecycleCallback = None

    def __post_init__(self) -> None:
        if self.callback is None and not self.on_type:
            raise ValueError(f"CallbackPlugin {self.name!r} needs a callback or on_type entries")
        if self.callback is None and self.handled_types is None:
            self.handled_types = set(self.on_type)

    @classmethod
    def recorder(
        cls, name: str, event_types: set[OutputEventType] | frozenset[OutputEventType] = FINDING_TYPES
    ) -> tuple["CallbackPlugin", list[OutputEvent]]:
        """A plugin that appends events of ``event_types`` to the returned list.

        The default collects findings: excluded runs, top-ups on the greedy
        path and errors.
        """
        events: list[OutputEvent] = []
        return cls(name=name, callback=events.append, handled_types=set(event_types)), events

    async def handle(self, event: OutputEvent) -> None:
        if self.sources is not None and event.source not in self.sources:
            return
        if self.callback is not None:
            await _call(self.callback, event)
        extra = self.on_type.get(event.event_type)
        if extra is not None:
            await _call(extra, event)

    async def start(self) -> None:
        if self.on_start:
            await _call(self.on_start)

    async def stop(self) -> None:
        if self.on_stop:
            await _call(self.on_stop)


def finding_record(event: OutputEvent) -> dict[str, str]:
    """Compact form of a finding for the run manifest."""
    return {"type": event.event_type.value, "source": event.source, "content": event.content}
