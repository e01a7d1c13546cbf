"""Output layer - event bus with plugin architecture.

Runs report progress and findings as OutputEvents; the EventBus routes them
to every registered OutputPlugin.

Quick Start:
    from collusion_lab.output import EventBus, OutputEvent, OutputEventType
    from collusion_lab.output.plugins import ConsolePlugin, JsonLogPlugin

    bus = EventBus()
    bus.register(ConsolePlugin())
    bus.register(JsonLogPlugin("out/events.jsonl"))

    await bus.start()
    await bus.emit(OutputEvent(
        event_type=OutputEventType.SIMULATION_START,
        source="sim_0003",
        content="Phase 1 training started",
    ))
    await bus.stop()

Built-in Plugins:
    - ConsolePlugin: Prints to stdout with an event-type prefix
    - JsonLogPlugin: Writes to a .jsonl file for analysis
    - CallbackPlugin: Wraps custom functions; CallbackPlugin.recorder collects findings
"""

from collusion_lab.output.events import OutputEvent, OutputEventType
from collusion_lab.output.plugin import OutputPlugin
from collusion_lab.output.bus import EventBus

__all__ = [
    "OutputEvent",
    "OutputEventType",
    "OutputPlugin",
    "EventBus",
]
