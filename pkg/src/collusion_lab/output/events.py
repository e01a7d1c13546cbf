"""Output event types for the event bus."""

from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Any


class OutputEventType(Enum):
    """Types of events that flow through the output system."""

    # Simulation lifecycle
    SIMULATION_START = "simulation_start"
    SIMULATION_END = "simulation_end"
    PHASE1_CONVERGED = "phase1_converged"

    # Findings
    NONCONVERGENCE = "nonconvergence"   # Iteration cap hit, run excluded
    PRICE_CYCLE = "price_cycle"         # Greedy prices cycle, run excluded
    TOPUP_ON_PATH = "topup_on_path"     # Greedy evaluation paid a top-up
    SWEEP_ROW = "sweep_row"             # One cost-estimate row finished
    CERTIFICATE = "certificate"         # Verifier result

    # System
    SYSTEM = "system"
    ERROR = "error"


@dataclass
class OutputEvent:
    """An event to be sent to output plugins.

    This is the unit of communication between the harness and output
    destinations (console, event log, tests).
    """

    event_type: OutputEventType
    source: str  # "sim_0003", "sweep", "verifier", "system"
    content: str
    metadata: dict[str, Any] = field(default_factory=dict)
    timestamp: datetime = field(default_factory=lambda: datetime.now(timezone.utc))
