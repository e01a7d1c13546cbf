"""Error kinds raised across collusion_lab.

Plain ``ValueError`` covers invalid arguments; the subclasses below name the
failure modes callers may want to catch separately.
"""

from typing import Any


class SolverError(RuntimeError):
    """An equilibrium solver hit its iteration cap without meeting tolerance."""

    def __init__(self, message: str, last_iterate: Any = None, residuals: Any = None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residuals = residuals


class UnsupportedParametersError(ValueError):
    """Parameters outside the interior-equilibrium region the models assume."""


class ProtocolError(RuntimeError):
    """A stateful component was fed periods out of order."""


class DegenerateInputError(ValueError):
    """Input for which a quantity is undefined (e.g. top-up at zero sales)."""


class ResourceLimitError(RuntimeError):
    """A requested enumeration exceeds the configured budget."""
