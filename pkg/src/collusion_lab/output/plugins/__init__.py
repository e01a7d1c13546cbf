"""Built-in output plugins."""

from collusion_lab.output.plugins.console import ConsolePlugin
from collusion_lab.output.plugins.jsonlog import JsonLogPlugin
from collusion_lab.output.plugins.callback import FINDING_TYPES, CallbackPlugin, finding_record

__all__ = ["ConsolePlugin", "JsonLogPlugin", "CallbackPlugin", "FINDING_TYPES", "finding_record"]
