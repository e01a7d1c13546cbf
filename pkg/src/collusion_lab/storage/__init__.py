"""Storage backends for experiment results."""

from collusion_lab.storage.manifest import RunManifest
from collusion_lab.storage.result_store import ResultStore

__all__ = ["ResultStore", "RunManifest"]
