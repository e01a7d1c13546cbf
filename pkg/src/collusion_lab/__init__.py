"""Two-stage price drop rule: collusion simulator, equilibrium library and verifier."""

__version__ = "0.1.0"
