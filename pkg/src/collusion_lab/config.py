"""YAML configuration validated with pydantic.

Every field has the baseline default, so an empty file (or no file)
reproduces the baseline experiment. Unknown keys are rejected.
"""

from pathlib import Path
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from collusion_lab.harness import ExperimentConfig
from collusion_lab.market import CournotParams, MarketParams, PriceGrid
from collusion_lab.mechanism import MechanismConfig, Variant
from collusion_lab.qlearning import AgentConfig


class ConfigError(ValueError):
    """Configuration file missing, unreadable or invalid."""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class MarketSection(_Section):
    a: tuple[float, float] = (2.0, 2.0)
    c: tuple[float, float] = (1.0, 1.0)
    a0: float = 0.0
    mu: float = Field(default=0.25, gt=0)
    outside_scaled_by_mu: bool = False
    grid_points: int = Field(default=15, ge=2)
    p_min: float = 1.0
    p_max: float = 2.1

    @model_validator(mode="after")
    def _check_range(self) -> "MarketSection":
        if not self.p_max > self.p_min:
            raise ValueError(f"p_max ({self.p_max}) must exceed p_min ({self.p_min})")
        return self


class AgentsSection(_Section):
    alpha: float = Field(default=0.15, gt=0, le=1)
    beta: float = Field(default=4e-6, ge=0)
    delta: float = Field(default=0.95, ge=0, lt=1)
    convergence_threshold: int = Field(default=100_000, ge=1)
    iteration_cap: int = Field(default=50_000_000, ge=1)


class MechanismSection(_Section):
    variant: Literal["simplified_ai", "platform_full", "multi_platform", "direct_market"] = (
        "simplified_ai"
    )
    activation_period: int = Field(default=50, ge=1)
    # None means "the true costs"
    cost_estimate: tuple[float, float] | None = None


class ExperimentSection(_Section):
    phase2_experiment_count: int = Field(default=500_000, ge=0)
    episode_length: int = Field(default=100, ge=2)
    n_simulations: int = Field(default=128, ge=1)
    base_seed: int = Field(default=0, ge=0)
    pre_window: tuple[int, int] = (30, 50)
    post_window_length: int = Field(default=20, ge=1)


class SweepSection(_Section):
    estimates: list[float] = Field(
        default_factory=lambda: [round(0.90 + 0.05 * k, 2) for k in range(8)]
    )


class CournotSection(_Section):
    Q: float = 10.0
    c: tuple[float, float] = (1.0, 1.0)
    beta: tuple[float, float] = (0.95, 0.95)
    grid_points: int = Field(default=20, ge=2)
    q_min: float = Field(default=0.0, ge=0)
    q_max: float = 9.5


class VerifierSection(_Section):
    variant: Literal["platform_full", "simplified_ai"] = "platform_full"
    t_max: int = Field(default=2, ge=0)
    max_strategies: int = Field(default=500_000, ge=1)
    deltas: list[float] = Field(default_factory=lambda: [0.5, 0.9, 0.95, 0.99])
    workers: int = Field(default=1, ge=1)


class LabConfig(_Section):
    """Root of the configuration file."""

    market: MarketSection = Field(default_factory=MarketSection)
    agents: AgentsSection = Field(default_factory=AgentsSection)
    mechanism: MechanismSection = Field(default_factory=MechanismSection)
    experiment: ExperimentSection = Field(default_factory=ExperimentSection)
    sweep: SweepSection = Field(default_factory=SweepSection)
    cournot: CournotSection = Field(default_factory=CournotSection)
    verifier: VerifierSection = Field(default_factory=VerifierSection)

    def market_params(self) -> MarketParams:
        m = self.market
        return MarketParams(
            a=m.a, c=m.c, a0=m.a0, mu=m.mu, outside_scaled_by_mu=m.outside_scaled_by_mu
        )

    def price_grid(self) -> PriceGrid:
        return PriceGrid(m=self.market.grid_points, p_min=self.market.p_min, p_max=self.market.p_max)

    def agent_config(self) -> AgentConfig:
        a = self.agents
        return AgentConfig(
            alpha=a.alpha, beta=a.beta, delta=a.delta, convergence_threshold=a.convergence_threshold
        )

    def mechanism_config(self) -> MechanismConfig:
        variant = Variant(self.mechanism.variant)
        cost_estimate = None
        if variant is Variant.SIMPLIFIED_AI:
            cost_estimate = self.mechanism.cost_estimate or self.market.c
        return MechanismConfig(
            variant=variant,
            activation_period=self.mechanism.activation_period,
            cost_estimate=cost_estimate,
        )

    def experiment_config(self) -> ExperimentConfig:
        e = self.experiment
        return ExperimentConfig(
            market=self.market_params(),
            grid=self.price_grid(),
            agent=self.agent_config(),
            mechanism=self.mechanism_config(),
            phase2_experiment_count=e.phase2_experiment_count,
            episode_length=e.episode_length,
            n_simulations=e.n_simulations,
            base_seed=e.base_seed,
            iteration_cap=self.agents.iteration_cap,
            pre_window=e.pre_window,
            post_window_length=e.post_window_length,
        )

    def cournot_params(self) -> CournotParams:
        c = self.cournot
        return CournotParams(Q=c.Q, c=c.c, beta=c.beta)

    def quantity_grid(self) -> np.ndarray:
        c = self.cournot
        return np.linspace(c.q_min, c.q_max, c.grid_points)


def parse_config(data: dict | None) -> LabConfig:
    """Validate an already-parsed mapping.

    Raises:
        ConfigError: If the mapping does not match the schema
    """
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"Configuration must be a mapping, got {type(data).__name__}")
    try:
        return LabConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration:\n{e}") from e


def load_config(path: str | Path | None) -> LabConfig:
    """Read a YAML file; ``None`` gives the defaults.

    Raises:
        ConfigError: If the file is missing, not YAML or invalid
    """
    if path is None:
        return LabConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Configuration file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigError(f"Malformed YAML in {path}: {e}") from e
    return parse_config(data)
