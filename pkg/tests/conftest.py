"""Shared pytest fixtures."""

import pytest
from dotenv import load_dotenv

from collusion_lab.harness import ExperimentConfig
from collusion_lab.market import CournotParams, MarketParams, PriceGrid
from collusion_lab.mechanism import MechanismConfig, Variant
from collusion_lab.qlearning import AgentConfig

# Load environment variables from .env file at test startup
load_dotenv()


@pytest.fixture
def params() -> MarketParams:
    """Symmetric baseline market: a=(2,2), c=(1,1), mu=0.25."""
    return MarketParams()


@pytest.fixture
def grid() -> PriceGrid:
    """15 prices from 1.0 to 2.1."""
    return PriceGrid()


@pytest.fixture
def cournot() -> CournotParams:
    return CournotParams()


@pytest.fixture
def tiny_config() -> ExperimentConfig:
    """A three-price experiment that converges immediately and runs in well under a second."""
    return ExperimentConfig(
        grid=PriceGrid(m=3),
        agent=AgentConfig(beta=1e-3, convergence_threshold=1),
        mechanism=MechanismConfig(variant=Variant.PLATFORM_FULL, activation_period=5),
        phase2_experiment_count=3,
        episode_length=10,
        n_simulations=2,
        base_seed=7,
        iteration_cap=1_000,
        pre_window=(1, 5),
        post_window_length=3,
    )
