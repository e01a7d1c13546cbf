"""Experiment orchestration.

One simulation is: phase 1 (both agents learn with the rule switched off
until their greedy policies stop changing), phase 2 (episodes of
``episode_length`` periods with random first-period prices and the rule
switched on at ``activation_period``, learning continues), then one greedy
evaluation episode.

Random streams: simulation ``sim_id`` uses
``SeedSequence(base_seed, spawn_key=(sim_id,)).spawn(4)`` as
(agent 0, agent 1, environment, evaluation), each wrapped in
``Generator(PCG64)``. Agents draw their exploration uniforms and random
actions from their own stream; the environment stream draws the phase-1
start state and the phase-2 first-period prices; the evaluation stream draws
the evaluation episode's first-period prices. Phase 2 continues the streams
where phase 1 left them, so a cost sweep restarts every estimate from a
copy of the post-phase-1 streams.
"""

import asyncio
import copy
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd

from collusion_lab import kernels
from collusion_lab.env import PricingEnv, StateCodec, build_tables
from collusion_lab.equilibrium import nash_prices
from collusion_lab.market import MarketParams, PriceGrid
from collusion_lab.mechanism import MechanismConfig, Variant
from collusion_lab.output import EventBus, OutputEventType
from collusion_lab.qlearning import AgentConfig, QTable

logger = logging.getLogger(__name__)

PHASE1_BLOCK = 100_000
PHASE2_BLOCK = 1_000
TRAINABLE_VARIANTS = {
    Variant.SIMPLIFIED_AI: kernels.VARIANT_SIMPLIFIED_AI,
    Variant.PLATFORM_FULL: kernels.VARIANT_PLATFORM_FULL,
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs.

    Attributes:
        market: Demand and cost parameters (two sellers)
        grid: Price grid (action space)
        agent: Learning hyperparameters shared by both agents
        mechanism: Rule variant, activation period and cost estimate
        phase2_experiment_count: Phase-2 episodes
        episode_length: Periods per phase-2 and evaluation episode
        n_simulations: Independent simulations (seeds)
        base_seed: Root of every random stream
        iteration_cap: Phase-1 iterations before giving up
        pre_window: [start, stop) periods averaged before activation
        post_window_length: Final periods averaged after activation
    """

    market: MarketParams = field(default_factory=MarketParams)
    grid: PriceGrid = field(default_factory=PriceGrid)
    agent: AgentConfig = field(default_factory=AgentConfig)
    mechanism: MechanismConfig = field(
        default_factory=lambda: MechanismConfig(cost_estimate=(1.0, 1.0))
    )
    phase2_experiment_count: int = 500_000
    episode_length: int = 100
    n_simulations: int = 128
    base_seed: int = 0
    iteration_cap: int = 50_000_000
    pre_window: tuple[int, int] = (30, 50)
    post_window_length: int = 20

    def __post_init__(self) -> None:
        if self.market.n_sellers != 2:
            raise ValueError(f"Experiments use two sellers, got {self.market.n_sellers}")
        if self.mechanism.variant not in TRAINABLE_VARIANTS:
            raise ValueError(
                f"Variant {self.mechanism.variant.value} cannot be trained; "
                f"use one of {sorted(v.value for v in TRAINABLE_VARIANTS)}"
            )
        if not 0 <= self.mechanism_on_period < self.episode_length:
            raise ValueError(
                f"Activation period {self.mechanism_on_period} must lie in "
                f"[0, episode_length={self.episode_length})"
            )
        if self.phase2_experiment_count < 0:
            raise ValueError(f"phase2_experiment_count must be >= 0, got {self.phase2_experiment_count}")
        if self.n_simulations < 1:
            raise ValueError(f"n_simulations must be >= 1, got {self.n_simulations}")
        if self.iteration_cap < 1:
            raise ValueError(f"iteration_cap must be >= 1, got {self.iteration_cap}")
        start, stop = self.pre_window
        if not 0 <= start < stop <= self.mechanism_on_period:
            raise ValueError(f"Invalid pre window {self.pre_window}")
        if not 1 <= self.post_window_length <= self.episode_length - self.mechanism_on_period:
            raise ValueError(f"Invalid post window length {self.post_window_length}")

    @property
    def mechanism_on_period(self) -> int:
        return self.mechanism.activation_period

    @property
    def post_window(self) -> tuple[int, int]:
        return self.episode_length - self.post_window_length, self.episode_length

    def with_cost_estimate(self, estimate: float) -> "ExperimentConfig":
        """Copy with a SimplifiedAI rule assuming cost ``estimate`` for every seller."""
        mechanism = MechanismConfig(
            variant=Variant.SIMPLIFIED_AI,
            activation_period=self.mechanism.activation_period,
            cost_estimate=(estimate,) * self.market.n_sellers,
        )
        return replace(self, mechanism=mechanism)


@dataclass
class SimulationStreams:
    agent0: np.random.Generator
    agent1: np.random.Generator
    env: np.random.Generator
    eval: np.random.Generator

    def state(self) -> dict[str, Any]:
        return {
            name: getattr(self, name).bit_generator.state
            for name in ("agent0", "agent1", "env", "eval")
        }

    @classmethod
    def from_state(cls, state: dict[str, Any]) -> "SimulationStreams":
        generators = {}
        for name in ("agent0", "agent1", "env", "eval"):
            bit_generator = np.random.PCG64()
            bit_generator.state = state[name]
            generators[name] = np.random.Generator(bit_generator)
        return cls(**generators)


def simulation_streams(base_seed: int, sim_id: int) -> SimulationStreams:
    children = np.random.SeedSequence(base_seed, spawn_key=(sim_id,)).spawn(4)
    return SimulationStreams(*(np.random.Generator(np.random.PCG64(s)) for s in children))


@dataclass(frozen=True)
class Phase1Report:
    """Outcome of phase-1 training.

    Attributes:
        converged: Both greedy policies were stable for the threshold
        iterations: Iterations run
        greedy_prices: First profile of the greedy limit cycle
        cycle_length: Length of the greedy limit cycle (1 = constant prices)
    """

    converged: bool
    iterations: int
    greedy_prices: tuple[float, ...]
    cycle_length: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "greedy_prices": list(self.greedy_prices),
            "cycle_length": self.cycle_length,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Phase1Report":
        return cls(
            converged=data["converged"],
            iterations=data["iterations"],
            greedy_prices=tuple(data["greedy_prices"]),
            cycle_length=data["cycle_length"],
        )


@dataclass
class TrainedAgents:
    """Both agents' Q tables plus the shared training counter."""

    tables: tuple[QTable, QTable]
    iteration: int
    phase1: Phase1Report
    streams: SimulationStreams

    def copy(self) -> "TrainedAgents":
        return TrainedAgents(
            tables=(self.tables[0].copy(), self.tables[1].copy()),
            iteration=self.iteration,
            phase1=self.phase1,
            streams=copy.deepcopy(self.streams),
        )

    def save(self, directory: Path, sim_id: int) -> list[Path]:
        """Write Q snapshots and a JSON sidecar; returns the written paths."""
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for i, table in enumerate(self.tables):
            path = directory / f"sim_{sim_id:04d}_agent{i}.npz"
            table.save(path)
            paths.append(path)
        meta = directory / f"sim_{sim_id:04d}.json"
        meta.write_text(
            json.dumps(
                {
                    "sim_id": sim_id,
                    "iteration": self.iteration,
                    "phase1": self.phase1.to_dict(),
                    "streams": self.streams.state(),
                },
                sort_keys=True,
            ),
            encoding="utf-8",
        )
        paths.append(meta)
        return paths

    @classmethod
    def load(cls, directory: Path, sim_id: int) -> "TrainedAgents":
        meta_path = directory / f"sim_{sim_id:04d}.json"
        if not meta_path.exists():
            raise FileNotFoundError(f"No saved agents for simulation {sim_id} in {directory}")
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        tables = tuple(QTable.load(directory / f"sim_{sim_id:04d}_agent{i}.npz") for i in range(2))
        return cls(
            tables=tables,
            iteration=meta["iteration"],
            phase1=Phase1Report.from_dict(meta["phase1"]),
            streams=SimulationStreams.from_state(meta["streams"]),
        )


def greedy_path(
    tables: Sequence[QTable], codec: StateCodec, start: tuple[int, int], length: int
) -> list[tuple[int, int]]:
    """Greedy profiles on mechanism-off states, starting after profile ``start``."""
    path = []
    profile = start
    for _ in range(length):
        base = codec.base_index(profile)
        profile = (tables[0].greedy_action(base), tables[1].greedy_action(base))
        path.append(profile)
    return path


def _greedy_cycle(tables: Sequence[QTable], codec: StateCodec, start: tuple[int, int]) -> list:
    seen: dict[tuple[int, int], int] = {}
    path = [start]
    profile = start
    while profile not in seen:
        seen[profile] = len(path) - 1
        profile = greedy_path(tables, codec, profile, 1)[0]
        path.append(profile)
    return path[seen[profile] : -1]


def detect_cycle(sequence: Sequence[Any]) -> int | None:
    """Smallest k with sequence[t] == sequence[t + k] throughout, or None.

    Only k <= len(sequence) // 2 is tested, so a None means no repetition
    could be confirmed within the window.
    """
    n = len(sequence)
    for k in range(1, n // 2 + 1):
        if all(sequence[t] == sequence[t + k] for t in range(n - k)):
            return k
    return None


def train_phase1(config: ExperimentConfig, streams: SimulationStreams) -> TrainedAgents:
    """Mechanism-off training until both agents converge or the cap is hit."""
    grid, agent = config.grid, config.agent
    codec = StateCodec(grid.m, 2, augmented=True)
    tables = (QTable(codec.total_state_count, grid.m), QTable(codec.total_state_count, grid.m))
    profit_table, _ = build_tables(config.market, grid)
    last_change = np.zeros(2, dtype=np.int64)
    start = streams.env.integers(grid.m, size=2)
    base = int(start[0]) * grid.m + int(start[1])
    iteration = 0
    status = kernels.STATUS_RUNNING
    while status == kernels.STATUS_RUNNING:
        size = min(PHASE1_BLOCK, config.iteration_cap - iteration)
        explore0 = streams.agent0.random(size)
        random0 = streams.agent0.integers(grid.m, size=size)
        explore1 = streams.agent1.random(size)
        random1 = streams.agent1.integers(grid.m, size=size)
        status, iteration, base = kernels.phase1_block(
            tables[0].values, tables[0].argmax_cache, tables[1].values, tables[1].argmax_cache,
            last_change, profit_table, base, iteration,
            agent.alpha, agent.delta, agent.beta, agent.convergence_threshold,
            config.iteration_cap, explore0, random0, explore1, random1,
        )
    for i in range(2):
        tables[i].last_change_iteration = int(last_change[i])

    final = codec.base_indices(int(base))
    cycle = _greedy_cycle(tables, codec, (final[0], final[1]))
    report = Phase1Report(
        converged=status == kernels.STATUS_CONVERGED,
        iterations=int(iteration),
        greedy_prices=tuple(float(grid.prices[k]) for k in cycle[0]),
        cycle_length=len(cycle),
    )
    return TrainedAgents(tables=tables, iteration=int(iteration), phase1=report, streams=streams)


def train_phase2(agents: TrainedAgents, config: ExperimentConfig) -> TrainedAgents:
    """Phase-2 episodes with learning on; updates ``agents`` in place."""
    grid, agent, streams = config.grid, config.agent, agents.streams
    length = config.episode_length
    profit_table, quantity_table = build_tables(config.market, grid)
    variant = TRAINABLE_VARIANTS[config.mechanism.variant]
    cost_estimate = np.asarray(config.mechanism.cost_estimate or (0.0, 0.0), dtype=np.float64)
    last_change = np.array([t.last_change_iteration for t in agents.tables], dtype=np.int64)
    iteration = agents.iteration
    remaining = config.phase2_experiment_count
    while remaining > 0:
        size = min(PHASE2_BLOCK, remaining)
        first_actions = streams.env.integers(grid.m, size=(size, 2))
        explore0 = streams.agent0.random((size, length - 1))
        random0 = streams.agent0.integers(grid.m, size=(size, length - 1))
        explore1 = streams.agent1.random((size, length - 1))
        random1 = streams.agent1.integers(grid.m, size=(size, length - 1))
        iteration = kernels.phase2_block(
            agents.tables[0].values, agents.tables[0].argmax_cache,
            agents.tables[1].values, agents.tables[1].argmax_cache,
            last_change, profit_table, quantity_table, grid.prices,
            variant, cost_estimate, config.mechanism_on_period, length, iteration,
            agent.alpha, agent.delta, agent.beta,
            first_actions, explore0, random0, explore1, random1,
        )
        remaining -= size
    for i in range(2):
        agents.tables[i].last_change_iteration = int(last_change[i])
    agents.iteration = int(iteration)
    return agents


@dataclass
class RunRecord:
    """Result of one simulation.

    Attributes:
        sim_id: Simulation index (also the seed's spawn key)
        base_seed: Experiment base seed
        converged: Phase 1 converged before the cap
        iterations: Phase-1 iterations
        cycle_detected: Greedy evaluation prices cycle (or never settle)
        cycle_length_pre, cycle_length_post: Smallest repetition period per
            window, None when none was found
        avg_price_pre, avg_price_post: Per-seller mean prices per window
        markup_pre, markup_post: (avg - p*) / p* per seller
        topup_total: Sum of top-up payments on the evaluation path
        trajectory: Evaluation episode rows
    """

    sim_id: int
    base_seed: int
    converged: bool
    iterations: int
    cycle_detected: bool = False
    cycle_length_pre: int | None = None
    cycle_length_post: int | None = None
    avg_price_pre: tuple[float, ...] | None = None
    avg_price_post: tuple[float, ...] | None = None
    markup_pre: tuple[float, ...] | None = None
    markup_post: tuple[float, ...] | None = None
    topup_total: float = 0.0
    trajectory: list[dict[str, Any]] = field(default_factory=list, repr=False)

    @property
    def included(self) -> bool:
        return self.converged and not self.cycle_detected

    def to_dict(self) -> dict[str, Any]:
        def seq(values):
            return None if values is None else list(values)

        return {
            "sim_id": self.sim_id,
            "base_seed": self.base_seed,
            "converged": self.converged,
            "iterations": self.iterations,
            "cycle_detected": self.cycle_detected,
            "cycle_length_pre": self.cycle_length_pre,
            "cycle_length_post": self.cycle_length_post,
            "avg_price_pre": seq(self.avg_price_pre),
            "avg_price_post": seq(self.avg_price_post),
            "markup_pre": seq(self.markup_pre),
            "markup_post": seq(self.markup_post),
            "topup_total": self.topup_total,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunRecord":
        def tup(values):
            return None if values is None else tuple(values)

        return cls(
            sim_id=data["sim_id"],
            base_seed=data["base_seed"],
            converged=data["converged"],
            iterations=data["iterations"],
            cycle_detected=data["cycle_detected"],
            cycle_length_pre=data.get("cycle_length_pre"),
            cycle_length_post=data.get("cycle_length_post"),
            avg_price_pre=tup(data.get("avg_price_pre")),
            avg_price_post=tup(data.get("avg_price_post")),
            markup_pre=tup(data.get("markup_pre")),
            markup_post=tup(data.get("markup_post")),
            topup_total=data.get("topup_total", 0.0),
        )


def _markups(prices: np.ndarray, nash: np.ndarray) -> tuple[float, ...]:
    return tuple(float(x) for x in (prices - nash) / nash)


def evaluate(
    agents: TrainedAgents,
    config: ExperimentConfig,
    sim_id: int,
    nash: np.ndarray | None = None,
) -> RunRecord:
    """One greedy episode; windows averaged, cycles detected, top-ups tallied."""
    if nash is None:
        nash = nash_prices(config.market).prices
    grid = config.grid
    env = PricingEnv(config.market, grid, mechanism=config.mechanism, episode_length=config.episode_length)
    first = agents.streams.eval.integers(grid.m, size=2)
    result = env.reset(first)
    steps = [result]
    while result.period < config.episode_length - 1:
        observations = env.observations()
        actions = [agents.tables[i].greedy_action(observations[i]) for i in range(2)]
        result = env.step(actions)
        steps.append(result)

    prices = np.array([s.prices for s in steps])
    states = [(s.actions, s.state) for s in steps]
    pre_lo, pre_hi = config.pre_window
    post_lo, post_hi = config.post_window
    cycle_pre = detect_cycle(states[pre_lo:pre_hi])
    cycle_post = detect_cycle(states[post_lo:post_hi])
    cycle_detected = any(k is None or k > 1 for k in (cycle_pre, cycle_post))
    avg_pre = prices[pre_lo:pre_hi].mean(axis=0)
    avg_post = prices[post_lo:post_hi].mean(axis=0)
    topup_total = env.rule.ledger.cumulative_total if env.rule is not None else 0.0

    trajectory = [
        {
            "sim_id": sim_id,
            "episode": 0,
            "period": s.period,
            "price_1": float(s.prices[0]),
            "price_2": float(s.prices[1]),
            "profit_1": float(s.profits[0]),
            "profit_2": float(s.profits[1]),
            "topup_1": float(s.topups[0]),
            "topup_2": float(s.topups[1]),
            "mech_phase": s.phase.value,
        }
        for s in steps
    ]
    return RunRecord(
        sim_id=sim_id,
        base_seed=config.base_seed,
        converged=agents.phase1.converged,
        iterations=agents.phase1.iterations,
        cycle_detected=cycle_detected,
        cycle_length_pre=cycle_pre,
        cycle_length_post=cycle_post,
        avg_price_pre=tuple(float(x) for x in avg_pre),
        avg_price_post=tuple(float(x) for x in avg_post),
        markup_pre=_markups(avg_pre, nash),
        markup_post=_markups(avg_post, nash),
        topup_total=float(topup_total),
        trajectory=trajectory,
    )


def run_simulation(
    sim_id: int,
    config: ExperimentConfig,
    nash: np.ndarray | None = None,
    agents: TrainedAgents | None = None,
) -> tuple[RunRecord, TrainedAgents]:
    """Train (unless ``agents`` are given after phase 1), run phase 2, evaluate.

    Returns the record and the agents as phase 2 left them; given agents are
    trained in place. A nonconverged phase 1 skips phase 2 and evaluation;
    the record is flagged and excluded from aggregates.
    """
    if agents is None:
        agents = train_phase1(config, simulation_streams(config.base_seed, sim_id))
    if not agents.phase1.converged:
        logger.info("Simulation %d hit the iteration cap after %d iterations", sim_id, agents.phase1.iterations)
        record = RunRecord(
            sim_id=sim_id,
            base_seed=config.base_seed,
            converged=False,
            iterations=agents.phase1.iterations,
        )
        return record, agents
    train_phase2(agents, config)
    return evaluate(agents, config, sim_id, nash), agents


@dataclass(frozen=True)
class Summary:
    """Aggregate over converged, non-cycling simulations.

    Per-seller tuples are indexed by seller; the scalar fields pool sellers
    by averaging their per-seller values.
    """

    status: str
    n_total: int
    n_converged: int
    n_cycles: int
    n_included: int
    topup_total: float
    avg_pre: tuple[float, ...] = ()
    avg_post: tuple[float, ...] = ()
    markup_pre: tuple[float, ...] = ()
    markup_post: tuple[float, ...] = ()
    improvement_pct: tuple[float | None, ...] = ()
    included_sim_ids: tuple[int, ...] = ()

    @staticmethod
    def _pool(values: Sequence[float | None]) -> float | None:
        if not values or any(v is None for v in values):
            return None
        return math.fsum(values) / len(values)

    def to_dict(self) -> dict[str, Any]:
        pooled_pre = self._pool(self.markup_pre)
        pooled_post = self._pool(self.markup_post)
        return {
            "status": self.status,
            "avg_pre": self._pool(self.avg_pre),
            "avg_post": self._pool(self.avg_post),
            "markup_pre": pooled_pre,
            "markup_post": pooled_post,
            "improvement_pct": _improvement(pooled_pre, pooled_post),
            "n_total": self.n_total,
            "n_converged": self.n_converged,
            "n_cycles": self.n_cycles,
            "n_included": self.n_included,
            "topup_total": self.topup_total,
            "included_sim_ids": list(self.included_sim_ids),
            "per_seller": {
                "avg_pre": list(self.avg_pre),
                "avg_post": list(self.avg_post),
                "markup_pre": list(self.markup_pre),
                "markup_post": list(self.markup_post),
                "improvement_pct": list(self.improvement_pct),
            },
        }


def _improvement(markup_pre: float | None, markup_post: float | None) -> float | None:
    if markup_pre is None or markup_post is None or markup_pre == 0:
        return None
    return 100.0 * (1.0 - markup_post / markup_pre)


def aggregate(records: Sequence[RunRecord], nash: Sequence[float]) -> Summary:
    """Order-independent fold over records.

    Raises:
        ValueError: If ``records`` is empty
    """
    if not records:
        raise ValueError("Cannot aggregate zero records")
    records = sorted(records, key=lambda r: r.sim_id)
    nash = np.asarray(nash, dtype=np.float64)
    included = [r for r in records if r.included]
    base = dict(
        n_total=len(records),
        n_converged=sum(r.converged for r in records),
        n_cycles=sum(r.converged and r.cycle_detected for r in records),
        n_included=len(included),
        topup_total=math.fsum(r.topup_total for r in records),
    )
    if not included:
        logger.warning("No usable simulation among %d records", len(records))
        return Summary(status="empty", **base)
    n = len(nash)
    avg_pre = np.array([math.fsum(r.avg_price_pre[i] for r in included) / len(included) for i in range(n)])
    avg_post = np.array([math.fsum(r.avg_price_post[i] for r in included) / len(included) for i in range(n)])
    markup_pre = _markups(avg_pre, nash)
    markup_post = _markups(avg_post, nash)
    return Summary(
        status="ok",
        avg_pre=tuple(float(x) for x in avg_pre),
        avg_post=tuple(float(x) for x in avg_post),
        markup_pre=markup_pre,
        markup_post=markup_post,
        improvement_pct=tuple(_improvement(a, b) for a, b in zip(markup_pre, markup_post)),
        included_sim_ids=tuple(r.sim_id for r in included),
        **base,
    )


def trajectory_frame(records: Sequence[RunRecord]) -> pd.DataFrame:
    columns = [
        "sim_id", "episode", "period", "price_1", "price_2",
        "profit_1", "profit_2", "topup_1", "topup_2", "mech_phase",
    ]
    rows = [row for r in sorted(records, key=lambda r: r.sim_id) for row in r.trajectory]
    return pd.DataFrame(rows, columns=columns)


def average_price_series(
    trajectories: pd.DataFrame, sim_ids: Sequence[int] | None = None
) -> pd.DataFrame:
    """Mean price per period across simulations (optionally only ``sim_ids``)."""
    if sim_ids is not None:
        trajectories = trajectories[trajectories["sim_id"].isin(list(sim_ids))]
    grouped = trajectories.groupby("period", sort=True)
    series = grouped[["price_1", "price_2"]].mean()
    series["n_runs"] = grouped["sim_id"].nunique()
    return series.reset_index()


@dataclass
class ExperimentResult:
    """Records and summary of one experiment.

    ``agents`` holds each simulation's agents as they left phase 1; ``trained``
    holds the converged simulations' agents after phase 2.
    """

    records: list[RunRecord]
    summary: Summary
    agents: dict[int, TrainedAgents] = field(default_factory=dict, repr=False)
    trained: dict[int, TrainedAgents] = field(default_factory=dict, repr=False)


async def _emit(bus: EventBus | None, event_type: OutputEventType, source: str, content: str, **metadata) -> None:
    if bus is not None:
        await bus.publish(event_type, source, content, **metadata)


async def _guarded(bus: EventBus | None, source: str, work):
    """Await ``work``; on failure publish an ERROR event for ``source`` and re-raise."""
    try:
        return await work
    except Exception as e:
        logger.error("%s failed: %s", source, e)
        if bus is not None:
            await bus.report_error(source, e)
        raise


async def _report_record(bus: EventBus | None, record: RunRecord, label: str = "") -> None:
    source = f"sim_{record.sim_id:04d}"
    suffix = f" ({label})" if label else ""
    if not record.converged:
        await _emit(
            bus, OutputEventType.NONCONVERGENCE, source,
            f"No convergence after {record.iterations} iterations; excluded{suffix}",
            iterations=record.iterations,
        )
        return
    if record.cycle_detected:
        await _emit(
            bus, OutputEventType.PRICE_CYCLE, source,
            f"Greedy prices cycle (pre {record.cycle_length_pre}, post {record.cycle_length_post}); excluded{suffix}",
            cycle_length_pre=record.cycle_length_pre,
            cycle_length_post=record.cycle_length_post,
        )
    if record.topup_total > 0:
        logger.warning("Simulation %d paid top-ups on the greedy path: %g", record.sim_id, record.topup_total)
        await _emit(
            bus, OutputEventType.TOPUP_ON_PATH, source,
            f"Top-ups paid on the greedy path: {record.topup_total:.6g}{suffix}",
            topup_total=record.topup_total,
        )
    await _emit(
        bus, OutputEventType.SIMULATION_END, source,
        f"pre {_fmt(record.avg_price_pre)} post {_fmt(record.avg_price_post)}{suffix}",
        **record.to_dict(),
    )


def _fmt(values: Sequence[float] | None) -> str:
    return "-" if values is None else "/".join(f"{v:.4f}" for v in values)


async def _phase1(config: ExperimentConfig, sim_id: int, bus: EventBus | None) -> TrainedAgents:
    source = f"sim_{sim_id:04d}"
    await _emit(bus, OutputEventType.SIMULATION_START, source, "Phase 1 training started", sim_id=sim_id)
    agents = await asyncio.to_thread(train_phase1, config, simulation_streams(config.base_seed, sim_id))
    if agents.phase1.converged:
        await _emit(
            bus, OutputEventType.PHASE1_CONVERGED, source,
            f"Converged after {agents.phase1.iterations} iterations at {_fmt(agents.phase1.greedy_prices)}",
            **agents.phase1.to_dict(),
        )
    return agents


async def run_experiment(
    config: ExperimentConfig,
    bus: EventBus | None = None,
    threads: int = 1,
    phases: str = "all",
    sim_ids: Sequence[int] | None = None,
    resume_from: Path | None = None,
) -> ExperimentResult:
    """Run ``n_simulations`` simulations, at most ``threads`` at a time.

    ``phases`` is "1" (phase 1 only, no records evaluated), "2" (resume from
    phase-1 snapshots in ``resume_from``) or "all".
    """
    if phases not in ("1", "2", "all"):
        raise ValueError(f"phases must be '1', '2' or 'all', got {phases!r}")
    if phases == "2" and resume_from is None:
        raise ValueError("Phase 2 alone needs a directory of phase-1 snapshots")
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    nash = nash_prices(config.market).prices
    ids = list(range(config.n_simulations)) if sim_ids is None else list(sim_ids)
    semaphore = asyncio.Semaphore(threads)

    async def one(sim_id: int) -> tuple[RunRecord, TrainedAgents, TrainedAgents | None]:
        async with semaphore:
            if phases == "2":
                agents = await asyncio.to_thread(TrainedAgents.load, resume_from, sim_id)
            else:
                agents = await _phase1(config, sim_id, bus)
            if phases == "1":
                record = RunRecord(
                    sim_id=sim_id,
                    base_seed=config.base_seed,
                    converged=agents.phase1.converged,
                    iterations=agents.phase1.iterations,
                )
                if not record.converged:
                    await _report_record(bus, record)
                return record, agents, None
            record, trained = await asyncio.to_thread(
                run_simulation, sim_id, config, nash, agents.copy()
            )
            await _report_record(bus, record)
            return record, agents, trained if record.converged else None

    results = await asyncio.gather(*(_guarded(bus, f"sim_{i:04d}", one(i)) for i in ids))
    records = [r for r, _, _ in results]
    summary = aggregate(records, nash)
    return ExperimentResult(
        records=records,
        summary=summary,
        agents={r.sim_id: a for r, a, _ in results},
        trained={r.sim_id: t for r, _, t in results if t is not None},
    )


@dataclass(frozen=True)
class SweepRow:
    cost: float
    n_sims: int
    n_no_cycle: int
    markup: float | None
    markup_2spdr: float | None
    improvement_pct: float | None

    def to_dict(self) -> dict[str, Any]:
        return {
            "cost": self.cost,
            "n_sims": self.n_sims,
            "n_no_cycle": self.n_no_cycle,
            "markup": self.markup,
            "markup_2spdr": self.markup_2spdr,
            "improvement_pct": self.improvement_pct,
        }


async def cost_sweep(
    config: ExperimentConfig,
    estimates: Sequence[float],
    bus: EventBus | None = None,
    threads: int = 1,
) -> list[SweepRow]:
    """Phase 2 + evaluation per cost estimate, reusing each seed's phase-1 agents.

    Raises:
        ValueError: If an estimate is not positive
    """
    for estimate in estimates:
        if not estimate > 0:
            raise ValueError(f"Cost estimates must be positive, got {estimate}")
    if not estimates:
        return []
    nash = nash_prices(config.market).prices
    semaphore = asyncio.Semaphore(threads)

    async def phase1(sim_id: int) -> TrainedAgents:
        async with semaphore:
            return await _phase1(config, sim_id, bus)

    trained = await asyncio.gather(
        *(_guarded(bus, f"sim_{i:04d}", phase1(i)) for i in range(config.n_simulations))
    )

    rows = []
    for estimate in estimates:
        variant_config = config.with_cost_estimate(estimate)

        async def one(sim_id: int, agents: TrainedAgents) -> RunRecord:
            async with semaphore:
                record, _ = await asyncio.to_thread(
                    run_simulation, sim_id, variant_config, nash, agents.copy()
                )
            await _report_record(bus, record, label=f"cost estimate {estimate:g}")
            return record

        records = await asyncio.gather(
            *(_guarded(bus, f"sim_{i:04d}", one(i, a)) for i, a in enumerate(trained))
        )
        summary = aggregate(records, nash).to_dict()
        row = SweepRow(
            cost=float(estimate),
            n_sims=len(records),
            n_no_cycle=summary["n_included"],
            markup=summary["markup_pre"],
            markup_2spdr=summary["markup_post"],
            improvement_pct=summary["improvement_pct"],
        )
        rows.append(row)
        await _emit(
            bus, OutputEventType.SWEEP_ROW, "sweep",
            f"Cost estimate {estimate:g}: improvement {row.improvement_pct}",
            **row.to_dict(),
        )
    return rows
