"""Block-wise scenario generation: factors, asset returns and liabilities.

Every block of scenarios is produced independently from its own random
streams (factor innovations, recovery draws, binomial survival), so the
output is identical whatever the number of worker threads, and a block's
results can be written out or reduced without holding the full tensor.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .assets import FactorRoles, PortfolioSpec, default_portfolios, nominal_yields, path_returns
from .errors import DimensionMismatch, MissingChannel
from .liabilities import AdjustmentFunction, GROUPS, adjustment_path, freeze_factors
from .mortality import MortalityBasis, project_cohort
from .transforms import cpi_index
from .varmodel import (
    BLOCK_SIZE,
    STREAM_FACTORS,
    STREAM_POPULATION,
    STREAM_RECOVERY,
    ScenarioSet,
    VarModel,
    block_rng,
    run_blocks,
    simulate_block,
    symmetric_sqrt,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Cohort:
    age: float
    gender: str
    count: int
    benefit: float = 1.0


@dataclass
class PipelineConfig:
    model: VarModel
    x0: np.ndarray
    horizon: int
    portfolios: Sequence[PortfolioSpec] = field(default_factory=default_portfolios)
    roles: FactorRoles = field(default_factory=FactorRoles)
    cohorts: Sequence[Cohort] = ()
    adjustment: AdjustmentFunction = field(default_factory=AdjustmentFunction.uss_like)
    basis: MortalityBasis = field(default_factory=MortalityBasis)
    block_size: int = BLOCK_SIZE

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.x0.shape != (self.model.n,):
            raise DimensionMismatch(f"initial state {self.x0.shape} does not match n={self.model.n}")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        self.model.offsets(self.horizon)

    def channel_widths(self) -> dict[str, int]:
        H = self.horizon
        out = {f"return:{p.asset_class.value}": H for p in self.portfolios}
        if self.portfolios:
            out["yield:short_bond"] = H
        if self.cohorts:
            out.update({"cpi": H + 1, "population": H + 1, "benefits": H + 1, "payments": H})
        return out


class Sink(Protocol):
    def write(self, start: int, stop: int, data: np.ndarray | None, channels: dict[str, np.ndarray]) -> None: ...


class MemorySink:
    """Collects everything into a :class:`ScenarioSet`."""

    def __init__(self, cfg: PipelineConfig, n_scenarios: int, seed: int, keep_factors: bool = True):
        shape = (n_scenarios, cfg.horizon + 1, cfg.model.n) if keep_factors else (n_scenarios, 0, 0)
        self.scenarios = ScenarioSet(
            int(seed),
            cfg.model.factor_names,
            np.empty(shape),
            {k: np.empty((n_scenarios, w)) for k, w in cfg.channel_widths().items()},
        )
        self.keep_factors = keep_factors

    def write(self, start, stop, data, channels):
        if self.keep_factors and data is not None:
            self.scenarios.data[start:stop] = data
        for k, v in channels.items():
            self.scenarios.channels[k][start:stop] = v


class NullSink:
    def write(self, start, stop, data, channels):
        pass


@dataclass
class StageTimes:
    factors: float = 0.0
    returns: float = 0.0
    liabilities: float = 0.0
    total: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {"factors": self.factors, "returns": self.returns, "liabilities": self.liabilities, "total": self.total}


def block_returns(
    paths: np.ndarray,
    cfg: PipelineConfig,
    seed: int,
    block: int,
) -> dict[str, np.ndarray]:
    names = cfg.model.factor_names
    out = {}
    if not cfg.portfolios:
        return out
    rng = block_rng(seed, block, STREAM_RECOVERY)
    for cls, r in path_returns(paths, cfg.portfolios, rng, names, cfg.roles).items():
        out[f"return:{cls}"] = r
    out["yield:short_bond"] = nominal_yields(paths[:, :-1], names, cfg.roles)["short_bond"]
    return out


def block_liabilities(
    paths: np.ndarray,
    cfg: PipelineConfig,
    seed: int,
    block: int,
) -> dict[str, np.ndarray]:
    """CPI, population, unindexed benefit outgo and nominal payments.

    Survival during year ``t`` uses the mortality factors of year ``t``
    (``paths[:, t]``, ``t >= 1``).  Payments in year ``t`` are
    ``F_t * survivors_t * benefit``.
    """
    if not cfg.cohorts:
        return {}
    names = list(cfg.model.factor_names)
    S, H1, _ = paths.shape
    H = H1 - 1
    infl = paths[:, :, names.index(cfg.roles.inflation)]
    cpi = cpi_index(infl)
    rng = block_rng(seed, block, STREAM_POPULATION)
    population = np.zeros((S, H1))
    benefits = np.zeros((S, H1))
    k = cfg.basis.n_factors
    for c in cfg.cohorts:
        cols = [names.index(f"v{i + 1}_{c.gender}") for i in range(k)]
        v_path = paths[:, 1:, :][:, :, cols]
        ages = [c.age + t for t in range(H)]
        counts = project_cohort(c.count, ages, v_path, cfg.basis, rng).astype(float)
        population += counts
        benefits += counts * c.benefit
    return {
        "cpi": cpi,
        "population": population,
        "benefits": benefits,
        "payments": indexed_payments(cfg.adjustment, cpi, benefits),
    }


def indexed_payments(adjustment: AdjustmentFunction, cpi: np.ndarray, benefits: np.ndarray) -> np.ndarray:
    """Payments for years ``1..H`` from CPI levels and unindexed outgo (both ``(S, H + 1)``)."""
    return (adjustment_path(adjustment, cpi) * benefits)[:, 1:]


def generate(
    cfg: PipelineConfig,
    n_scenarios: int,
    seed: int,
    threads: int = 1,
    sink: Sink | None = None,
    keep_factors: bool = True,
) -> tuple[ScenarioSet | None, StageTimes]:
    """Simulate ``n_scenarios`` scenarios block by block.

    With the default sink the result is returned as a :class:`ScenarioSet`
    (factor tensor omitted when ``keep_factors`` is false).  Stage times are
    summed over blocks; ``total`` is wall-clock.
    """
    memory = None
    if sink is None:
        memory = MemorySink(cfg, n_scenarios, seed, keep_factors)
        sink = memory
    root = symmetric_sqrt(cfg.model.sigma)
    times = StageTimes()
    lock = threading.Lock()
    t_start = time.perf_counter()

    def work(b, start, stop):
        t0 = time.perf_counter()
        paths = simulate_block(cfg.model, cfg.x0, cfg.horizon, stop - start, block_rng(seed, b, STREAM_FACTORS), root)
        t1 = time.perf_counter()
        channels = block_returns(paths, cfg, seed, b)
        t2 = time.perf_counter()
        channels.update(block_liabilities(paths, cfg, seed, b))
        t3 = time.perf_counter()
        sink.write(start, stop, paths, channels)
        with lock:
            times.factors += t1 - t0
            times.returns += t2 - t1
            times.liabilities += t3 - t2

    run_blocks(work, n_scenarios, threads, cfg.block_size)
    times.total = time.perf_counter() - t_start
    logger.info("generated %d scenarios in %.2fs", n_scenarios, times.total)
    return (memory.scenarios if memory else None), times


def recompute_channels(scenarios: ScenarioSet, cfg: PipelineConfig, threads: int = 1) -> ScenarioSet:
    """Rebuild return and liability channels from the (possibly modified) factor paths.

    Uses the same per-block random streams as :func:`generate`, so recovery
    and survival draws are common random numbers across variants.
    """
    if scenarios.data.shape[1:] != (cfg.horizon + 1, cfg.model.n):
        raise MissingChannel("scenario set carries no factor paths to recompute from")
    out = ScenarioSet(scenarios.seed, scenarios.factor_names, scenarios.data, {})
    sink = MemorySink(cfg, scenarios.n_scenarios, scenarios.seed, keep_factors=False)

    def work(b, start, stop):
        paths = scenarios.data[start:stop]
        channels = block_returns(paths, cfg, scenarios.seed, b)
        channels.update(block_liabilities(paths, cfg, scenarios.seed, b))
        sink.write(start, stop, None, channels)

    run_blocks(work, scenarios.n_scenarios, threads, cfg.block_size)
    out.channels = sink.scenarios.channels
    return out


def decompose(scenarios: ScenarioSet, cfg: PipelineConfig, groups: Sequence[str], threads: int = 1) -> ScenarioSet:
    """Scenario set with the risk ``groups`` replaced by median behaviour.

    Factors of each group are frozen at their median paths, the channels
    are recomputed, and channels owned by a group (population and benefit
    outgo for longevity) are then frozen as well before payments are
    indexed.
    """
    frozen = freeze_factors(scenarios, groups, GROUPS)
    rebuilt = freeze_factors(recompute_channels(frozen, cfg, threads), groups, GROUPS)
    if "benefits" in rebuilt.channels:
        ch = rebuilt.channels
        ch["payments"] = indexed_payments(cfg.adjustment, ch["cpi"], ch["benefits"])
    return rebuilt
