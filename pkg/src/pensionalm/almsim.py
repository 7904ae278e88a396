"""Run-off of a closed defined-benefit fund under fixed-mix investment."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import MissingChannel

DEFAULT_QUANTILES = (0.5, 0.025, 0.975, 0.005, 0.995)
SHORT_YIELD_CHANNEL = "yield:short_bond"
PAYMENT_CHANNEL = "payments"
POPULATION_CHANNEL = "population"


@dataclass(frozen=True)
class AllocationPolicy:
    """Fixed proportions, restored at the end of every year."""

    weights: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        w = {str(k): float(v) for k, v in self.weights.items()}
        if not w or any(v < 0 for v in w.values()):
            raise ValueError("weights must be nonempty and nonnegative")
        if abs(sum(w.values()) - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {sum(w.values())!r}, not 1")
        object.__setattr__(self, "weights", w)

    @classmethod
    def normalized(cls, raw: Mapping[str, float], clip_negative: bool = True) -> "AllocationPolicy":
        """Rescale raw percentages; negative holdings are dropped first when ``clip_negative``."""
        w = {k: (max(v, 0.0) if clip_negative else v) for k, v in raw.items()}
        total = sum(w.values())
        w = {k: v / total for k, v in w.items()}
        # absorb rounding so the sum is 1 to the last bit
        last = max(w, key=w.get)
        w[last] = 1.0 - sum(v for k, v in w.items() if k != last)
        return cls(w)


@dataclass
class FundState:
    wealth: float
    year: int


def portfolio_return(policy: AllocationPolicy, returns: Mapping[str, np.ndarray]) -> np.ndarray:
    total = None
    for cls, w in policy.weights.items():
        if cls not in returns:
            raise MissingChannel(f"no return channel for asset class {cls!r}")
        term = w * np.asarray(returns[cls], dtype=float)
        total = term if total is None else total + term
    return total


def simulate_fund(
    initial_wealth: float,
    policy: AllocationPolicy,
    returns: Mapping[str, np.ndarray],
    payments: np.ndarray,
    short_yield: np.ndarray,
    borrow_spread: float = 0.0,
    alive: np.ndarray | None = None,
) -> np.ndarray:
    """Wealth paths ``(S, H + 1)`` with ``W[:, 0] = initial_wealth``.

    ``returns[cls]`` and ``payments`` are ``(S, H)`` for years ``1..H``.
    ``short_yield`` holds the nominal short yield at the start of each year
    (``(S, H)``).  Positive wealth earns the fixed-mix portfolio return;
    nonpositive wealth is a debt compounding at ``exp(y + borrow_spread)``.
    The payment is deducted after growth.  ``alive`` (``(S, H)``, optional)
    marks years in which the population still exists; once it is false the
    wealth is carried unchanged.
    """
    payments = np.asarray(payments, dtype=float)
    short_yield = np.asarray(short_yield, dtype=float)
    growth = portfolio_return(policy, returns)
    if growth.shape != payments.shape or short_yield.shape != payments.shape:
        raise MissingChannel(
            f"channel shapes differ: returns {growth.shape}, payments {payments.shape}, "
            f"short yield {short_yield.shape}"
        )
    S, H = payments.shape
    W = np.empty((S, H + 1))
    W[:, 0] = initial_wealth
    debt_growth = np.exp(short_yield + borrow_spread)
    for t in range(H):
        w = W[:, t]
        nxt = np.where(w > 0, w * growth[:, t], w * debt_growth[:, t]) - payments[:, t]
        if alive is not None:
            nxt = np.where(alive[:, t], nxt, w)
        W[:, t + 1] = nxt
    return W


def simulate_fund_from_channels(
    initial_wealth: float,
    policy: AllocationPolicy,
    channels: Mapping[str, np.ndarray],
    borrow_spread: float = 0.0,
    stop_at_extinction: bool = True,
) -> np.ndarray:
    """:func:`simulate_fund` reading ``return:<class>``, payment and yield channels."""
    returns = {}
    for cls in policy.weights:
        key = f"return:{cls}"
        if key not in channels:
            raise MissingChannel(f"scenario set has no channel {key!r}")
        returns[cls] = channels[key]
    for key in (PAYMENT_CHANNEL, SHORT_YIELD_CHANNEL):
        if key not in channels:
            raise MissingChannel(f"scenario set has no channel {key!r}")
    alive = None
    if stop_at_extinction and POPULATION_CHANNEL in channels:
        # population at the start of year t (levels cover 0..H)
        alive = channels[POPULATION_CHANNEL][:, :-1] > 0
    return simulate_fund(
        initial_wealth,
        policy,
        returns,
        channels[PAYMENT_CHANNEL],
        channels[SHORT_YIELD_CHANNEL],
        borrow_spread,
        alive,
    )


def funding_benefit(initial_wealth: float, unit_payments: np.ndarray, short_yield: np.ndarray) -> float:
    """Per-member benefit at which ``initial_wealth`` exactly funds the median liability.

    ``unit_payments`` are scenario payments for a benefit of 1 and
    ``short_yield`` the matching start-of-year short yields (both
    ``(S, H)``); the median payment path is discounted along the median
    short-rate path.
    """
    pay = np.median(np.asarray(unit_payments, dtype=float), axis=0)
    y = np.median(np.asarray(short_yield, dtype=float), axis=0)
    pv = float(np.sum(pay * np.exp(-np.cumsum(y))))
    if not pv > 0:
        raise ValueError("median liability has no value")
    return initial_wealth / pv


@dataclass
class WealthSummary:
    quantiles: tuple[float, ...]
    table: np.ndarray  # (H + 1, len(quantiles))
    deficit_probability: float

    def column(self, q: float) -> np.ndarray:
        return self.table[:, self.quantiles.index(q)]

    def write_csv(self, path, start_year: int = 0) -> None:
        header = ["year"] + [_qlabel(q) for q in self.quantiles]
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t, row in enumerate(self.table):
                w.writerow([start_year + t] + [repr(float(v)) for v in row])


def _qlabel(q: float) -> str:
    return "q" + f"{100 * q:.6g}"


def summarize(paths: np.ndarray, quantiles: Sequence[float] = DEFAULT_QUANTILES) -> WealthSummary:
    """Per-year empirical quantiles (midpoint rule) and ``P(W_T < 0)``."""
    paths = np.atleast_2d(np.asarray(paths, dtype=float))
    qs = tuple(float(q) for q in quantiles)
    if any(not 0 < q < 1 for q in qs):
        raise ValueError(f"quantiles must lie in (0, 1): {qs}")
    table = np.quantile(paths, qs, axis=0, method="midpoint").T
    return WealthSummary(qs, table, float(np.mean(paths[:, -1] < 0)))


def read_summary_csv(path) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    years = np.array([int(r[0]) for r in body], dtype=np.int64)
    cols = {h: np.array([float(r[i]) for r in body]) for i, h in enumerate(header) if i}
    return years, cols
