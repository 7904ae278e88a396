"""Investment returns on the modelled asset classes.

Bond portfolios are summarised by their yield to maturity and duration;
log-returns follow from a Taylor expansion of the log-price in time and
yield.  Nominal yields are recovered from the simulated factors by
inverting the factor transforms.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import DataValidationError, DimensionMismatch, MissingConvexity, NoBracket
from .transforms import corporate_from_spread, nominal_from_real_yield

REAL_YIELD_SHIFT = 0.05
CREDIT_SPREAD_SHIFT = 0.01


class AssetClass(str, enum.Enum):
    EQUITY = "equity"
    SHORT_BOND = "short_bond"
    LONG_BOND = "long_bond"
    ILB = "ilb"
    CORPORATE = "corporate"


class IndexLinkage(str, enum.Enum):
    FIXED = "fixed"
    CPI = "cpi"
    RECOVERY = "recovery"


ASSET_CLASSES = tuple(c.value for c in AssetClass)


@dataclass(frozen=True)
class CashflowSchedule:
    times: np.ndarray
    amounts: np.ndarray

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.times, dtype=float))
        c = np.atleast_1d(np.asarray(self.amounts, dtype=float))
        if t.ndim != 1 or t.shape != c.shape or t.size == 0:
            raise DataValidationError("cash-flow times and amounts must be nonempty and equal length")
        if np.any(t <= 0) or np.any(np.diff(t) <= 0):
            raise DataValidationError("cash-flow times must be positive and strictly increasing")
        if np.any(c <= 0):
            raise DataValidationError("cash-flow amounts must be positive")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "amounts", c)


def price(schedule: CashflowSchedule, Y: float, index: float = 1.0) -> float:
    return float(index * np.sum(schedule.amounts * np.exp(-Y * schedule.times)))


def _moments(schedule: CashflowSchedule, Y: float, index: float):
    w = index * schedule.amounts * np.exp(-Y * schedule.times)
    P = w.sum()
    return P, (w * schedule.times).sum() / P, (w * schedule.times**2).sum() / P


def duration(schedule: CashflowSchedule, Y: float, index: float = 1.0) -> float:
    return float(_moments(schedule, Y, index)[1])


def convexity(schedule: CashflowSchedule, Y: float, index: float = 1.0) -> float:
    return float(_moments(schedule, Y, index)[2])


def ytm_solve(
    schedule: CashflowSchedule,
    target: float,
    index: float = 1.0,
    rtol: float = 1e-12,
    max_iter: int = 200,
) -> float:
    """Yield ``Y >= 0`` at which the discounted cash-flows equal ``target``.

    Works on ``g(Y) = ln P(Y) - ln target``, which is decreasing with
    derivative ``-D``.  Newton steps are taken while they stay inside the
    current bracket and bisection otherwise.
    """
    if not target > 0:
        raise NoBracket(f"price must be positive, got {target}")
    undiscounted = index * schedule.amounts.sum()
    if target > undiscounted * (1 + 1e-15):
        raise NoBracket(f"price {target} exceeds undiscounted cash-flows {undiscounted}")
    log_target = math.log(target)

    def g(y):
        P, D, _ = _moments(schedule, y, index)
        return math.log(P) - log_target, D

    lo, hi = 0.0, 0.1
    g_lo, _ = g(lo)
    if g_lo <= 0:
        return 0.0
    g_hi, _ = g(hi)
    while g_hi > 0:
        lo, g_lo = hi, g_hi
        hi *= 2
        if hi > 1e6:
            raise NoBracket(f"no yield found for price {target}")
        g_hi, _ = g(hi)

    y = 0.5 * (lo + hi)
    for _ in range(max_iter):
        val, D = g(y)
        if abs(val) < rtol:
            return y
        if val > 0:
            lo = y
        else:
            hi = y
        nxt = y + val / D
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        if nxt == y:
            return y
        y = nxt
    return y


def bond_log_return(
    Y_t,
    D: float,
    dt: float,
    dY,
    dlnI,
    order: int = 1,
    C: float | None = None,
    Y_s=None,
):
    """Taylor approximation of the log-price change over ``dt``.

    First order uses the carry ``Y_t dt``; second order uses ``Y_s dt`` and
    adds ``(C - D^2) dY^2 / 2``.  Works elementwise on arrays.
    """
    if order == 1:
        return Y_t * dt - D * dY + dlnI
    if order == 2:
        if C is None or Y_s is None:
            raise MissingConvexity("second-order return needs convexity C and end yield Y_s")
        return Y_s * dt - D * dY + 0.5 * (C - D * D) * dY * dY + dlnI
    raise ValueError(f"order must be 1 or 2, got {order}")


@dataclass(frozen=True)
class RecoveryModel:
    """``log(delta - dlnI) ~ N(mu, sigma2)``."""

    delta: float = 0.1
    mu: float = -2.29
    sigma2: float = 7.47e-4

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if self.delta < 0:
            raise ValueError(f"delta must be nonnegative, got {self.delta}")

    @property
    def median(self) -> float:
        return self.delta - math.exp(self.mu)


def sample_recovery(model: RecoveryModel, rng: np.random.Generator, size=None):
    z = rng.normal(model.mu, math.sqrt(model.sigma2), size=size)
    return model.delta - np.exp(z)


@dataclass(frozen=True)
class PortfolioSpec:
    """One asset class.  ``duration`` is ignored for equity."""

    asset_class: AssetClass
    duration: float = 0.0
    index_linkage: IndexLinkage = IndexLinkage.FIXED
    recovery: RecoveryModel | None = None
    order: int = 1
    convexity_spread: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "asset_class", AssetClass(self.asset_class))
        object.__setattr__(self, "index_linkage", IndexLinkage(self.index_linkage))
        if self.asset_class is not AssetClass.EQUITY and not self.duration > 0:
            raise ValueError(f"{self.asset_class.value}: duration must be positive")
        if self.asset_class is AssetClass.CORPORATE and self.recovery is None:
            raise ValueError("corporate bonds need a recovery model")
        if self.index_linkage is IndexLinkage.RECOVERY and self.recovery is None:
            raise ValueError("recovery linkage needs a recovery model")
        if self.order not in (1, 2):
            raise ValueError(f"order must be 1 or 2, got {self.order}")

    @property
    def convexity(self) -> float:
        # constant-duration bullet proxy
        return self.duration**2 + self.convexity_spread**2


def default_portfolios(recovery: RecoveryModel | None = None) -> list[PortfolioSpec]:
    """The five classes with the published durations."""
    recovery = recovery or RecoveryModel()
    return [
        PortfolioSpec(AssetClass.EQUITY),
        PortfolioSpec(AssetClass.SHORT_BOND, 2.30),
        PortfolioSpec(AssetClass.LONG_BOND, 6.00),
        PortfolioSpec(AssetClass.ILB, 7.00, IndexLinkage.CPI),
        PortfolioSpec(AssetClass.CORPORATE, 9.20, IndexLinkage.RECOVERY, recovery),
    ]


@dataclass(frozen=True)
class FactorRoles:
    """Names of the factors the asset model reads."""

    inflation: str = "inflation"
    ltie_spread: str = "ltie_spread"
    stock: str = "stock_log"
    real_short: str = "real_ytm_short"
    real_long: str = "real_ytm_long"
    credit: str = "credit_spread_log"
    real_shift: float = REAL_YIELD_SHIFT
    credit_shift: float = CREDIT_SPREAD_SHIFT

    def indices(self, names: Sequence[str]) -> dict[str, int]:
        names = list(names)
        out = {}
        for role in ("inflation", "ltie_spread", "stock", "real_short", "real_long", "credit"):
            nm = getattr(self, role)
            if nm not in names:
                raise DimensionMismatch(f"factor {nm!r} ({role}) missing from state")
            out[role] = names.index(nm)
        return out


def nominal_yields(x, names: Sequence[str], roles: FactorRoles = FactorRoles()) -> dict[str, np.ndarray]:
    """Yields implied by states ``x`` (``(..., n)``) for each bond class."""
    x = np.asarray(x, dtype=float)
    ix = roles.indices(names)
    infl = x[..., ix["inflation"]]
    short = nominal_from_real_yield(x[..., ix["real_short"]], infl, roles.real_shift)
    long = nominal_from_real_yield(x[..., ix["real_long"]], infl, roles.real_shift)
    corp = corporate_from_spread(x[..., ix["credit"]], long, roles.credit_shift)
    ltie = x[..., ix["ltie_spread"]] + infl
    return {
        AssetClass.SHORT_BOND.value: short,
        AssetClass.LONG_BOND.value: long,
        AssetClass.CORPORATE.value: corp,
        AssetClass.ILB.value: long - ltie,
    }


def asset_returns(
    x_prev,
    x_next,
    specs: Sequence[PortfolioSpec],
    rng: np.random.Generator | None,
    names: Sequence[str],
    roles: FactorRoles = FactorRoles(),
    recovery_draws: Mapping[str, np.ndarray] | None = None,
) -> dict[str, np.ndarray]:
    """Gross one-year returns per asset class between two states.

    ``x_prev`` and ``x_next`` are ``(..., n)``.  Recovery terms are drawn
    from ``rng`` unless supplied in ``recovery_draws`` (keyed by class).
    """
    x_prev = np.asarray(x_prev, dtype=float)
    x_next = np.asarray(x_next, dtype=float)
    if x_prev.shape != x_next.shape:
        raise DimensionMismatch(f"states differ in shape: {x_prev.shape} vs {x_next.shape}")
    ix = roles.indices(names)
    y0 = nominal_yields(x_prev, names, roles)
    y1 = nominal_yields(x_next, names, roles)
    out = {}
    for spec in specs:
        cls = spec.asset_class.value
        if spec.asset_class is AssetClass.EQUITY:
            out[cls] = np.exp(x_next[..., ix["stock"]] - x_prev[..., ix["stock"]])
            continue
        if spec.index_linkage is IndexLinkage.CPI:
            dlnI = x_next[..., ix["inflation"]]
        elif spec.index_linkage is IndexLinkage.RECOVERY:
            if recovery_draws is not None and cls in recovery_draws:
                dlnI = recovery_draws[cls]
            else:
                dlnI = sample_recovery(spec.recovery, rng, size=x_prev.shape[:-1])
        else:
            dlnI = 0.0
        Yt, Ys = y0[cls], y1[cls]
        lr = bond_log_return(Yt, spec.duration, 1.0, Ys - Yt, dlnI, spec.order, spec.convexity, Ys)
        out[cls] = np.exp(lr)
    return out


def path_returns(
    paths: np.ndarray,
    specs: Sequence[PortfolioSpec],
    rng: np.random.Generator | None,
    names: Sequence[str],
    roles: FactorRoles = FactorRoles(),
) -> dict[str, np.ndarray]:
    """Gross returns for years ``1..H`` along ``(S, H + 1, n)`` factor paths.

    Recovery draws are taken scenario-major, one ``(S, H)`` array per
    recovery-linked class in the order of ``specs``.
    """
    S, H1, _ = paths.shape
    draws = {}
    for spec in specs:
        if spec.index_linkage is IndexLinkage.RECOVERY:
            draws[spec.asset_class.value] = sample_recovery(spec.recovery, rng, size=(S, H1 - 1))
    return asset_returns(paths[:, :-1], paths[:, 1:], specs, None, names, roles, draws)
