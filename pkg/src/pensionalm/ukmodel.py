"""Published UK calibration and defaults built on it.

The coefficient and covariance tables are stored in the column order in
which they were published (I, G, E, S, Ys, Yl, C, Î, v1m, v2m, v3m, v1f,
v2f, v3f) and permuted to the package's state order on access.
"""

from __future__ import annotations

import math

import numpy as np

from .assets import REAL_YIELD_SHIFT, CREDIT_SPREAD_SHIFT, RecoveryModel
from .calibration import CONST, SparsityPattern, Views, forecasts_by_index, long_run_offset, median_trajectory
from .transforms import TransformKind, TransformSpec
from .varmodel import VarModel

FACTOR_NAMES = (
    "inflation",
    "ltie_spread",
    "gdp_growth",
    "awe_real_log",
    "stock_log",
    "real_ytm_short",
    "real_ytm_long",
    "credit_spread_log",
    "v1_m",
    "v2_m",
    "v3_m",
    "v1_f",
    "v2_f",
    "v3_f",
)

TABLE_ORDER = (
    "inflation",
    "gdp_growth",
    "awe_real_log",
    "stock_log",
    "real_ytm_short",
    "real_ytm_long",
    "credit_spread_log",
    "ltie_spread",
    "v1_m",
    "v2_m",
    "v3_m",
    "v1_f",
    "v2_f",
    "v3_f",
)

NONSTATIONARY = ("awe_real_log", "stock_log", "v2_m", "v2_f")

# (target, regressor) -> coefficient
A_ENTRIES = {
    ("inflation", "inflation"): -0.16,
    ("gdp_growth", "gdp_growth"): -0.59,
    ("awe_real_log", "gdp_growth"): 0.43,
    ("real_ytm_short", "inflation"): 1.02,
    ("real_ytm_short", "gdp_growth"): 2.88,
    ("real_ytm_short", "real_ytm_short"): -0.16,
    ("real_ytm_long", "inflation"): 0.90,
    ("real_ytm_long", "gdp_growth"): 1.76,
    ("real_ytm_long", "real_ytm_long"): -0.13,
    ("credit_spread_log", "gdp_growth"): -3.64,
    ("credit_spread_log", "credit_spread_log"): -0.66,
    ("ltie_spread", "ltie_spread"): -0.61,
    ("v1_m", "v1_m"): -0.16,
    ("v3_m", "awe_real_log"): 0.06,
    ("v3_m", "v3_m"): -0.32,
    ("v1_f", "v1_f"): -0.10,
    ("v3_f", "awe_real_log"): 0.16,
    ("v3_f", "v3_f"): -0.41,
}

VARIANCES = (
    5.00e-4, 4.84e-4, 3.43e-4, 0.05, 8.89e-3, 5.78e-3, 0.06,
    3.40e-4, 1.13e-3, 8.66e-4, 4.47e-3, 1.21e-3, 6.54e-4, 4.50e-3,
)  # fmt: skip

# strict upper triangle, row by row, in TABLE_ORDER
CORRELATION_ROWS = (
    (-0.33, -0.05, -0.11, 0.04, 0.03, 0.26, -0.84, -0.03, -0.01, -0.09, 0.09, -8.45e-3, -0.03),
    (0.62, 0.22, 0.28, 0.09, -0.41, 0.53, -0.06, -0.20, -0.08, -0.22, -0.26, -0.05),
    (0.14, 0.33, 0.18, -0.18, 0.21, -0.03, -0.15, -0.14, -0.19, -0.20, -0.02),
    (-0.01, -0.13, -0.29, 0.04, 0.30, -0.01, -0.10, 0.14, -0.02, 0.02),
    (0.50, -0.41, 0.02, 0.06, -0.09, -0.13, 0.18, -0.08, -0.04),
    (-0.55, 0.05, -0.04, -0.11, -0.04, 0.07, -0.08, -0.02),
    (-0.24, -0.15, 0.07, 0.08, -0.21, 0.09, -0.02),
    (-0.08, -0.10, 0.04, -0.20, -0.16, 0.06),
    (-0.12, -0.16, 0.46, -0.11, -0.06),
    (0.34, 0.13, 0.89, 0.47),
    (-0.34, 0.49, 0.82),
    (0.02, -0.16),
    (0.49,),
)

DURATIONS = {"short_bond": 2.30, "long_bond": 6.00, "ilb": 7.00, "corporate": 9.20}
BOND_R2 = {  # (first order, second order)
    "short_bond": (0.987, 0.987),
    "long_bond": (0.996, 0.996),
    "corporate": (0.954, 0.933),
    "ilb": (0.964, 0.964),
}
RECOVERY = RecoveryModel(delta=0.1, mu=-2.29, sigma2=7.47e-4)

# long-run medians on the observable scale
LONG_RUN_VIEWS = {
    "inflation": 0.02,
    "ltie_spread": 0.00,
    "gdp_growth": 0.02,
    "real_ytm_short": 0.02,
    "real_ytm_long": 0.04,
    "credit_spread": 0.02,
}

# scenarios (thousands) -> (total, factors, returns, corporate returns) seconds
PUBLISHED_TIMINGS = {
    100: (12.19, 5.61, 6.15, 5.66),
    200: (24.23, 11.13, 12.26, 11.27),
    300: (36.65, 16.80, 18.57, 17.08),
    400: (49.70, 23.51, 24.50, 22.50),
    500: (62.64, 29.05, 31.49, 29.01),
    600: (78.83, 34.79, 41.50, 38.54),
    700: (93.33, 41.01, 49.34, 45.69),
    800: (113.35, 50.20, 57.75, 51.93),
    900: (130.38, 57.63, 65.41, 58.62),
    1000: (146.53, 64.56, 74.08, 66.39),
}

# percentages of total assets; bond splits as shares of the bond holding
ALLOCATIONS = {
    2008: {"equity": 53.6, "bonds": 32.9, "cash": 3.0},
    2019: {"equity": 24.0, "bonds": 62.8, "cash": -4.4},
}
BOND_SPLITS = {  # government (fixed), corporate, index-linked
    2008: {"long_bond": 33.2, "corporate": 32.6, "ilb": 33.9},
    2019: {"long_bond": 25.4, "corporate": 28.4, "ilb": 46.2},
}

INITIAL_WEALTH = 200_000.0
ALM_HORIZON = 40

# a plausible recent state, on the factor scale
DEFAULT_X0 = {
    "inflation": 0.018,
    "ltie_spread": 0.012,
    "gdp_growth": 0.013,
    "awe_real_log": 1.6,
    "stock_log": 8.3,
    "real_ytm_short": math.log(0.008 / math.exp(0.018) + REAL_YIELD_SHIFT),
    "real_ytm_long": math.log(0.015 / math.exp(0.018) + REAL_YIELD_SHIFT),
    "credit_spread_log": math.log(0.015 + CREDIT_SPREAD_SHIFT),
    "v1_m": 7.6,
    "v2_m": 4.6,
    "v3_m": 0.0,
    "v1_f": 8.1,
    "v2_f": 4.95,
    "v3_f": 0.2,
}

DEFAULT_DRIFTS = {"awe_real_log": 0.0, "stock_log": 0.06, "v2_m": 0.015, "v2_f": 0.012}


def autoregression_matrix(names=FACTOR_NAMES) -> np.ndarray:
    names = list(names)
    A = np.zeros((len(names), len(names)))
    for (target, reg), val in A_ENTRIES.items():
        A[names.index(target), names.index(reg)] = val
    return A


def published_pattern(names=FACTOR_NAMES, intercept: bool = False) -> SparsityPattern:
    """Sparsity of the published matrix, optionally with an intercept in every row."""
    pairs = list(A_ENTRIES)
    if intercept:
        pairs += [(nm, CONST) for nm in names]
    return SparsityPattern.from_names(names, pairs)


def correlation_matrix(names=FACTOR_NAMES) -> np.ndarray:
    n = len(TABLE_ORDER)
    R = np.eye(n)
    for i, row in enumerate(CORRELATION_ROWS):
        R[i, i + 1 :] = row
        R[i + 1 :, i] = row
    p = np.array([TABLE_ORDER.index(nm) for nm in names])
    return R[np.ix_(p, p)]


def covariance_matrix(names=FACTOR_NAMES) -> np.ndarray:
    p = np.array([TABLE_ORDER.index(nm) for nm in names])
    sd = np.sqrt(np.asarray(VARIANCES)[p])
    return correlation_matrix(names) * np.outer(sd, sd)


def nonstationary_indices(names=FACTOR_NAMES) -> tuple[int, ...]:
    return tuple(sorted(list(names).index(nm) for nm in NONSTATIONARY))


def initial_state(overrides=None) -> np.ndarray:
    x = dict(DEFAULT_X0)
    x.update(overrides or {})
    return np.array([x[nm] for nm in FACTOR_NAMES])


def factor_scale_views(views: dict[str, float] = LONG_RUN_VIEWS) -> dict[str, float]:
    """Map observable-scale medians to factor medians with the forward transforms."""
    out = {}
    for name, val in views.items():
        if name in ("real_ytm_short", "real_ytm_long"):
            out[name] = math.log(val + REAL_YIELD_SHIFT)
        elif name == "credit_spread":
            out["credit_spread_log"] = math.log(val + CREDIT_SPREAD_SHIFT)
        else:
            out[name] = val
    return out


def transform_specs() -> dict[str, TransformSpec]:
    """How each factor is built from the raw annual series."""
    K = TransformKind
    specs = {
        "inflation": TransformSpec(K.LOG_GROWTH, inputs=("cpi",)),
        "ltie_spread": TransformSpec(K.INFLATION_SPREAD, inputs=("ltie", "cpi")),
        "gdp_growth": TransformSpec(K.LOG_GROWTH, inputs=("gdp", "cpi")),
        "awe_real_log": TransformSpec(K.REAL_LOG_RATIO, inputs=("awe", "cpi")),
        "stock_log": TransformSpec(K.LOG, inputs=("stock",)),
        "real_ytm_short": TransformSpec(K.SHIFTED_REAL_YIELD, REAL_YIELD_SHIFT, ("ytm_short", "cpi")),
        "real_ytm_long": TransformSpec(K.SHIFTED_REAL_YIELD, REAL_YIELD_SHIFT, ("ytm_long", "cpi")),
        "credit_spread_log": TransformSpec(K.LOG_SPREAD, CREDIT_SPREAD_SHIFT, ("ytm_corp", "ytm_long")),
    }
    for nm in FACTOR_NAMES[8:]:
        specs[nm] = TransformSpec(K.IDENTITY, inputs=(nm,))
    return specs


def default_views(
    x0=None,
    gdp_growth: float | None = None,
    drifts: dict[str, float] | None = None,
    link_awe: bool = False,
    A=None,
) -> Views:
    """Long-run views built from the published medians.

    Mortality factors without a published view keep their current level.
    With ``link_awe`` the real-earnings offset and the old-age mortality
    offsets are pinned at their current equilibrium instead, so that real
    earnings grow with GDP and drag old-age survival along.  Without it,
    consistency forces real earnings to a constant long-run median and the
    old-age factors are anchored through cointegration views.  ``A``
    defaults to the published matrix; a refitted one with the same
    sparsity may be passed instead.
    """
    x0 = initial_state() if x0 is None else np.asarray(x0, dtype=float)
    names = list(FACTOR_NAMES)
    med = factor_scale_views()
    if gdp_growth is not None:
        med["gdp_growth"] = gdp_growth
    for nm in ("v1_m", "v1_f"):
        med[nm] = float(x0[names.index(nm)])
    d = dict(DEFAULT_DRIFTS)
    d.update(drifts or {})
    A = autoregression_matrix() if A is None else np.asarray(A, dtype=float)
    e = names.index("awe_real_log")

    if link_awe:
        pins = {"awe_real_log": 0.0}
        for nm in ("v3_m", "v3_f"):
            k = names.index(nm)
            pins[nm] = float(-A[k, k] * x0[k] - A[k, e] * x0[e])
        d.pop("awe_real_log", None)
        return Views(xbar0=med, drifts=d, offsets=pins)

    for nm in ("v3_m", "v3_f"):
        med[nm] = float(x0[names.index(nm)])
    d["awe_real_log"] = 0.0
    base = Views(xbar0=med, drifts=d)
    # long-run real-earnings median, then the matching cointegration levels
    a = long_run_offset(A, names, nonstationary_indices(), base)
    xbar, _ = median_trajectory(x0, A, a, 2000)
    e_inf = xbar[-1, e]
    coint = {nm: float(A[names.index(nm), e] * e_inf) for nm in ("v3_m", "v3_f")}
    return Views(xbar0=med, drifts=d, cointegration=coint)


def build_model(views: Views | None = None, x0=None, sigma=None, horizon: int = 70, A=None) -> VarModel:
    """VAR with offsets from ``views``; A and Σ default to the published ones."""
    x0 = initial_state() if x0 is None else np.asarray(x0, dtype=float)
    A = autoregression_matrix() if A is None else np.asarray(A, dtype=float)
    views = views or default_views(x0, A=A)
    ns = nonstationary_indices()
    a = long_run_offset(A, FACTOR_NAMES, ns, views)
    _, offsets = median_trajectory(x0, A, a, horizon, forecasts_by_index(views, FACTOR_NAMES))
    sigma = covariance_matrix() if sigma is None else sigma
    return VarModel(A, offsets, sigma, FACTOR_NAMES, ns)


def allocation_weights(year: int) -> dict[str, float]:
    """Raw allocation spread over the five modelled classes (percent, unnormalised).

    Cash maps to short bonds and the bond holding is split by the
    published bond breakdown.  Unmodelled classes are dropped.
    """
    alloc, split = ALLOCATIONS[year], BOND_SPLITS[year]
    total_split = sum(split.values())
    out = {"equity": alloc["equity"], "short_bond": alloc["cash"]}
    for cls, share in split.items():
        out[cls] = alloc["bonds"] * share / total_split
    return out
