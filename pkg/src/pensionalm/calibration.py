"""Calibration of the VAR to history and to views on the future.

History determines the autoregression matrix (sparse row-wise OLS) and the
innovation covariance.  Long-term views and short-term forecasts then
determine the offsets, through a median trajectory that the simulated
process reproduces exactly in the median.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .errors import (
    DimensionMismatch,
    ForecastOutOfRange,
    InconsistentViews,
    RankDeficient,
    TooFewObservations,
)
from .varmodel import PSD_TOL

logger = logging.getLogger(__name__)

CONST = "const"
VIEW_TOL = 1e-10


@dataclass(frozen=True)
class SparsityPattern:
    """Entries of ``A`` allowed to be nonzero, plus rows with an intercept.

    ``allowed`` holds ``(row, column)`` index pairs; regressors are listed
    in the order they were declared, which fixes the regression design.
    """

    n: int
    allowed: tuple[tuple[int, int], ...] = ()
    intercept: frozenset[int] = frozenset()

    def __post_init__(self):
        allowed = tuple((int(r), int(c)) for r, c in self.allowed)
        for r, c in allowed:
            if not (0 <= r < self.n and 0 <= c < self.n):
                raise DimensionMismatch(f"pattern entry ({r}, {c}) outside {self.n}x{self.n}")
        object.__setattr__(self, "allowed", allowed)
        object.__setattr__(self, "intercept", frozenset(int(i) for i in self.intercept))

    @classmethod
    def from_names(
        cls, names: Sequence[str], pairs: Iterable[tuple[str, str]]
    ) -> "SparsityPattern":
        """Build from ``(target, regressor)`` names; regressor ``const`` is an intercept."""
        idx = {nm: i for i, nm in enumerate(names)}
        allowed, intercept = [], set()
        for target, reg in pairs:
            if target not in idx:
                raise DimensionMismatch(f"unknown target factor {target!r}")
            if reg == CONST:
                intercept.add(idx[target])
            elif reg not in idx:
                raise DimensionMismatch(f"unknown regressor factor {reg!r}")
            else:
                allowed.append((idx[target], idx[reg]))
        return cls(len(names), tuple(allowed), frozenset(intercept))

    @classmethod
    def dense(cls, n: int, intercept: bool = True) -> "SparsityPattern":
        return cls(
            n,
            tuple((r, c) for r in range(n) for c in range(n)),
            frozenset(range(n)) if intercept else frozenset(),
        )

    def regressors(self, row: int) -> list[int]:
        return [c for r, c in self.allowed if r == row]


@dataclass
class CalibrationReport:
    """Regression output in the layout of a coefficient table."""

    A: np.ndarray
    stderr: np.ndarray
    pvalues: np.ndarray
    intercept: np.ndarray
    intercept_pvalues: np.ndarray
    residuals: np.ndarray
    years: np.ndarray  # years of the residual rows
    factor_names: tuple[str, ...]
    sigma: "SigmaEstimate | None" = None
    window_start: int | None = None

    def coefficient_rows(self) -> list[tuple[str, str, float, float, float]]:
        rows = []
        n = self.A.shape[0]
        for i in range(n):
            if np.isfinite(self.intercept_pvalues[i]):
                rows.append((self.factor_names[i], CONST, self.intercept[i], np.nan, self.intercept_pvalues[i]))
            for j in range(n):
                if np.isfinite(self.pvalues[i, j]):
                    rows.append(
                        (self.factor_names[i], self.factor_names[j], self.A[i, j], self.stderr[i, j], self.pvalues[i, j])
                    )
        return rows


def _ols(y: np.ndarray, X: np.ndarray):
    n_obs, k = X.shape
    if n_obs < k + 2:
        raise TooFewObservations(f"{n_obs} observations for {k} regressors")
    if k and np.linalg.matrix_rank(X) < k:
        raise RankDeficient("regressors are collinear")
    if k == 0:
        return np.zeros(0), np.zeros(0), np.zeros(0), y.copy()
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    dof = n_obs - k
    s2 = resid @ resid / dof
    cov = s2 * np.linalg.inv(X.T @ X)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        tstat = np.where(se > 0, beta / se, np.inf * np.sign(beta))
    pval = 2.0 * stats.t.sf(np.abs(tstat), dof)
    pval = np.where(np.isnan(pval), 1.0, pval)
    return beta, se, pval, resid


def estimate_A(
    history: np.ndarray,
    pattern: SparsityPattern,
    factor_names: Sequence[str] | None = None,
    years: Sequence[int] | None = None,
) -> CalibrationReport:
    """Row-wise OLS of ``x_t - x_{t-1}`` on the selected parts of ``x_{t-1}``.

    ``history`` is ``(T, n)`` with one row per year.  Entries outside the
    pattern are exactly zero and carry NaN standard errors and p-values.
    """
    X = np.asarray(history, dtype=float)
    if X.ndim != 2 or X.shape[1] != pattern.n:
        raise DimensionMismatch(f"history shape {X.shape} does not match pattern n={pattern.n}")
    T, n = X.shape
    years = np.arange(T) if years is None else np.asarray(years, dtype=np.int64)
    names = tuple(factor_names) if factor_names is not None else tuple(f"x{i}" for i in range(n))
    lagged, dx = X[:-1], np.diff(X, axis=0)

    A = np.zeros((n, n))
    se = np.full((n, n), np.nan)
    pv = np.full((n, n), np.nan)
    icpt = np.zeros(n)
    icpt_p = np.full(n, np.nan)
    resid = np.empty_like(dx)
    for i in range(n):
        cols = pattern.regressors(i)
        if np.isnan(dx[:, i]).any() or np.isnan(lagged[:, cols]).any():
            raise DimensionMismatch(f"factor {names[i]!r}: history has missing values")
        design = lagged[:, cols]
        has_c = i in pattern.intercept
        if has_c:
            design = np.column_stack([design, np.ones(T - 1)])
        beta, s, p, r = _ols(dx[:, i], design)
        if has_c:
            icpt[i], icpt_p[i] = beta[-1], p[-1]
            beta, s, p = beta[:-1], s[:-1], p[:-1]
        A[i, cols], se[i, cols], pv[i, cols] = beta, s, p
        resid[:, i] = r
    return CalibrationReport(A, se, pv, icpt, icpt_p, resid, years[1:], names)


def dense_pvalues(history: np.ndarray, factor_names: Sequence[str] | None = None) -> CalibrationReport:
    """Unrestricted fit, to guide the choice of a sparsity pattern."""
    return estimate_A(history, SparsityPattern.dense(np.shape(history)[1]), factor_names)


@dataclass
class SigmaEstimate:
    cov: np.ndarray
    corr: np.ndarray
    pvalues: np.ndarray
    n_obs: int

    @property
    def variances(self) -> np.ndarray:
        return np.diag(self.cov).copy()


def clamp_psd(cov: np.ndarray, tol: float = PSD_TOL) -> np.ndarray:
    """Zero out eigenvalues in ``[-tol, 0)``; larger negatives are kept (and fail later)."""
    lam, vec = np.linalg.eigh(0.5 * (cov + cov.T))
    if lam.size and lam.min() >= 0:
        return 0.5 * (cov + cov.T)
    lam = np.where((lam < 0) & (lam >= -tol), 0.0, lam)
    out = (vec * lam) @ vec.T
    return 0.5 * (out + out.T)


def estimate_sigma(
    residuals: np.ndarray,
    years: Sequence[int] | None = None,
    window_start: int | None = None,
) -> SigmaEstimate:
    """Unbiased covariance of residual rows from ``window_start`` on.

    Correlation p-values use the two-sided t-test on ``r`` with ``T - 2``
    degrees of freedom.  Correlations involving a zero-variance column are
    undefined and reported as NaN.
    """
    R = np.asarray(residuals, dtype=float)
    if years is not None and window_start is not None:
        R = R[np.asarray(years) >= window_start]
    T, n = R.shape
    if T < n + 1:
        raise TooFewObservations(f"covariance window has {T} rows, need at least {n + 1}")
    cov = clamp_psd(np.cov(R, rowvar=False, ddof=1).reshape(n, n))
    sd = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = cov / np.outer(sd, sd)
        corr = np.clip(corr, -1.0, 1.0)
        np.fill_diagonal(corr, np.where(sd > 0, 1.0, np.nan))
        r2 = np.clip(corr**2, 0.0, 1.0)
        tstat = np.abs(corr) * np.sqrt((T - 2) / (1.0 - r2))
    pv = 2.0 * stats.t.sf(tstat, T - 2)
    pv = np.where(np.isnan(corr), np.nan, pv)
    np.fill_diagonal(pv, np.nan)
    return SigmaEstimate(cov, corr, pv, T)


def rolling_robustness(
    history: np.ndarray,
    pattern: SparsityPattern,
    window: int,
    stride: int = 1,
) -> dict:
    """Re-fit on rolling sub-windows and report coefficient sign stability.

    Returns a dict with the per-window coefficient stacks and, per allowed
    entry, the share of windows whose sign matches the full-sample fit.
    Nothing is asserted; windows that cannot be fitted are skipped.
    """
    X = np.asarray(history, dtype=float)
    full = estimate_A(X, pattern).A
    stacks = []
    for start in range(0, X.shape[0] - window + 1, stride):
        try:
            stacks.append(estimate_A(X[start : start + window], pattern).A)
        except (TooFewObservations, RankDeficient):
            continue
    stacks = np.array(stacks)
    agreement = {}
    for r, c in pattern.allowed:
        if stacks.size:
            agreement[(r, c)] = float(np.mean(np.sign(stacks[:, r, c]) == np.sign(full[r, c])))
    return {"full": full, "windows": stacks, "sign_agreement": agreement}


# -- views ------------------------------------------------------------------------


@dataclass
class Views:
    """Long-term medians, drifts and cointegration levels plus forecasts.

    All fields are keyed by factor name.

    xbar0
        long-run medians of stationary factors
    drifts
        long-run median increments of nonstationary factors
    cointegration
        long-run medians of the rows of ``A1 @ x1`` (default 0)
    offsets
        pinned long-run offsets.  A pinned factor takes no median or drift
        view; its long-run behaviour is whatever the dynamics imply.  Only
        factors whose own columns feed pinned or viewed rows consistently
        may be pinned (see :func:`check_views`).
    forecasts
        ``{factor: {step: value}}`` overrides of the median trajectory for
        the first few steps
    """

    xbar0: dict[str, float] = field(default_factory=dict)
    drifts: dict[str, float] = field(default_factory=dict)
    cointegration: dict[str, float] = field(default_factory=dict)
    offsets: dict[str, float] = field(default_factory=dict)
    forecasts: dict[str, dict[int, float]] = field(default_factory=dict)

    def __post_init__(self):
        for name, steps in self.forecasts.items():
            keys = sorted(int(k) for k in steps)
            if keys != list(range(1, len(keys) + 1)):
                raise ForecastOutOfRange(
                    f"forecasts for {name!r} must cover steps 1..k contiguously, got {keys}"
                )


def _view_arrays(A, names, nonstationary, views: Views):
    n = A.shape[0]
    idx = {nm: i for i, nm in enumerate(names)}
    for section in (views.xbar0, views.drifts, views.cointegration, views.offsets, views.forecasts):
        for nm in section:
            if nm not in idx:
                raise InconsistentViews(f"view on unknown factor {nm!r}")
    ns = set(nonstationary)
    pinned = np.zeros(n, bool)
    for nm in views.offsets:
        pinned[idx[nm]] = True
    xbar0 = np.zeros(n)
    d1 = np.zeros(n)
    c = np.zeros(n)
    missing = []
    for i, nm in enumerate(names):
        if pinned[i]:
            if nm in views.xbar0 or nm in views.drifts:
                raise InconsistentViews(f"{nm!r} has both a pinned offset and a median/drift view")
            continue
        if i in ns:
            if nm in views.xbar0:
                raise InconsistentViews(f"nonstationary factor {nm!r} given a median view")
            if nm not in views.drifts:
                missing.append(nm)
            d1[i] = views.drifts.get(nm, 0.0)
        else:
            if nm in views.drifts:
                raise InconsistentViews(f"stationary factor {nm!r} given a drift view")
            if nm not in views.xbar0:
                missing.append(nm)
            xbar0[i] = views.xbar0.get(nm, 0.0)
    for nm, val in views.cointegration.items():
        c[idx[nm]] = val
    return xbar0, d1, c, pinned, missing


def check_views(A, factor_names: Sequence[str], nonstationary: Sequence[int], views: Views) -> list[str]:
    """Consistency problems in a set of long-term views (empty if none).

    Checks ``A1 @ d1 == 0`` and that components of ``c`` vanish on rows
    where ``A1`` is zero.  When offsets are pinned, also checks that no
    viewed row depends on a pinned factor, since its limit would then be
    left undetermined.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    names = list(factor_names)
    xbar0, d1, c, pinned, missing = _view_arrays(A, names, nonstationary, views)
    ns = np.zeros(A.shape[0], bool)
    ns[list(nonstationary)] = True
    free_ns = ns & ~pinned
    out = [f"no view for {nm!r}" for nm in missing]

    A1 = A[:, free_ns]
    resid = A1 @ d1[free_ns]
    rows = ~pinned
    if resid.size and np.max(np.abs(resid[rows]), initial=0.0) > VIEW_TOL:
        bad = [names[i] for i in np.flatnonzero(rows & (np.abs(resid) > VIEW_TOL))]
        out.append(f"A1 @ d1 != 0 on rows {bad} (max {np.max(np.abs(resid[rows])):.3g})")
    zero_rows = ~np.any(A1 != 0, axis=1)
    bad_c = [names[i] for i in np.flatnonzero(zero_rows & (c != 0))]
    if bad_c:
        out.append(f"cointegration view nonzero on rows where A1 is zero: {bad_c}")
    bad_c = [names[i] for i in np.flatnonzero(pinned & (c != 0))]
    if bad_c:
        out.append(f"cointegration view on pinned rows: {bad_c}")
    if pinned.any():
        dep = (A[np.ix_(~pinned, pinned)] != 0).any(axis=1)
        bad = [names[i] for i, flag in zip(np.flatnonzero(~pinned), dep) if flag]
        if bad:
            out.append(f"viewed rows {bad} depend on pinned factors")
    return out


def long_run_offset(A, factor_names: Sequence[str], nonstationary: Sequence[int], views: Views) -> np.ndarray:
    """Constant offset ``a = (0, d1) - A0 xbar0 - c`` implied by the views.

    Pinned components are returned as given.
    """
    problems = check_views(A, factor_names, nonstationary, views)
    if problems:
        raise InconsistentViews("; ".join(problems))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    names = list(factor_names)
    xbar0, d1, c, pinned, _ = _view_arrays(A, names, nonstationary, views)
    st = np.ones(A.shape[0], bool)
    st[list(nonstationary)] = False
    st &= ~pinned
    a = d1 - A[:, st] @ xbar0[st] - c
    for nm, val in views.offsets.items():
        a[names.index(nm)] = val
    return a


def median_trajectory(
    x0,
    A,
    a,
    horizon: int,
    forecasts: Mapping[int, Mapping[int, float]] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Median path and the offset sequence that produces it.

    ``forecasts`` maps factor index to ``{step: value}``; after each
    recursion step the listed components are overwritten.  Returns
    ``xbar`` of shape ``(horizon + 1, n)`` and offsets of shape
    ``(horizon, n)`` with ``offsets[t - 1] = xbar_t - xbar_{t-1} - A xbar_{t-1}``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    x0 = np.asarray(x0, dtype=float)
    a = np.asarray(a, dtype=float)
    if x0.shape != (n,) or a.shape != (n,):
        raise DimensionMismatch(f"x0 {x0.shape}, a {a.shape}, n={n}")
    forecasts = forecasts or {}
    for k, steps in forecasts.items():
        if not 0 <= int(k) < n:
            raise ForecastOutOfRange(f"forecast for factor index {k} out of range")
        for t in steps:
            if not 1 <= int(t) <= horizon:
                raise ForecastOutOfRange(f"forecast step {t} outside 1..{horizon}")
    xbar = np.empty((horizon + 1, n))
    offsets = np.empty((horizon, n))
    xbar[0] = x0
    for t in range(1, horizon + 1):
        prev = xbar[t - 1]
        drift = prev @ A.T
        nxt = prev + drift + a
        for k, steps in forecasts.items():
            if t in steps:
                nxt[int(k)] = steps[t]
        xbar[t] = nxt
        offsets[t - 1] = nxt - prev - drift
    return xbar, offsets


def forecasts_by_index(views: Views, factor_names: Sequence[str]) -> dict[int, dict[int, float]]:
    names = list(factor_names)
    out = {}
    for nm, steps in views.forecasts.items():
        if nm not in names:
            raise ForecastOutOfRange(f"forecast for unknown factor {nm!r}")
        out[names.index(nm)] = {int(t): float(v) for t, v in steps.items()}
    return out
