"""Defined-benefit cash-flows and risk decomposition by freezing factors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import MisalignedPaths, NonPositiveCPI, UnknownGroup
from .varmodel import ScenarioSet


@dataclass(frozen=True)
class AdjustmentFunction:
    """Piecewise-linear inflation pass-through.

    ``slopes[k]`` applies on ``[breakpoints[k], breakpoints[k + 1])``; the
    first slope also applies below the first breakpoint and the last one
    above the last breakpoint.  The function is the integral of this slope
    from 0, so ``f(0) == 0``; ``floor_at_zero`` then clips negative values
    and ``cap`` bounds the adjustment from above.
    """

    breakpoints: tuple[float, ...] = (0.0,)
    slopes: tuple[float, ...] = (1.0,)
    floor_at_zero: bool = False
    cap: float | None = None

    def __post_init__(self):
        b = tuple(float(x) for x in self.breakpoints)
        s = tuple(float(x) for x in self.slopes)
        if not b or len(b) != len(s):
            raise ValueError("need one slope per breakpoint")
        if any(y <= x for x, y in zip(b, b[1:])):
            raise ValueError(f"breakpoints must be strictly increasing: {b}")
        if any(x < 0 for x in s):
            raise ValueError("slopes must be nonnegative")
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "slopes", s)

    @classmethod
    def from_pairs(cls, pairs: Iterable[Sequence[float]], floor_at_zero=False, cap=None) -> "AdjustmentFunction":
        pairs = [tuple(p) for p in pairs]
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs), floor_at_zero, cap)

    @classmethod
    def uss_like(cls) -> "AdjustmentFunction":
        """Full pass-through to 5%, half to 15%, nothing above; no cuts."""
        return cls((0.0, 0.05, 0.15), (1.0, 0.5, 0.0), floor_at_zero=True, cap=0.10)

    @classmethod
    def full(cls) -> "AdjustmentFunction":
        return cls()

    def _from_first_breakpoint(self, x: np.ndarray) -> np.ndarray:
        b = np.asarray(self.breakpoints)
        s = np.asarray(self.slopes)
        upper = np.append(b[1:], np.inf)
        seg = np.clip(x[..., None], b, upper) - b
        val = seg @ s
        below = x < b[0]
        return np.where(below, s[0] * (x - b[0]), val)

    def __call__(self, inflation):
        return adjust(self, inflation)


def adjust(f: AdjustmentFunction, inflation):
    x = np.asarray(inflation, dtype=float)
    out = f._from_first_breakpoint(x) - f._from_first_breakpoint(np.zeros(()))
    if f.floor_at_zero:
        out = np.where(x < 0, 0.0, np.maximum(out, 0.0))
    if f.cap is not None:
        out = np.minimum(out, f.cap)
    return float(out) if out.ndim == 0 else out


def adjustment_path(f: AdjustmentFunction, cpi) -> np.ndarray:
    """``F_t = prod_{k=1}^t (1 + f(CPI_k / CPI_{k-1} - 1))`` along the last axis; ``F_0 = 1``."""
    cpi = np.asarray(cpi, dtype=float)
    if np.any(~(cpi > 0)):
        raise NonPositiveCPI("CPI levels must be positive")
    growth = cpi[..., 1:] / cpi[..., :-1] - 1.0
    F = np.ones_like(cpi)
    F[..., 1:] = np.cumprod(1.0 + adjust(f, growth), axis=-1)
    return F


@dataclass(frozen=True)
class BenefitSpec:
    """Initial yearly benefit per member, scalar or one per cohort."""

    benefit: float | tuple[float, ...] = 1.0

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.benefit, dtype=float))
        if np.any(b < 0) or not np.all(np.isfinite(b)):
            raise ValueError("benefits must be finite and nonnegative")

    def per_cohort(self, n_cohorts: int) -> np.ndarray:
        b = np.atleast_1d(np.asarray(self.benefit, dtype=float))
        if b.size == 1:
            return np.full(n_cohorts, b[0])
        if b.size != n_cohorts:
            raise MisalignedPaths(f"{b.size} benefits for {n_cohorts} cohorts")
        return b


def pension_payments(counts, F, benefits: BenefitSpec) -> np.ndarray:
    """Yearly payments ``F_t * sum_b count_{b,t} * c_0^b``.

    ``counts`` is ``(..., T)`` for a single cohort or ``(..., K, T)`` for
    ``K`` cohorts (then ``benefits`` may hold one value per cohort); ``F``
    is ``(..., T)``.
    """
    counts = np.asarray(counts, dtype=float)
    F = np.asarray(F, dtype=float)
    if counts.shape[-1] != F.shape[-1]:
        raise MisalignedPaths(f"population covers {counts.shape[-1]} years, adjustment {F.shape[-1]}")
    b = np.atleast_1d(np.asarray(benefits.benefit, dtype=float))
    if b.size > 1:
        if counts.ndim < 2 or counts.shape[-2] != b.size:
            raise MisalignedPaths(f"{b.size} benefits for population shape {counts.shape}")
        total = np.einsum("...kt,k->...t", counts, b)
    else:
        total = counts * b[0]
        if counts.ndim >= 2 and counts.ndim > F.ndim:
            total = total.sum(axis=-2)
    return F * total


def real_payments(payments, cpi) -> np.ndarray:
    cpi = np.asarray(cpi, dtype=float)
    if np.any(~(cpi > 0)):
        raise NonPositiveCPI("CPI levels must be positive")
    return np.asarray(payments, dtype=float) / cpi


# factor names and channel-name prefixes belonging to each risk group
GROUPS: dict[str, dict[str, tuple[str, ...]]] = {
    "indexation": {"factors": ("inflation",), "channels": ()},
    "longevity": {
        "factors": ("v1_m", "v2_m", "v3_m", "v1_f", "v2_f", "v3_f"),
        "channels": ("population", "benefits"),
    },
}


def median_path(values: np.ndarray) -> np.ndarray:
    """Cross-scenario median along axis 0."""
    return np.median(values, axis=0)


def freeze_factors(
    scenarios: ScenarioSet,
    groups: Iterable[str],
    group_map: Mapping[str, Mapping[str, Sequence[str]]] = GROUPS,
) -> ScenarioSet:
    """Replace the factors (and channels) of ``groups`` by their median paths."""
    groups = list(groups)
    for g in groups:
        if g not in group_map:
            raise UnknownGroup(f"unknown factor group {g!r}; known: {sorted(group_map)}")
    out = scenarios.copy()
    for g in groups:
        for name in group_map[g].get("factors", ()):
            if name not in out.factor_names:
                continue
            k = out.factor_names.index(name)
            out.data[:, :, k] = median_path(out.data[:, :, k])
        for prefix in group_map[g].get("channels", ()):
            for ch in out.channels:
                if ch == prefix or ch.startswith(prefix + ":"):
                    out.channels[ch][:] = median_path(out.channels[ch])
    return out
