"""Invertible maps between observable series and Gaussian-modelled risk factors.

Raw series are annual (integer year stamps) and rates are decimals.  The
forward maps are used before calibration; the inverses turn simulated factor
paths back into prices, yields and index levels.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DataValidationError, MisalignedSeries, MissingAuxiliary, NonPositiveLogArgument


class TransformKind(str, enum.Enum):
    LOG = "log"
    LOG_GROWTH = "log_growth"
    SHIFTED_REAL_YIELD = "shifted_real_yield"
    LOG_SPREAD = "log_spread"
    REAL_LOG_RATIO = "real_log_ratio"
    INFLATION_SPREAD = "inflation_spread"
    IDENTITY = "identity"


_SHIFTED = {TransformKind.SHIFTED_REAL_YIELD, TransformKind.LOG_SPREAD}

# number of raw inputs each kind expects; log_growth takes an optional deflator
_ARITY = {
    TransformKind.LOG: (1,),
    TransformKind.LOG_GROWTH: (1, 2),
    TransformKind.SHIFTED_REAL_YIELD: (2,),
    TransformKind.LOG_SPREAD: (2,),
    TransformKind.REAL_LOG_RATIO: (2,),
    TransformKind.INFLATION_SPREAD: (2,),
    TransformKind.IDENTITY: (1,),
}


@dataclass(frozen=True)
class TransformSpec:
    """How one risk factor is derived from raw series.

    ``inputs`` lists raw series ids.  The first one is the primary input;
    the second (where present) is the CPI deflator, or the long government
    yield for ``log_spread``.
    """

    kind: TransformKind
    shift: float = 0.0
    inputs: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "kind", TransformKind(self.kind))
        object.__setattr__(self, "inputs", tuple(self.inputs))
        if self.shift < 0:
            raise ValueError(f"shift must be nonnegative, got {self.shift}")
        if self.shift != 0 and self.kind not in _SHIFTED:
            raise ValueError(f"{self.kind.value} does not take a shift")
        if len(self.inputs) not in _ARITY[self.kind]:
            raise ValueError(
                f"{self.kind.value} expects {_ARITY[self.kind]} inputs, got {len(self.inputs)}"
            )

    @property
    def shortens(self) -> bool:
        """Whether the output loses the first time stamp."""
        return self.kind in (
            TransformKind.LOG_GROWTH,
            TransformKind.SHIFTED_REAL_YIELD,
            TransformKind.INFLATION_SPREAD,
        )


@dataclass(frozen=True)
class RawSeries:
    id: str
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.int64)
        values = np.asarray(self.values, dtype=float)
        if times.ndim != 1 or times.shape != values.shape:
            raise MisalignedSeries(f"series {self.id!r}: times and values differ in shape")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise MisalignedSeries(f"series {self.id!r}: times must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise DataValidationError(f"series {self.id!r} has non-finite values")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def at(self, times: np.ndarray) -> np.ndarray:
        """Values at the requested years; every year must be present."""
        idx = np.searchsorted(self.times, times)
        ok = (idx < self.times.size) & (self.times[np.minimum(idx, self.times.size - 1)] == times)
        if not np.all(ok):
            missing = np.asarray(times)[~ok]
            raise MisalignedSeries(f"series {self.id!r} has no values for years {missing.tolist()}")
        return self.values[idx]


def _safe_log(arg: np.ndarray, what: str) -> np.ndarray:
    bad = ~(arg > 0)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise NonPositiveLogArgument(f"{what}: log argument {arg[i]!r} is not positive (position {i})")
    return np.log(arg)


def _aligned(spec: TransformSpec, raw: Mapping[str, RawSeries]) -> list[RawSeries]:
    try:
        series = [raw[name] for name in spec.inputs]
    except KeyError as exc:
        raise MissingAuxiliary(f"raw series {exc.args[0]!r} not supplied") from None
    first = series[0]
    for other in series[1:]:
        if not np.array_equal(first.times, other.times):
            raise MisalignedSeries(
                f"series {first.id!r} and {other.id!r} do not share time stamps"
            )
    return series


def apply_transform(spec: TransformSpec, raw: Mapping[str, RawSeries]) -> RawSeries:
    """Map raw observations to a risk-factor series."""
    series = _aligned(spec, raw)
    x = series[0].values
    t = series[0].times
    k = spec.kind
    name = series[0].id

    if k is TransformKind.LOG:
        out, times = _safe_log(x, name), t
    elif k is TransformKind.IDENTITY:
        out, times = x.copy(), t
    elif k is TransformKind.REAL_LOG_RATIO:
        cpi = series[1].values
        out, times = _safe_log(x, name) - _safe_log(cpi, series[1].id), t
    elif k is TransformKind.LOG_SPREAD:
        out, times = _safe_log(x - series[1].values + spec.shift, name), t
    elif k is TransformKind.LOG_GROWTH:
        level = _safe_log(x, name)
        if len(series) == 2:
            level = level - _safe_log(series[1].values, series[1].id)
        out, times = np.diff(level), t[1:]
    elif k is TransformKind.SHIFTED_REAL_YIELD:
        cpi = series[1].values
        _safe_log(cpi, series[1].id)
        ratio = cpi[1:] / cpi[:-1]
        out, times = _safe_log(x[1:] / ratio + spec.shift, name), t[1:]
    elif k is TransformKind.INFLATION_SPREAD:
        infl = np.diff(_safe_log(series[1].values, series[1].id))
        out, times = x[1:] - infl, t[1:]
    else:  # pragma: no cover
        raise AssertionError(k)

    if not np.all(np.isfinite(out)):
        raise NonPositiveLogArgument(f"{name}: transform produced non-finite values")
    return RawSeries(name, times, out)


def _aux(spec: TransformSpec, aux: Mapping[str, RawSeries] | None) -> RawSeries:
    name = spec.inputs[1]
    if not aux or name not in aux:
        raise MissingAuxiliary(f"{spec.kind.value} inversion needs auxiliary series {name!r}")
    return aux[name]


def invert_transform(
    spec: TransformSpec,
    factor: RawSeries,
    aux: Mapping[str, RawSeries] | None = None,
    initial: float | None = None,
) -> RawSeries:
    """Recover the primary raw series from a factor series.

    Kinds that discount by realised inflation need the CPI path in ``aux``
    (keyed by the CPI input id) covering every factor year and, for
    one-step kinds, the year before.  ``log_growth`` needs the level in the
    year preceding the first factor year, given as ``initial``.
    """
    f = factor.values
    t = factor.times
    k = spec.kind
    name = spec.inputs[0]

    if k is TransformKind.LOG:
        return RawSeries(name, t, np.exp(f))
    if k is TransformKind.IDENTITY:
        return RawSeries(name, t, f.copy())
    if k is TransformKind.REAL_LOG_RATIO:
        cpi = _aux(spec, aux).at(t)
        return RawSeries(name, t, np.exp(f) * cpi)
    if k is TransformKind.LOG_SPREAD:
        long_ytm = _aux(spec, aux).at(t)
        return RawSeries(name, t, np.exp(f) - spec.shift + long_ytm)
    if k is TransformKind.SHIFTED_REAL_YIELD:
        cpi = _aux(spec, aux)
        ratio = cpi.at(t) / cpi.at(t - 1)
        return RawSeries(name, t, (np.exp(f) - spec.shift) * ratio)
    if k is TransformKind.INFLATION_SPREAD:
        cpi = _aux(spec, aux)
        return RawSeries(name, t, f + np.log(cpi.at(t) / cpi.at(t - 1)))
    if k is TransformKind.LOG_GROWTH:
        if initial is None:
            raise MissingAuxiliary(f"{name}: log_growth inversion needs an initial level")
        times = np.concatenate([[t[0] - 1], t]) if t.size else np.array([], dtype=np.int64)
        log_level = np.log(initial) + np.concatenate([[0.0], np.cumsum(f)])
        if len(spec.inputs) == 2:
            cpi = _aux(spec, aux).at(times)
            # the anchor is the nominal level; the recursion runs on the real ratio
            log_level = log_level - np.log(cpi[0]) + np.log(cpi)
        return RawSeries(name, times, np.exp(log_level))
    raise AssertionError(k)  # pragma: no cover


# -- vectorised inverses used on simulated paths ---------------------------------


def nominal_from_real_yield(real: np.ndarray, inflation: np.ndarray, shift: float) -> np.ndarray:
    """YTM from a shifted real-yield factor and same-step CPI log-growth."""
    return (np.exp(real) - shift) * np.exp(inflation)


def corporate_from_spread(spread: np.ndarray, long_ytm: np.ndarray, shift: float) -> np.ndarray:
    return np.exp(spread) - shift + long_ytm


def ltie_from_spread(spread: np.ndarray, inflation: np.ndarray) -> np.ndarray:
    return spread + inflation


def cpi_index(inflation: np.ndarray, base: float = 1.0) -> np.ndarray:
    """CPI levels from a path of log-growths along the last axis.

    ``inflation[..., 0]`` is the current year's growth and is not
    compounded; the returned array has ``base`` in position 0.
    """
    growth = np.cumsum(inflation[..., 1:], axis=-1)
    out = np.empty_like(inflation, dtype=float)
    out[..., 0] = 0.0
    out[..., 1:] = growth
    return base * np.exp(out)


def read_series_csv(path, series_id: str | None = None) -> RawSeries:
    """Read a ``year,value`` CSV file."""
    import csv
    from pathlib import Path

    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != ["year", "value"]:
            raise MisalignedSeries(f"{path}: expected header 'year,value', got {','.join(header)!r}")
        years, values = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                years.append(int(row[0]))
                values.append(float(row[1]))
            except (ValueError, IndexError):
                raise MisalignedSeries(f"{path}:{lineno}: cannot parse row {row!r}") from None
    return RawSeries(series_id or path.stem, np.array(years), np.array(values))


def write_series_csv(path, series: RawSeries) -> None:
    from pathlib import Path

    lines = ["year,value"] + [f"{int(y)},{float(v)!r}" for y, v in zip(series.times, series.values)]
    Path(path).write_text("\n".join(lines) + "\n")


def apply_all(specs: Mapping[str, TransformSpec], raw: Mapping[str, RawSeries]) -> dict[str, RawSeries]:
    """Apply a named collection of transforms; output ids are the mapping keys."""
    out = {}
    for name, spec in specs.items():
        s = apply_transform(spec, raw)
        out[name] = RawSeries(name, s.times, s.values)
    return out


def common_years(series: Sequence[RawSeries]) -> np.ndarray:
    years = series[0].times
    for s in series[1:]:
        years = np.intersect1d(years, s.times)
    return years
