"""File formats: scenario tensors, CSV tables, run configuration and manifests.

Scenario file layout (all little-endian)::

    b"ALMS"  u32 version  u64 seed  u32 n_scenarios  u32 n_steps  u32 n_factors
    n_factors x (u16 length, utf-8 name)
    u32 n_channels
    n_channels x (u16 length, utf-8 name, u32 width)
    float64 factors[n_scenarios, n_steps, n_factors]
    float64 channel[n_scenarios, width]   (one block per channel, in directory order)
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

from .calibration import CalibrationReport, SparsityPattern, Views
from .errors import ConfigError, DataValidationError, MisalignedSeries
from .mortality import CohortTable, MortalityFactors
from .varmodel import ScenarioSet, VarModel

MAGIC = b"ALMS"
VERSION = 1
_HEAD = struct.Struct("<4sIQIII")
_F8 = np.dtype("<f8")


# -- scenario files ------------------------------------------------------------------


def _encode_name(name: str) -> bytes:
    raw = name.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _header(seed, n_scen, n_steps, names, channel_widths: Mapping[str, int]) -> bytes:
    parts = [_HEAD.pack(MAGIC, VERSION, int(seed) & 0xFFFFFFFFFFFFFFFF, n_scen, n_steps, len(names))]
    parts += [_encode_name(nm) for nm in names]
    parts.append(struct.pack("<I", len(channel_widths)))
    for nm, w in channel_widths.items():
        parts.append(_encode_name(nm) + struct.pack("<I", int(w)))
    return b"".join(parts)


class ScenarioFileWriter:
    """Writes scenario blocks straight to their place in the file.

    Blocks may arrive in any order and from several threads; positional
    writes keep the file independent of scheduling.
    """

    def __init__(self, path, seed, factor_names, n_scenarios, horizon, channel_widths: Mapping[str, int]):
        self.path = Path(path)
        self.n_scen = int(n_scenarios)
        self.n_steps = int(horizon) + 1
        self.names = tuple(factor_names)
        self.widths = dict(channel_widths)
        head = _header(seed, self.n_scen, self.n_steps, self.names, self.widths)
        self.data_offset = len(head)
        self.row_bytes = self.n_steps * len(self.names) * 8
        self.channel_offsets = {}
        pos = self.data_offset + self.n_scen * self.row_bytes
        for nm, w in self.widths.items():
            self.channel_offsets[nm] = pos
            pos += self.n_scen * w * 8
        self.size = pos
        self._fd = os.open(self.path, os.O_RDWR | os.O_CREAT | os.O_TRUNC, 0o644)
        os.ftruncate(self._fd, self.size)
        os.pwrite(self._fd, head, 0)
        self._lock = threading.Lock()

    def write(self, start, stop, data, channels):
        if data is not None:
            buf = np.ascontiguousarray(data, dtype=_F8).tobytes()
            os.pwrite(self._fd, buf, self.data_offset + start * self.row_bytes)
        for nm, arr in channels.items():
            w = self.widths[nm]
            buf = np.ascontiguousarray(arr, dtype=_F8).tobytes()
            os.pwrite(self._fd, buf, self.channel_offsets[nm] + start * w * 8)

    def close(self):
        if self._fd is not None:
            os.fsync(self._fd)
            os.close(self._fd)
            self._fd = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_scenarios(path, scenarios: ScenarioSet) -> None:
    widths = {k: v.shape[1] for k, v in scenarios.channels.items()}
    with ScenarioFileWriter(
        path, scenarios.seed, scenarios.factor_names, scenarios.n_scenarios, scenarios.data.shape[1] - 1, widths
    ) as w:
        w.write(0, scenarios.n_scenarios, scenarios.data, scenarios.channels)


def read_scenarios(path, mmap: bool = False) -> ScenarioSet:
    path = Path(path)
    with path.open("rb") as fh:
        head = fh.read(_HEAD.size)
        if len(head) < _HEAD.size:
            raise DataValidationError(f"{path}: truncated header")
        magic, version, seed, n_scen, n_steps, n_fac = _HEAD.unpack(head)
        if magic != MAGIC:
            raise DataValidationError(f"{path}: not a scenario file")
        if version != VERSION:
            raise DataValidationError(f"{path}: unsupported version {version}")

        def name():
            (ln,) = struct.unpack("<H", fh.read(2))
            return fh.read(ln).decode("utf-8")

        names = tuple(name() for _ in range(n_fac))
        (n_ch,) = struct.unpack("<I", fh.read(4))
        widths = {}
        for _ in range(n_ch):
            nm = name()
            (widths[nm],) = struct.unpack("<I", fh.read(4))
        offset = fh.tell()
    mode = "r" if mmap else None

    def load(off, shape):
        count = int(np.prod(shape))
        if mmap:
            return np.memmap(path, dtype=_F8, mode=mode, offset=off, shape=shape)
        with path.open("rb") as fh:
            fh.seek(off)
            arr = np.frombuffer(fh.read(count * 8), dtype=_F8)
        if arr.size != count:
            raise DataValidationError(f"{path}: file is truncated")
        return arr.reshape(shape).astype(float)

    data = load(offset, (n_scen, n_steps, n_fac))
    offset += n_scen * n_steps * n_fac * 8
    channels = {}
    for nm, w in widths.items():
        channels[nm] = load(offset, (n_scen, w))
        offset += n_scen * w * 8
    return ScenarioSet(int(seed), names, data, channels)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# -- CSV tables ----------------------------------------------------------------------


def _rows(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and "".join(r).strip()]
    if not rows:
        raise DataValidationError(f"{path}: empty file")
    return [h.strip() for h in rows[0]], rows[1:]


COHORT_COLUMNS = ("year", "age", "gender", "exposure", "deaths")


def read_cohorts_csv(path) -> CohortTable:
    header, rows = _rows(path)
    missing = [c for c in COHORT_COLUMNS if c not in header]
    if missing:
        raise DataValidationError(f"{path}: missing column(s) {', '.join(missing)}; header is {','.join(header)}")
    idx = [header.index(c) for c in COHORT_COLUMNS]
    cols: list[list] = [[] for _ in COHORT_COLUMNS]
    for lineno, row in enumerate(rows, start=2):
        try:
            vals = [row[i].strip() for i in idx]
            cols[0].append(int(vals[0]))
            cols[1].append(float(vals[1]))
            cols[2].append(vals[2])
            cols[3].append(float(vals[3]))
            cols[4].append(float(vals[4]))
        except (ValueError, IndexError):
            raise DataValidationError(f"{path}:{lineno}: cannot parse row {row!r}") from None
        e, d = cols[3][-1], cols[4][-1]
        if not 0 <= d <= e:
            raise DataValidationError(
                f"{path}:{lineno}: data row {lineno - 1} needs 0 <= deaths <= exposure, got deaths={d}, exposure={e}"
            )
    return CohortTable(*cols)


def write_cohorts_csv(path, table: CohortTable) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COHORT_COLUMNS)
        for row in zip(table.year, table.age, table.gender, table.exposure, table.deaths):
            w.writerow([int(row[0]), repr(float(row[1])), row[2], repr(float(row[3])), repr(float(row[4]))])


def write_mortality_factors(path, factors: MortalityFactors) -> None:
    k = len(next(iter(factors.values.values())))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["year", "gender"] + [f"v{i + 1}" for i in range(k)])
        for (year, gender), v in sorted(factors.values.items()):
            w.writerow([year, gender] + [repr(float(x)) for x in v])


def read_mortality_factors(path) -> MortalityFactors:
    header, rows = _rows(path)
    if header[:2] != ["year", "gender"]:
        raise DataValidationError(f"{path}: expected columns year,gender,v1,...")
    out = MortalityFactors()
    for row in rows:
        out.values[(int(row[0]), row[1].strip())] = np.array([float(x) for x in row[2:]])
    return out


def write_factor_history(path, years, names: Sequence[str], X: np.ndarray) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["year"] + list(names))
        for y, row in zip(years, X):
            w.writerow([int(y)] + [repr(float(v)) for v in row])


def read_factor_history(path) -> tuple[np.ndarray, tuple[str, ...], np.ndarray]:
    header, rows = _rows(path)
    if header[0] != "year":
        raise MisalignedSeries(f"{path}: first column must be 'year', got {header[0]!r}")
    try:
        years = np.array([int(r[0]) for r in rows], dtype=np.int64)
        X = np.array([[float(v) for v in r[1:]] for r in rows])
    except ValueError as exc:
        raise DataValidationError(f"{path}: {exc}") from None
    if X.shape[1] != len(header) - 1:
        raise MisalignedSeries(f"{path}: rows do not match header")
    return years, tuple(header[1:]), X


def read_pattern_csv(path, names: Sequence[str]) -> SparsityPattern:
    header, rows = _rows(path)
    if header != ["target", "regressor"]:
        raise ConfigError(f"{path}: expected header 'target,regressor', got {','.join(header)!r}")
    return SparsityPattern.from_names(names, [(r[0].strip(), r[1].strip()) for r in rows])


def write_pattern_csv(path, pattern: SparsityPattern, names: Sequence[str]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["target", "regressor"])
        for r, c in pattern.allowed:
            w.writerow([names[r], names[c]])
        for r in sorted(pattern.intercept):
            w.writerow([names[r], "const"])


def write_matrix_csv(path, M: np.ndarray, names: Sequence[str]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([""] + list(names))
        for nm, row in zip(names, M):
            w.writerow([nm] + [repr(float(v)) for v in row])


def read_matrix_csv(path) -> tuple[tuple[str, ...], np.ndarray]:
    header, rows = _rows(path)
    names = tuple(header[1:])
    M = np.array([[float(v) for v in r[1:]] for r in rows])
    return names, M


def write_report(directory, report: CalibrationReport) -> dict[str, Path]:
    """Coefficient table, A, Σ, correlations with p-values and residuals."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    names = report.factor_names
    paths = {}
    p = d / "coefficients.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["target", "regressor", "coefficient", "stderr", "pvalue"])
        for row in report.coefficient_rows():
            w.writerow([row[0], row[1]] + [repr(float(v)) for v in row[2:]])
    paths["coefficients"] = p
    paths["A"] = d / "A.csv"
    write_matrix_csv(paths["A"], report.A, names)
    paths["residuals"] = d / "residuals.csv"
    write_factor_history(paths["residuals"], report.years, names, report.residuals)
    if report.sigma is not None:
        for key, M in (("sigma", report.sigma.cov), ("correlation", report.sigma.corr), ("correlation_pvalues", report.sigma.pvalues)):
            paths[key] = d / f"{key}.csv"
            write_matrix_csv(paths[key], M, names)
    return paths


def write_model_json(path, model: VarModel, x0=None) -> None:
    doc = {
        "factor_names": list(model.factor_names),
        "nonstationary": list(model.nonstationary),
        "A": model.A.tolist(),
        "sigma": model.sigma.tolist(),
        "offset": np.asarray(model.offset).tolist(),
    }
    if x0 is not None:
        doc["x0"] = np.asarray(x0, dtype=float).tolist()
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def read_model_json(path) -> tuple[VarModel, np.ndarray | None]:
    doc = json.loads(Path(path).read_text())
    model = VarModel(
        np.array(doc["A"]), np.array(doc["offset"]), np.array(doc["sigma"]), tuple(doc["factor_names"]), tuple(doc["nonstationary"])
    )
    x0 = np.array(doc["x0"]) if "x0" in doc else None
    return model, x0


def write_quantile_table(path, years, table: np.ndarray, quantiles: Sequence[float]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["year"] + ["q" + f"{100 * q:.6g}" for q in quantiles])
        for y, row in zip(years, table):
            w.writerow([int(y)] + [repr(float(v)) for v in row])


# -- views file ------------------------------------------------------------------------


def parse_views(doc: Mapping[str, Any] | None) -> Views:
    doc = doc or {}
    known = {"stationary_medians", "drifts", "cointegration", "offsets", "forecasts"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown views section(s): {sorted(unknown)}")
    forecasts = {
        str(k): {int(t): float(v) for t, v in (steps or {}).items()} for k, steps in (doc.get("forecasts") or {}).items()
    }
    return Views(
        xbar0={str(k): float(v) for k, v in (doc.get("stationary_medians") or {}).items()},
        drifts={str(k): float(v) for k, v in (doc.get("drifts") or {}).items()},
        cointegration={str(k): float(v) for k, v in (doc.get("cointegration") or {}).items()},
        offsets={str(k): float(v) for k, v in (doc.get("offsets") or {}).items()},
        forecasts=forecasts,
    )


def views_to_doc(views: Views) -> dict:
    return {
        "stationary_medians": dict(views.xbar0),
        "drifts": dict(views.drifts),
        "cointegration": dict(views.cointegration),
        "offsets": dict(views.offsets),
        "forecasts": {k: dict(v) for k, v in views.forecasts.items()},
    }


def read_views(path) -> Views:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_views(doc)


# -- run configuration -------------------------------------------------------------------


@dataclass
class RunConfig:
    """Parsed run configuration; relative paths resolve against ``base_dir``."""

    raw: dict
    base_dir: Path
    source: Path | None = None
    overrides: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        sec = self.raw.get(name) or {}
        if not isinstance(sec, dict):
            raise ConfigError(f"config section {name!r} must be a mapping")
        return sec

    def path(self, section: str, key: str, required: bool = True, must_exist: bool = True) -> Path | None:
        val = self.section(section).get(key)
        if val is None:
            if required:
                raise ConfigError(f"config needs {section}.{key}")
            return None
        p = Path(val)
        if not p.is_absolute():
            p = self.base_dir / p
        if must_exist and not p.exists():
            raise ConfigError(f"{section}.{key}: file {p} does not exist")
        return p

    @property
    def seed(self) -> int:
        seed = self.overrides.get("seed", self.raw.get("seed"))
        if seed is None:
            raise ConfigError("config must set an explicit seed")
        return int(seed)

    def simulation(self, key: str, default=None):
        if key in self.overrides and self.overrides[key] is not None:
            return self.overrides[key]
        return self.section("simulation").get(key, default)

    @property
    def output_dir(self) -> Path:
        out = Path(self.raw.get("output_dir", "output"))
        return out if out.is_absolute() else self.base_dir / out

    def digest(self) -> str:
        """Hash of everything that can change outputs (worker count excluded)."""
        raw = dict(self.raw)
        if isinstance(raw.get("simulation"), dict):
            raw["simulation"] = {k: v for k, v in raw["simulation"].items() if k != "threads"}
        ov = {k: v for k, v in self.overrides.items() if k != "threads"}
        body = json.dumps({"config": raw, "overrides": ov}, sort_keys=True, default=str)
        return hashlib.sha256(body.encode()).hexdigest()


def load_config(path, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    ov = {k: v for k, v in (overrides or {}).items() if v is not None}
    return RunConfig(raw, path.parent.resolve(), path, ov)


@dataclass
class RunManifest:
    command: str
    config_hash: str
    version: str
    timings: dict[str, float] = field(default_factory=dict)
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)

    def write(self, path) -> None:
        doc = {
            "command": self.command,
            "config_hash": self.config_hash,
            "version": self.version,
            "timings": {k: round(v, 6) for k, v in self.timings.items()},
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": dict(sorted(self.outputs.items())),
        }
        Path(path).write_text(json.dumps(doc, indent=1) + "\n")
