"""Inhomogeneous first-order VAR on transformed risk factors.

``x_t = x_{t-1} + A x_{t-1} + a_t + eps_t`` with Gaussian ``eps_t``.

Scenarios are grouped into fixed-size blocks and block ``b`` draws from
its own SFC64 stream, seeded through ``SeedSequence(seed, spawn_key=(b,
purpose))``, so the output depends only on the seed, never on how blocks
are scheduled over threads.  Draws inside a
block are laid out scenario-major, which makes the first ``k`` scenarios
of a run identical for every ``n_scenarios >= k``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatch, NotPSD

logger = logging.getLogger(__name__)

BLOCK_SIZE = 4096
PSD_TOL = 1e-10

# stream purposes; part of the reproducibility contract, never renumber
STREAM_FACTORS = 0
STREAM_RECOVERY = 1
STREAM_POPULATION = 2


def block_rng(seed: int, block: int, purpose: int = STREAM_FACTORS) -> np.random.Generator:
    """Generator for one block of scenarios and one use."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(block), int(purpose)))
    return np.random.Generator(np.random.SFC64(ss))


def symmetric_sqrt(sigma: np.ndarray, tol: float = PSD_TOL) -> np.ndarray:
    """Symmetric square root ``S`` with ``S @ S == sigma``.

    Eigenvalues in ``[-tol, 0)`` are treated as zero; anything more negative
    raises :class:`NotPSD`.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise DimensionMismatch(f"covariance must be square, got {sigma.shape}")
    if not np.allclose(sigma, sigma.T, rtol=0, atol=1e-12):
        raise NotPSD("covariance is not symmetric")
    lam, vec = np.linalg.eigh(0.5 * (sigma + sigma.T))
    if lam.size and lam.min() < -tol:
        raise NotPSD(f"covariance has eigenvalue {lam.min():.3g} < -{tol}")
    lam = np.clip(lam, 0.0, None)
    return (vec * np.sqrt(lam)) @ vec.T


def sample_innovations(sigma: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` zero-mean Gaussian vectors with covariance ``sigma``."""
    root = symmetric_sqrt(sigma)
    z = rng.standard_normal((n, root.shape[0]))
    return z @ root


def step(x_prev, A, a_t, eps) -> np.ndarray:
    x_prev = np.asarray(x_prev, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    a_t = np.asarray(a_t, dtype=float)
    eps = np.asarray(eps, dtype=float)
    n = x_prev.shape[-1]
    if A.shape != (n, n) or a_t.shape[-1] != n or eps.shape[-1] != n:
        raise DimensionMismatch(
            f"state {x_prev.shape}, A {A.shape}, offset {a_t.shape}, noise {eps.shape}"
        )
    return x_prev + x_prev @ A.T + a_t + eps


@dataclass(frozen=True)
class VarModel:
    """Autoregression matrix, offsets and innovation covariance.

    ``offset`` is either a constant vector or an array of shape
    ``(T, n)`` whose row ``t - 1`` is the offset for step ``t``.
    ``nonstationary`` holds the indices of the trending block of the
    state; all other indices are stationary.
    """

    A: np.ndarray
    offset: np.ndarray
    sigma: np.ndarray
    factor_names: tuple[str, ...] = ()
    nonstationary: tuple[int, ...] = ()

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        offset = np.asarray(self.offset, dtype=float)
        if offset.shape[-1] != n or offset.ndim > 2:
            raise DimensionMismatch(f"offset shape {offset.shape} does not match n={n}")
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if sigma.shape != (n, n):
            raise DimensionMismatch(f"sigma shape {sigma.shape} does not match n={n}")
        symmetric_sqrt(sigma)  # validates
        names = tuple(self.factor_names) or tuple(f"x{i}" for i in range(n))
        if len(names) != n:
            raise DimensionMismatch(f"{len(names)} factor names for {n} factors")
        ns = tuple(sorted(int(i) for i in self.nonstationary))
        if len(set(ns)) != len(ns) or any(i < 0 or i >= n for i in ns):
            raise DimensionMismatch(f"invalid nonstationary indices {ns}")
        for name, val in (("A", A), ("offset", offset), ("sigma", sigma)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "factor_names", names)
        object.__setattr__(self, "nonstationary", ns)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def stationary(self) -> tuple[int, ...]:
        ns = set(self.nonstationary)
        return tuple(i for i in range(self.n) if i not in ns)

    def index(self, name: str) -> int:
        return self.factor_names.index(name)

    def offsets(self, horizon: int) -> np.ndarray:
        """Offset rows for steps ``1..horizon`` as a ``(horizon, n)`` array."""
        if self.offset.ndim == 1:
            return np.broadcast_to(self.offset, (horizon, self.n))
        if self.offset.shape[0] < horizon:
            raise DimensionMismatch(
                f"offset sequence covers {self.offset.shape[0]} steps, horizon is {horizon}"
            )
        return self.offset[:horizon]

    def with_offset(self, offset) -> "VarModel":
        return VarModel(self.A, offset, self.sigma, self.factor_names, self.nonstationary)

    def with_sigma(self, sigma) -> "VarModel":
        return VarModel(self.A, self.offset, sigma, self.factor_names, self.nonstationary)


@dataclass
class ScenarioSet:
    """Simulated factor paths plus named per-scenario channels.

    ``data`` has shape ``(n_scenarios, horizon + 1, n_factors)`` with
    ``data[:, 0] == initial_state``.  Channels are 2-D arrays with one row
    per scenario; flow channels (returns, payments) cover years
    ``1..horizon``, level channels (population, CPI) years ``0..horizon``.
    """

    seed: int
    factor_names: tuple[str, ...]
    data: np.ndarray
    channels: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_scenarios(self) -> int:
        return self.data.shape[0]

    @property
    def horizon(self) -> int:
        return self.data.shape[1] - 1

    @property
    def n_factors(self) -> int:
        return self.data.shape[2]

    @property
    def initial_state(self) -> np.ndarray:
        return self.data[0, 0]

    def factor(self, name: str) -> np.ndarray:
        return self.data[:, :, self.factor_names.index(name)]

    def copy(self) -> "ScenarioSet":
        return ScenarioSet(
            self.seed, self.factor_names, self.data.copy(), {k: v.copy() for k, v in self.channels.items()}
        )


def simulate_block(
    model: VarModel,
    x0: np.ndarray,
    horizon: int,
    count: int,
    rng: np.random.Generator,
    root: np.ndarray | None = None,
    out: np.ndarray | None = None,
) -> np.ndarray:
    """Simulate ``count`` paths; returns ``(count, horizon + 1, n)``."""
    n = model.n
    if root is None:
        root = symmetric_sqrt(model.sigma)
    offsets = model.offsets(horizon)
    if out is None:
        out = np.empty((count, horizon + 1, n))
    z = rng.standard_normal((count, horizon, n))
    eps = z @ root  # root is symmetric
    eps += offsets  # broadcasts over scenarios
    M = model.A.T + np.eye(n)
    x = np.broadcast_to(x0, (count, n)).copy()
    out[:, 0, :] = x
    for t in range(horizon):
        x = x @ M
        x += eps[:, t, :]
        out[:, t + 1, :] = x
    return out


def block_ranges(n_scenarios: int, block_size: int = BLOCK_SIZE) -> list[tuple[int, int, int]]:
    """``(block_index, start, stop)`` triples covering ``n_scenarios``."""
    return [
        (b, s, min(s + block_size, n_scenarios))
        for b, s in enumerate(range(0, n_scenarios, block_size))
    ]


def run_blocks(
    fn: Callable[[int, int, int], None],
    n_scenarios: int,
    threads: int = 1,
    block_size: int = BLOCK_SIZE,
) -> None:
    """Call ``fn(block, start, stop)`` for every block, possibly in threads."""
    ranges = block_ranges(n_scenarios, block_size)
    if threads <= 1 or len(ranges) == 1:
        for r in ranges:
            fn(*r)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for fut in [pool.submit(fn, *r) for r in ranges]:
            fut.result()


def simulate(
    model: VarModel,
    x0,
    horizon: int,
    n_scenarios: int,
    seed: int,
    threads: int = 1,
) -> ScenarioSet:
    """Simulate ``n_scenarios`` factor paths of length ``horizon``."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.n,):
        raise DimensionMismatch(f"initial state {x0.shape} does not match n={model.n}")
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    model.offsets(horizon)
    root = symmetric_sqrt(model.sigma)
    data = np.empty((n_scenarios, horizon + 1, model.n))

    def work(b, start, stop):
        simulate_block(model, x0, horizon, stop - start, block_rng(seed, b), root, out=data[start:stop])

    run_blocks(work, n_scenarios, threads)
    return ScenarioSet(int(seed), model.factor_names, data)


@dataclass(frozen=True)
class StationarityReport:
    eigenvalues: np.ndarray
    moduli: np.ndarray
    stationary: bool
    unit_roots: int
    explosive: bool
    oscillating: bool
    unit_root_factors: tuple[str, ...]
    partition_consistent: bool | None

    def summary(self) -> str:
        lines = [f"{'eigenvalue':>24} {'modulus':>10}"]
        for lam, m in zip(self.eigenvalues, self.moduli):
            lines.append(f"{lam.real:>11.6f}{lam.imag:+11.6f}j {m:>10.6f}")
        lines.append(
            f"stationary={self.stationary} unit_roots={self.unit_roots} "
            f"explosive={self.explosive} oscillating={self.oscillating}"
        )
        lines.append("unit-root factors: " + (", ".join(self.unit_root_factors) or "none"))
        return "\n".join(lines)


def stationarity_report(
    A,
    nonstationary: Sequence[int] | None = None,
    factor_names: Sequence[str] | None = None,
    tol: float = 1e-8,
) -> StationarityReport:
    """Eigen-analysis of the companion matrix ``A + I``.

    Unit-root directions are attributed to factors by column-pivoted QR on
    a basis of the unit-modulus eigenspace: the pivots are the factors
    that best span that space.
    """
    from scipy.linalg import qr

    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    names = list(factor_names) if factor_names is not None else [f"x{i}" for i in range(n)]
    lam, vec = np.linalg.eig(A + np.eye(n))
    order = np.lexsort((lam.imag, -np.abs(lam)))
    lam, vec = lam[order], vec[:, order]
    mod = np.abs(lam)
    unit = np.abs(mod - 1.0) <= tol
    k = int(unit.sum())

    factors: tuple[str, ...] = ()
    if k:
        V = vec[:, unit]
        basis = np.column_stack([V.real, V.imag])
        u, s, _ = np.linalg.svd(basis, full_matrices=False)
        rank = min(k, int(np.sum(s > 1e-10 * s[0])))
        span = u[:, :rank]
        _, _, piv = qr(span.T, pivoting=True)
        factors = tuple(names[i] for i in sorted(piv[:rank]))

    consistent = None
    if nonstationary is not None:
        consistent = set(factors) == {names[i] for i in nonstationary}

    return StationarityReport(
        eigenvalues=lam,
        moduli=mod,
        stationary=bool(np.all(mod < 1.0 - tol)),
        unit_roots=k,
        explosive=bool(np.any(mod > 1.0 + tol)),
        oscillating=bool(np.any(np.abs(lam.imag) > tol)),
        unit_root_factors=factors,
        partition_consistent=consistent,
    )
