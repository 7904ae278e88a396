"""Systemic and idiosyncratic longevity risk.

Survival probabilities are logistic in a small number of factors:
``logit p(a) = sum_i v_i * phi_i(a)`` with piecewise-linear hat functions
``phi_i`` centred on a set of knot ages.  Historical factors are fitted by
maximum likelihood one year at a time; future cohort sizes are binomial.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from .errors import AgeOutOfRange, DataValidationError, DegenerateData, InsufficientAges

logger = logging.getLogger(__name__)

GENDERS = ("m", "f")


@dataclass(frozen=True)
class MortalityBasis:
    """Hat-function basis on ``knots``.

    With a single knot the basis is the constant function 1 on
    ``[min_age, max_age]``.
    """

    knots: tuple[float, ...] = (18.0, 65.0, 105.0)
    min_age: float | None = None
    max_age: float | None = None

    def __post_init__(self):
        knots = tuple(float(k) for k in self.knots)
        if not knots or any(b <= a for a, b in zip(knots, knots[1:])):
            raise ValueError(f"knots must be nonempty and strictly increasing: {knots}")
        object.__setattr__(self, "knots", knots)
        if self.min_age is None:
            object.__setattr__(self, "min_age", knots[0])
        if self.max_age is None:
            object.__setattr__(self, "max_age", knots[-1])

    @property
    def n_factors(self) -> int:
        return len(self.knots)

    def evaluate(self, ages) -> np.ndarray:
        """Basis matrix of shape ``(len(ages), n_factors)``."""
        ages = np.atleast_1d(np.asarray(ages, dtype=float))
        bad = (ages < self.min_age) | (ages > self.max_age) | ~np.isfinite(ages)
        if np.any(bad):
            raise AgeOutOfRange(
                f"ages {ages[bad].tolist()} outside [{self.min_age}, {self.max_age}]"
            )
        n = self.n_factors
        if n == 1:
            return np.ones((ages.size, 1))
        eye = np.eye(n)
        return np.column_stack([np.interp(ages, self.knots, eye[i]) for i in range(n)])


def basis_value(basis: MortalityBasis, age: float) -> np.ndarray:
    return basis.evaluate([age])[0]


def survival_probability(v, age, basis: MortalityBasis) -> np.ndarray | float:
    """One-year survival probability at ``age`` given factors ``v``.

    ``v`` may carry leading batch dimensions (``(..., n_factors)``); ``age``
    may be a scalar or an array of ages, in which case the result gains a
    trailing age axis.
    """
    v = np.asarray(v, dtype=float)
    phi = basis.evaluate(age)
    eta = v @ phi.T
    if np.ndim(age) == 0:
        eta = eta[..., 0]
    p = expit(eta)
    return float(p) if np.ndim(p) == 0 else p


@dataclass
class CohortTable:
    """Exposures and deaths by year, age and gender (one row per cell)."""

    year: np.ndarray
    age: np.ndarray
    gender: np.ndarray
    exposure: np.ndarray
    deaths: np.ndarray

    def __post_init__(self):
        self.year = np.asarray(self.year, dtype=np.int64)
        self.age = np.asarray(self.age, dtype=float)
        self.gender = np.asarray(self.gender).astype(str)
        self.exposure = np.asarray(self.exposure, dtype=float)
        self.deaths = np.asarray(self.deaths, dtype=float)
        n = self.year.size
        if any(a.shape != (n,) for a in (self.age, self.gender, self.exposure, self.deaths)):
            raise DataValidationError("cohort table columns differ in length")
        bad = (self.exposure < 0) | (self.deaths < 0) | (self.deaths > self.exposure)
        if np.any(bad):
            row = int(np.argmax(bad))
            raise DataValidationError(
                f"row {row}: need 0 <= deaths <= exposure, got deaths={self.deaths[row]}, "
                f"exposure={self.exposure[row]}"
            )

    def __len__(self):
        return self.year.size

    def select(self, year: int, gender: str) -> "CohortTable":
        m = (self.year == year) & (self.gender == gender)
        return CohortTable(self.year[m], self.age[m], self.gender[m], self.exposure[m], self.deaths[m])

    def groups(self) -> list[tuple[int, str]]:
        keys = sorted({(int(y), str(g)) for y, g in zip(self.year, self.gender)})
        return keys


def log_likelihood(v, ages, exposure, deaths, basis: MortalityBasis) -> float:
    eta = basis.evaluate(ages) @ np.asarray(v, dtype=float)
    # log(1 + e^eta) computed stably
    softplus = np.logaddexp(0.0, eta)
    return float(np.sum((exposure - deaths) * eta - exposure * softplus))


def log_likelihood_gradient(v, ages, exposure, deaths, basis: MortalityBasis) -> np.ndarray:
    phi = basis.evaluate(ages)
    p = expit(phi @ np.asarray(v, dtype=float))
    return phi.T @ ((exposure - deaths) - exposure * p)


def _initial_guess(phi, ages, exposure, deaths, knots) -> np.ndarray:
    logit = np.log((exposure - deaths + 0.5) / (deaths + 0.5))
    live = np.flatnonzero(exposure > 0)
    rows = []
    for k in knots:
        j = live[np.argmin(np.abs(ages[live] - k))]
        if j not in rows:
            rows.append(j)
    rows = np.array(rows)
    v0, *_ = np.linalg.lstsq(phi[rows], logit[rows], rcond=None)
    return v0


def fit_year(
    cohorts: CohortTable,
    basis: MortalityBasis,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> np.ndarray:
    """Maximum-likelihood factors for one year and gender.

    Damped Newton ascent on the concave log-likelihood.  Convergence is
    declared when the sup-norm of the gradient divided by total exposure
    falls below ``tol``; the scaling keeps the criterion meaningful for
    national-size exposures.
    """
    ages, E, D = cohorts.age, cohorts.exposure, cohorts.deaths
    live = E > 0
    if np.count_nonzero(live) < basis.n_factors:
        raise InsufficientAges(
            f"need at least {basis.n_factors} ages with positive exposure, got {np.count_nonzero(live)}"
        )
    ages, E, D = ages[live], E[live], D[live]
    phi = basis.evaluate(ages)
    if np.all(D == 0):
        raise DegenerateData("no deaths at any age: survival logits are unbounded")
    if np.all(D == E):
        raise DegenerateData("every exposed life died: survival logits are unbounded")

    scale = float(E.sum())
    knots = [k for k in basis.knots if basis.min_age <= k <= basis.max_age]
    v = _initial_guess(phi, ages, E, D, knots)

    def objective(w):
        eta = phi @ w
        return float(np.sum((E - D) * eta - E * np.logaddexp(0.0, eta))) / scale

    f = objective(v)
    for it in range(max_iter):
        p = expit(phi @ v)
        grad = phi.T @ ((E - D) - E * p) / scale
        if np.max(np.abs(grad)) < tol:
            return v
        hess = -(phi.T * (E * p * (1.0 - p))) @ phi / scale
        try:
            step = np.linalg.solve(hess, -grad)
            if not np.all(np.isfinite(step)) or grad @ step <= 0:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            step = grad
        t = 1.0
        while True:
            cand = v + t * step
            fc = objective(cand)
            if fc >= f or t < 1e-12:
                break
            t *= 0.5
        if fc < f:
            # no ascent possible at working precision
            break
        v, f = cand, fc
        if np.max(np.abs(v)) > 1e3:
            raise DegenerateData("likelihood maximiser diverges; data separate perfectly")

    p = expit(phi @ v)
    grad = phi.T @ ((E - D) - E * p) / scale
    if np.max(np.abs(grad)) < max(tol, 1e-9):
        return v
    raise DegenerateData(f"Newton iteration did not converge (gradient {np.max(np.abs(grad)):.3g})")


@dataclass
class MortalityFactors:
    """Fitted factor vectors keyed by ``(year, gender)``."""

    values: dict[tuple[int, str], np.ndarray] = field(default_factory=dict)

    @property
    def years(self) -> list[int]:
        return sorted({y for y, _ in self.values})

    def series(self, gender: str) -> tuple[np.ndarray, np.ndarray]:
        """Years and an ``(n_years, n_factors)`` array for one gender."""
        keys = sorted(k for k in self.values if k[1] == gender)
        years = np.array([k[0] for k in keys], dtype=np.int64)
        return years, np.array([self.values[k] for k in keys])


def fit_all_years(cohorts: CohortTable, basis: MortalityBasis, tol: float = 1e-10) -> MortalityFactors:
    """Fit every (year, gender) group.

    Failures do not stop the sweep; once all groups have been tried, the
    first failure's exception type is raised with every failing group
    listed and the individual exceptions attached as ``failures``.
    """
    if len(cohorts) == 0:
        raise InsufficientAges("cohort table is empty")
    out = MortalityFactors()
    failures = []
    for year, gender in cohorts.groups():
        try:
            out.values[(year, gender)] = fit_year(cohorts.select(year, gender), basis, tol)
        except (DataValidationError, DegenerateData) as exc:
            failures.append((year, gender, exc))
    if failures:
        lines = [f"year {y} gender {g}: {type(e).__name__}: {e}" for y, g, e in failures]
        err = type(failures[0][2])("mortality fit failed for:\n  " + "\n  ".join(lines))
        err.failures = failures
        raise err
    return out


@dataclass
class PopulationState:
    """Cohort counts; one entry per (age, gender) cohort."""

    age: np.ndarray
    gender: np.ndarray
    count: np.ndarray

    def __post_init__(self):
        self.age = np.asarray(self.age, dtype=float)
        self.gender = np.asarray(self.gender).astype(str)
        self.count = np.asarray(self.count, dtype=np.int64)
        if np.any(self.count < 0):
            raise DataValidationError("population counts must be nonnegative")


def evolve_population(
    pop: PopulationState,
    v: Mapping[str, np.ndarray],
    basis: MortalityBasis,
    rng: np.random.Generator,
) -> PopulationState:
    """Advance every cohort one year with binomial survival.

    Cohorts that reach ``basis.max_age`` leave the population.
    """
    p = np.empty(pop.age.size)
    for g in np.unique(pop.gender):
        m = pop.gender == g
        p[m] = survival_probability(v[g], pop.age[m], basis)
    survivors = rng.binomial(pop.count, p)
    age = pop.age + 1
    keep = age < basis.max_age
    return PopulationState(age[keep], pop.gender[keep], survivors[keep])


def project_cohort(
    counts0,
    ages: Sequence[float],
    v_path: np.ndarray,
    basis: MortalityBasis,
    rng: np.random.Generator,
) -> np.ndarray:
    """Binomial projection of one cohort along many factor paths.

    Parameters
    ----------
    counts0 : int or array
        Initial cohort size, scalar or one per scenario.
    ages : sequence of float
        Cohort age at each projection start year; ``ages[t]`` is the age
        during the step from ``t`` to ``t + 1``.
    v_path : ndarray, shape (n_scenarios, n_steps, n_factors)
        Mortality factors in force during each step.
    basis : MortalityBasis
    rng : numpy.random.Generator

    Returns
    -------
    ndarray, shape (n_scenarios, n_steps + 1)
        Cohort sizes, with zero once the cohort reaches ``max_age``.
    """
    n_scen, n_steps, _ = v_path.shape
    out = np.zeros((n_scen, n_steps + 1), dtype=np.int64)
    out[:, 0] = counts0
    for t in range(n_steps):
        age = ages[t]
        if age + 1 >= basis.max_age:
            break
        phi = basis.evaluate(age)[0]
        p = expit(v_path[:, t, :] @ phi)
        out[:, t + 1] = rng.binomial(out[:, t], p)
    return out
