"""Synthetic inputs with known parameters, for demos and recovery checks."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .mortality import CohortTable, MortalityBasis, survival_probability
from .varmodel import VarModel, simulate


def synthetic_cohorts(
    factors: Mapping[tuple[int, str], Sequence[float]],
    basis: MortalityBasis,
    ages: Sequence[float] | None = None,
    exposure: float = 1e7,
    rng: np.random.Generator | None = None,
) -> CohortTable:
    """Exposures and deaths for every ``(year, gender)`` in ``factors``.

    Deaths are binomial when ``rng`` is given and set to their expected
    value otherwise.
    """
    ages = np.arange(basis.min_age, basis.max_age + 1) if ages is None else np.asarray(ages, dtype=float)
    cols = {k: [] for k in ("year", "age", "gender", "exposure", "deaths")}
    for (year, gender), v in sorted(factors.items()):
        p = survival_probability(np.asarray(v, dtype=float), ages, basis)
        E = np.full(ages.size, float(exposure))
        if rng is None:
            D = E * (1.0 - p)
        else:
            D = rng.binomial(E.astype(np.int64), 1.0 - p).astype(float)
        cols["year"].append(np.full(ages.size, year))
        cols["age"].append(ages)
        cols["gender"].append(np.full(ages.size, gender))
        cols["exposure"].append(E)
        cols["deaths"].append(D)
    return CohortTable(*(np.concatenate(cols[k]) for k in ("year", "age", "gender", "exposure", "deaths")))


def synthetic_history(model: VarModel, x0, n_years: int, seed: int) -> np.ndarray:
    """One simulated path of ``n_years + 1`` annual states."""
    return simulate(model, x0, n_years, 1, seed).data[0]
