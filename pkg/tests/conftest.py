import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from svyconform import FinitePopulation, SyntheticPopSpec, generate_population


@pytest.fixture(scope="session")
def small_pop() -> FinitePopulation:
    """40 units, 2 strata, 4 clusters, a size measure, y linear in x."""
    rng = np.random.default_rng(7)
    n = 40
    x = rng.normal(size=(n, 2))
    y = 3.0 + 2.0 * x[:, 0] - x[:, 1] + 0.5 * rng.normal(size=n)
    return FinitePopulation(
        ids=np.arange(1, n + 1),
        x=x,
        y=y,
        stratum=np.repeat(["a", "b"], [24, 16]),
        cluster=np.tile(["c1", "c2", "c3", "c4"], 10),
        size_measure=rng.uniform(0.5, 4.0, size=n),
    )


@pytest.fixture(scope="session")
def medium_pop() -> FinitePopulation:
    return generate_population(
        SyntheticPopSpec(
            n_units=2000,
            n_strata=3,
            n_clusters=80,
            covariate_dim=3,
            noise_scale=40.0,
            informativeness=0.0,
            seed=5,
        )
    )
