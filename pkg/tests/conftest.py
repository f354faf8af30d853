import numpy as np
import pytest

from eikmarch import (FmConfig, RegularGrid, ScalarField, SourceSpec,
                      build_distance_factor, fm_solve)


@pytest.fixture(scope="session", autouse=True)
def jit_warmup():
    """Touch every compiled code path once so timed tests exclude JIT."""
    for counts in ((5, 5), (4, 4, 4)):
        grid = RegularGrid(counts, 0.5)
        src = SourceSpec(tuple(c // 2 for c in counts))
        m = ScalarField.full(grid, 1.0)
        dist = build_distance_factor(grid, src)
        for order in (1, 2):
            fm_solve(grid, m, src, dist, FmConfig(order=order))
            fm_solve(grid, m, src, dist,
                     FmConfig(order=order, enforce_monotonicity=True))
            fm_solve(grid, m, src, None, FmConfig(order=order, mode="plain"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
