import numpy as np
import pytest

from safecycle.dynamics import CollisionDisc, InputBounds, LateralMode
from safecycle.reachability import ConstantProfile, Grid3, solve


@pytest.fixture(scope="session")
def disc():
    return CollisionDisc(1.0)


@pytest.fixture(scope="session")
def bounds():
    return InputBounds(3.0, 1.5)


@pytest.fixture(scope="session")
def small_grid():
    return Grid3((-10.0, -10.0, -2.0), (50.0, 10.0, 6.0), (31, 21, 9))


@pytest.fixture(scope="session")
def small_field(small_grid, bounds, disc):
    """A solved constant-profile field shared by query-level tests."""
    return solve(
        small_grid,
        horizon_T=8.0,
        tol=1e-6,
        bounds=bounds,
        profile=ConstantProfile(bounds.d_max),
        disc=disc,
        mode=LateralMode.FROZEN,
    )


@pytest.fixture(scope="session")
def fine_field(bounds, disc):
    """Resolves sub-meter lateral offsets; used by labeling-level tests."""
    grid = Grid3((-10.0, -10.0, -2.0), (50.0, 10.0, 6.0), (61, 41, 33))
    return solve(
        grid,
        horizon_T=8.0,
        tol=1e-5,
        bounds=bounds,
        profile=ConstantProfile(bounds.d_max),
        disc=disc,
        mode=LateralMode.FROZEN,
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
