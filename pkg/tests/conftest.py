"""Shared fixtures: the reference scenario used across the suite."""

import numpy as np
import pytest

from anthractl import (
    CostSpec,
    HostState,
    ModelParams,
    SeasonalForcing,
)


@pytest.fixture
def season_params() -> ModelParams:
    """The bundled experiment parameters: seasonal alpha bursts, theta1=0.6."""
    return ModelParams.with_default_forcings(
        theta1=0.6, alpha=SeasonalForcing(a=4.0, b=0.75, c=0.2))


@pytest.fixture
def season_x0() -> HostState:
    return HostState(theta=0.2, v=0.5, v_r=0.0)


@pytest.fixture
def unit_cost() -> CostSpec:
    return CostSpec(k=1.0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20260819)
