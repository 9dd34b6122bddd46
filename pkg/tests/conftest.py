"""Shared fixtures: seeded synthetic data reused across test modules."""

import numpy as np
import pytest

from sptlab.synthetic import gbm_bundle, planted_premium_bundle


@pytest.fixture(scope="session")
def small_bundle():
    """5 assets, 2 years of simulated daily data with cap/mu channels."""
    return gbm_bundle(n=5, years=2.0, seed=42)


@pytest.fixture(scope="session")
def planted_bundle():
    """10 assets, 10 years, smallest-cap asset earns a daily premium."""
    return planted_premium_bundle(n=10, years=10.0, seed=11)


@pytest.fixture(scope="session")
def long_bundle():
    """23 calendar years of daily data, enough for the default rolling plan."""
    return gbm_bundle(n=6, years=23.0, seed=5)
