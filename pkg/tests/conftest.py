"""Shared fixtures and helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from fairaudit.data import CovariateSchema, ObservationalDataset


def make_dataset(
    n: int = 200,
    seed: int = 0,
    *,
    confounded: bool = False,
    names: tuple[str, ...] = ("a", "b"),
) -> ObservationalDataset:
    """Small synthetic dataset; `confounded` ties Z and Y to the first
    covariate so adjustment matters."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, len(names)))
    if confounded:
        e = 1.0 / (1.0 + np.exp(-(0.2 + 1.2 * x[:, 0])))
        p = 0.15 + 0.5 / (1.0 + np.exp(-1.1 * x[:, 0]))
    else:
        e = np.full(n, 0.45)
        p = np.full(n, 0.3)
    z = (rng.uniform(size=n) < e).astype(float)
    y = (rng.uniform(size=n) < np.clip(p + 0.1 * z, 0.0, 1.0)).astype(float)
    schema = CovariateSchema.of(*[(name, "continuous") for name in names])
    return ObservationalDataset(y=y, z=z, x=x, schema=schema)


@pytest.fixture
def small_dataset() -> ObservationalDataset:
    return make_dataset(200, seed=3)


@pytest.fixture
def confounded_dataset() -> ObservationalDataset:
    return make_dataset(600, seed=7, confounded=True)
