"""Shared fixtures: datasets are expensive, so they are session-scoped."""

import numpy as np
import pytest

from portion3d.dataset import GeneratorConfig, build_dataset


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """10-sample dataset for fast pipeline and CLI tests (8 train / 2 test)."""
    out = tmp_path_factory.mktemp("tiny_dataset")
    config = GeneratorConfig(n_samples=10, seed=7)
    manifest = build_dataset(config, out)
    return config, manifest


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """60-sample dataset for tests that need some statistical weight."""
    out = tmp_path_factory.mktemp("small_dataset")
    config = GeneratorConfig(n_samples=60, seed=3)
    manifest = build_dataset(config, out)
    return config, manifest


@pytest.fixture(scope="session")
def default_dataset(tmp_path_factory):
    """The full default dataset (500 samples, seed 0) used by acceptance."""
    out = tmp_path_factory.mktemp("default_dataset")
    config = GeneratorConfig()
    manifest = build_dataset(config, out)
    return config, manifest


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
