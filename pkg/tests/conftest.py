import numpy as np
import pytest

from paxrisk.schema import FeatureStage, collapse_rare_levels, encode_design
from paxrisk.synth import default_study_config, generate


@pytest.fixture(scope="session")
def default_data():
    """The canonical synthetic dataset plus its truth manifest."""
    ds, truth = generate(default_study_config())
    return ds, truth


@pytest.fixture(scope="session")
def collapsed_data(default_data):
    ds, truth = default_data
    return collapse_rare_levels(ds, 50), truth


@pytest.fixture(scope="session")
def small_data():
    """A smaller dataset for fits where n=3361 would be slow."""
    ds, truth = generate(default_study_config(n=900, seed=913))
    return collapse_rare_levels(ds, 30), truth


@pytest.fixture(scope="session")
def small_design(small_data):
    ds, _ = small_data
    return encode_design(ds, FeatureStage.STAGE12, K=8), ds.labels.astype(float)
