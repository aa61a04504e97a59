from typing import Sequence

import numpy as np
import pytest

from hyprl.meta import N_METAFEATURES
from hyprl.metadata import encode_grid, generate_synthetic_metadataset, grid_from_spec
from hyprl.schemas import MetaDataset, Split
from hyprl.schemas.grid import schema_from_tuples

SMALL_GRID = "act:one-hot:relu,tanh;width:scalar:8,16,32"


def make_md(losses: Sequence[Sequence[float]], n_folds: int = 1) -> MetaDataset:
    """Meta-dataset over a 1-d grid with the given fold-mean losses per dataset."""
    losses = np.asarray(losses, dtype=np.float64)
    n_datasets, n_configs = losses.shape
    grid = encode_grid(schema_from_tuples([("x", "scalar", tuple(range(n_configs)))]))
    metafeatures = np.arange(n_datasets * N_METAFEATURES, dtype=np.float64).reshape(
        n_datasets, N_METAFEATURES
    )
    metafeatures = np.sin(metafeatures) + 2.0
    splits = []
    if n_datasets >= 2:
        splits = [
            Split(0, tuple(range(1, n_datasets)), (0,)),
            Split(1, tuple(range(n_datasets - 1)), (n_datasets - 1,)),
        ]
    return MetaDataset(
        grid=grid,
        metafeatures=metafeatures,
        responses=np.repeat(losses[:, :, None], n_folds, axis=2),
        splits=splits,
    )


@pytest.fixture
def toy_md() -> MetaDataset:
    # one dataset, four configurations
    return make_md([[0.9, 0.7, 0.5, 0.1]])


@pytest.fixture
def small_grid():
    return grid_from_spec(SMALL_GRID)


@pytest.fixture
def synthetic_md(small_grid) -> MetaDataset:
    return generate_synthetic_metadataset(6, small_grid, n_folds=3, seed=7, n_splits=3)
