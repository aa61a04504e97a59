from typing import Any, List

import numpy as np

from hyprl.errors import GridError
from hyprl.schemas import MetaDataset, Trial
from hyprl.schemas.grid import HyperparameterGrid
from hyprl.tuner import Tuner


def random_search(grid: HyperparameterGrid, budget: int, rng: np.random.Generator) -> List[int]:
    """Uniform sampling without replacement."""
    if budget > len(grid):
        raise GridError(f"budget {budget} exceeds grid size {len(grid)}")
    if budget < 0:
        raise GridError(f"budget must not be negative, got {budget}")
    return [int(i) for i in rng.choice(len(grid), size=budget, replace=False)]


class RandomSearchTuner(Tuner):
    method = "random"

    def __init__(self, md: MetaDataset, **kwargs: Any) -> None:
        super().__init__(md, **kwargs)
        self.order: List[int] = []

    def start(self, dataset_id: int, budget: int, rng: np.random.Generator) -> None:
        self.order = random_search(self.md.grid, budget, rng)

    def suggest(self, trials: List[Trial], rng: np.random.Generator) -> int:
        return self.order[len(trials)]
