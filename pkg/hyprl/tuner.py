import logging
import time
from typing import Any, List

import numpy as np

from hyprl.errors import GridError, HypRLError
from hyprl.metadata import normalize_seed
from hyprl.schemas import MetaDataset, Trial, TrialRecord


class Tuner:
    """One hyperparameter optimization strategy over a tabular meta-dataset.

    Subclasses set ``method`` and implement ``suggest``; ``run`` owns the trial
    loop, the loss lookups and the per-suggestion wall-clock timing.
    """

    logger: logging.Logger
    method: str

    def __init__(self, md: MetaDataset, **kwargs: Any) -> None:
        klass = self.__class__
        self.logger = logging.getLogger(f"{klass.__module__}.{klass.__qualname__}")
        self.md = md

    @staticmethod
    def rng_for(seed: int, dataset_id: int) -> np.random.Generator:
        return np.random.default_rng([normalize_seed(seed), dataset_id])

    def start(self, dataset_id: int, budget: int, rng: np.random.Generator) -> None:
        # per-run setup
        pass

    def suggest(self, trials: List[Trial], rng: np.random.Generator) -> int:
        # next config id given the trials so far
        raise NotImplementedError

    def run(
        self,
        dataset_id: int,
        budget: int,
        rng: np.random.Generator,
        seed: int = 0,
        split_id: int = 0,
    ) -> TrialRecord:
        if budget < 1:
            raise GridError(f"budget must be positive, got {budget}")
        if budget > self.md.n_configs:
            raise GridError(f"budget {budget} exceeds grid size {self.md.n_configs}")
        self.logger.debug(f"{self.method} on dataset {dataset_id}, seed {seed}")

        self.start(dataset_id, budget, rng)
        trials: List[Trial] = []
        chosen = set()
        for t in range(1, budget + 1):
            started = time.perf_counter()
            config_id = int(self.suggest(trials, rng))
            seconds = time.perf_counter() - started
            if config_id in chosen or not 0 <= config_id < self.md.n_configs:
                raise HypRLError(f"{self.method} suggested invalid config {config_id} at t={t}")
            chosen.add(config_id)
            trials.append(Trial(t, config_id, self.md.loss(dataset_id, config_id), seconds))
        return TrialRecord(self.method, dataset_id, seed, trials, split_id)
