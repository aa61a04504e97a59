from typing import Any, List, Union

import numpy as np

from hyprl.meta import GP_FIT_ITERATIONS, SMBO_N_INIT
from hyprl.schemas import MetaDataset, Trial, TrialRecord
from hyprl.tuner import Tuner
from hyprl.tuners.gp import KernelKind, expected_improvement, fit_gp, gp_posterior_batch
from hyprl.tuners.randomsearch import random_search


class SmboTuner(Tuner):
    """Random initial design, then the unevaluated configuration with the
    highest expected improvement under a GP refitted after every trial."""

    kernel: KernelKind

    def __init__(
        self,
        md: MetaDataset,
        n_init: int = SMBO_N_INIT,
        fit_iterations: int = GP_FIT_ITERATIONS,
        **kwargs: Any,
    ) -> None:
        super().__init__(md, **kwargs)
        self.n_init = n_init
        self.fit_iterations = fit_iterations
        self.initial: List[int] = []

    def start(self, dataset_id: int, budget: int, rng: np.random.Generator) -> None:
        self.initial = random_search(self.md.grid, min(self.n_init, budget), rng)

    def suggest(self, trials: List[Trial], rng: np.random.Generator) -> int:
        if len(trials) < len(self.initial):
            return self.initial[len(trials)]
        evaluated = [trial.config_id for trial in trials]
        losses = np.array([trial.loss for trial in trials])
        encodings = self.md.grid.encodings
        surrogate = fit_gp(
            encodings[evaluated], losses, self.kernel, iterations=self.fit_iterations
        )
        candidates = np.setdiff1d(np.arange(self.md.n_configs), evaluated)
        mean, variance = gp_posterior_batch(surrogate, encodings[candidates])
        scores = expected_improvement(mean, variance, float(losses.min()))
        # candidates are sorted, so ties go to the lowest id
        return int(candidates[np.argmax(scores)])


class IGpTuner(SmboTuner):
    method = "i-gp"
    kernel = KernelKind.SE_ARD


class SpearmintTuner(SmboTuner):
    method = "spearmint"
    kernel = KernelKind.MATERN52


def smbo_run(
    md: MetaDataset,
    dataset_id: int,
    budget: int,
    kernel: Union[KernelKind, str],
    rng: np.random.Generator,
    seed: int = 0,
    split_id: int = 0,
) -> TrialRecord:
    if isinstance(kernel, str):
        kernel = KernelKind.from_str(kernel)
    tuner_cls = IGpTuner if kernel is KernelKind.SE_ARD else SpearmintTuner
    return tuner_cls(md).run(dataset_id, budget, rng, seed, split_id)
