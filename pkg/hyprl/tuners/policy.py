from typing import Any, List, Optional

import numpy as np

from hyprl.environment import EnvState, TuningEnvironment
from hyprl.errors import ShapeError
from hyprl.neuralnet import QNetworkParams, q_forward
from hyprl.schemas import MetaDataset, Trial
from hyprl.tuner import Tuner


class HypRLTuner(Tuner):
    """Greedy rollout of a trained Q-network. A configuration that was already
    tried is masked out, so a run always yields ``budget`` distinct trials."""

    method = "hyp-rl"

    def __init__(
        self,
        md: MetaDataset,
        params: Optional[QNetworkParams] = None,
        static: Optional[np.ndarray] = None,
        split_id: Optional[int] = None,
        **kwargs: Any,
    ) -> None:
        super().__init__(md, **kwargs)
        if params is None:
            raise ValueError("hyp-rl needs trained network parameters")
        if params.n_actions != md.n_configs:
            raise ShapeError(
                f"network has {params.n_actions} outputs, grid has {md.n_configs} configs"
            )
        self.params = params
        self.static = static
        self.split_id = split_id
        self.env: Optional[TuningEnvironment] = None
        self.state: Optional[EnvState] = None

    def start(self, dataset_id: int, budget: int, rng: np.random.Generator) -> None:
        self.env = TuningEnvironment(self.md, budget, self.static, self.split_id)
        self.state = self.env.reset(dataset_id)

    def suggest(self, trials: List[Trial], rng: np.random.Generator) -> int:
        assert self.env is not None and self.state is not None
        if trials:
            self.state = self.env.step(self.state, trials[-1].config_id).next_state
        q = q_forward(self.state, self.params)
        q[list(self.state.actions)] = -np.inf
        return int(np.argmax(q))
