# Tuning as a sequential decision problem over a tabular meta-dataset. A state
# is the dataset's standardized metafeatures plus every (configuration, reward)
# pair seen so far, starting from an all-zero sentinel pair. Episodes end when
# the budget is spent or the same configuration is picked twice in a row.

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from hyprl.errors import EpisodeError
from hyprl.metadata import standardize_metafeatures
from hyprl.schemas import MetaDataset


class TerminalReason(Enum):
    NONE = "none"
    BUDGET = "budget"
    REPEAT = "repeat"


@dataclass(frozen=True, eq=False)
class EnvState:
    dataset_id: int
    static: np.ndarray
    # one row per history entry: encoded configuration followed by its reward
    inputs: np.ndarray
    actions: Tuple[int, ...] = ()
    terminal_reason: TerminalReason = TerminalReason.NONE

    def __post_init__(self) -> None:
        self.static.setflags(write=False)
        self.inputs.setflags(write=False)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EnvState):
            return NotImplemented
        return (
            self.dataset_id == other.dataset_id
            and self.actions == other.actions
            and self.terminal_reason == other.terminal_reason
            and np.array_equal(self.static, other.static)
            and np.array_equal(self.inputs, other.inputs)
        )

    @property
    def step_count(self) -> int:
        return len(self.actions)

    @property
    def terminal(self) -> bool:
        return self.terminal_reason is not TerminalReason.NONE

    @property
    def history(self) -> List[Tuple[np.ndarray, float]]:
        return [(row[:-1], float(row[-1])) for row in self.inputs]

    @property
    def rewards(self) -> List[float]:
        # sentinel excluded
        return [float(r) for r in self.inputs[1:, -1]]


@dataclass(frozen=True)
class StepOutcome:
    next_state: EnvState
    reward: float
    terminal: bool = field(init=False)
    terminal_reason: TerminalReason = TerminalReason.NONE

    def __post_init__(self) -> None:
        object.__setattr__(self, "terminal", self.terminal_reason is not TerminalReason.NONE)


def reward(md: MetaDataset, dataset_id: int, action: int) -> float:
    if not md.has_dataset(dataset_id):
        raise EpisodeError(f"unknown dataset {dataset_id}")
    if not 0 <= action < md.n_configs:
        raise EpisodeError(f"action {action} outside [0, {md.n_configs})")
    return -md.loss(dataset_id, action)


class TuningEnvironment:
    """Episodes over one meta-dataset with a fixed trial budget.

    Metafeatures are standardized with the training statistics of ``split_id``
    unless ``static`` is given. A meta-dataset with splits needs one of the two;
    without splits every dataset counts as training data.
    """

    def __init__(
        self,
        md: MetaDataset,
        budget: int,
        static: Optional[np.ndarray] = None,
        split_id: Optional[int] = None,
    ) -> None:
        if budget < 1:
            raise EpisodeError(f"budget must be positive, got {budget}")
        self.md = md
        self.budget = budget
        if static is None:
            if split_id is not None:
                static = md.static_features(split_id)
            elif md.splits:
                raise EpisodeError("meta-dataset has splits: pass static features or a split_id")
            else:
                static, _ = standardize_metafeatures(md.metafeatures, md.dataset_ids)
        self.static = np.asarray(static, dtype=np.float64)
        self.input_dim = md.grid.encoded_dim + 1

    def reset(self, dataset_id: int) -> EnvState:
        if not self.md.has_dataset(dataset_id):
            raise EpisodeError(f"unknown dataset {dataset_id}")
        return EnvState(
            dataset_id=dataset_id,
            static=self.static[dataset_id].copy(),
            inputs=np.zeros((1, self.input_dim)),
        )

    def reward(self, dataset_id: int, action: int) -> float:
        return reward(self.md, dataset_id, action)

    def step(self, state: EnvState, action: int) -> StepOutcome:
        if state.terminal:
            raise EpisodeError("cannot step a terminal state")
        r = self.reward(state.dataset_id, action)
        row = np.append(self.md.grid.encode(action), r)

        if state.actions and state.actions[-1] == action:
            reason = TerminalReason.REPEAT
        elif state.step_count + 1 >= self.budget:
            reason = TerminalReason.BUDGET
        else:
            reason = TerminalReason.NONE

        next_state = EnvState(
            dataset_id=state.dataset_id,
            static=state.static,
            inputs=np.vstack([state.inputs, row]),
            actions=state.actions + (action,),
            terminal_reason=reason,
        )
        return StepOutcome(next_state=next_state, reward=r, terminal_reason=reason)


def sample_datasets(dataset_ids: Sequence[int], rng: np.random.Generator) -> Iterator[int]:
    """Endless uniform draws over the given datasets."""
    dataset_ids = list(dataset_ids)
    if not dataset_ids:
        raise EpisodeError("no datasets to sample from")
    while True:
        yield dataset_ids[int(rng.integers(len(dataset_ids)))]
