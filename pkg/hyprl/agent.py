import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from hyprl.environment import EnvState, TerminalReason, TuningEnvironment, sample_datasets
from hyprl.errors import EpisodeError
from hyprl.meta import N_METAFEATURES
from hyprl.metadata import normalize_seed, standardize_metafeatures
from hyprl.neuralnet import (
    AdamState,
    QNetworkParams,
    adam_step,
    init_params,
    q_forward,
    q_forward_batch,
    q_gradients,
    save_checkpoint,
)
from hyprl.schemas import MetaDataset, TrainConfig, TrialRecord
from hyprl.tuners.policy import HypRLTuner

TRAINING_LOG_COLUMNS = [
    "episode",
    "dataset_id",
    "steps",
    "return",
    "mean_q",
    "epsilon",
    "frames",
    "target_syncs",
    "mean_reward",
    "mean_ei",
    "return_without_repeat",
]
EPISODE_TRACE_COLUMNS = ["episode", "t", "dataset_id", "action", "reward", "terminal_reason"]

# share of the frames left after the buffer fills spent annealing epsilon
ANNEAL_SHARE = 0.25


@dataclass(frozen=True)
class Experience:
    s: EnvState
    s_next: EnvState
    a: int
    r: float
    # s_next of a terminal experience is kept for logging only
    terminal: bool


class ReplayBuffer:
    """Fixed-capacity FIFO store; the oldest experience is evicted first."""

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.inserted = 0
        self._ring: List[Experience] = []

    def __len__(self) -> int:
        return len(self._ring)

    @property
    def full(self) -> bool:
        return len(self._ring) == self.capacity

    def add(self, experience: Experience) -> None:
        if self.full:
            self._ring[self.inserted % self.capacity] = experience
        else:
            self._ring.append(experience)
        self.inserted += 1

    def contents(self) -> List[Experience]:
        """Oldest first."""
        if not self.full:
            return list(self._ring)
        start = self.inserted % self.capacity
        return self._ring[start:] + self._ring[:start]

    def sample(self, batch_size: int, rng: np.random.Generator) -> List[Experience]:
        if not self._ring:
            raise ValueError("cannot sample from an empty buffer")
        indices = rng.choice(
            len(self._ring), size=batch_size, replace=len(self._ring) < batch_size
        )
        return [self._ring[i] for i in indices]


def _epsilon_greedy(q: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    if rng.random() < epsilon:
        return int(rng.integers(len(q)))
    # argmax returns the first maximum, i.e. the lowest config id
    return int(np.argmax(q))


def select_action(
    state: EnvState, params: QNetworkParams, epsilon: float, rng: np.random.Generator
) -> int:
    return _epsilon_greedy(q_forward(state, params), epsilon, rng)


def compute_targets(
    batch: Sequence[Experience],
    target_params: QNetworkParams,
    gamma: float,
    reward_shift: float = 0.0,
) -> List[Tuple[EnvState, int, float]]:
    """Bellman labels: r for terminal experiences, else
    r + gamma * max_a' Q_target(s', a')."""
    if not batch:
        raise ValueError("batch must not be empty")
    ongoing = [i for i, exp in enumerate(batch) if not exp.terminal]
    bootstrap = np.zeros(len(batch))
    if ongoing:
        q_next = q_forward_batch([batch[i].s_next for i in ongoing], target_params)
        bootstrap[ongoing] = q_next.max(axis=1)
    return [
        (
            exp.s,
            exp.a,
            exp.r + reward_shift + (0.0 if exp.terminal else gamma * bootstrap[i]),
        )
        for i, exp in enumerate(batch)
    ]


def sync_target(params: QNetworkParams) -> QNetworkParams:
    return params.copy()


@dataclass
class EpsilonSchedule:
    """Constant ``start`` until annealing begins, then linear to ``end``."""

    start: float
    end: float
    anneal_frames: int = 1
    anneal_from: Optional[int] = None

    def begin_annealing(self, frame: int, anneal_frames: int) -> None:
        self.anneal_from = frame
        self.anneal_frames = max(1, anneal_frames)

    def value(self, frame: int) -> float:
        if self.anneal_from is None or frame <= self.anneal_from:
            return self.start
        progress = min(1.0, (frame - self.anneal_from) / self.anneal_frames)
        return self.start + progress * (self.end - self.start)


@dataclass
class TrainingLog:
    episodes: pd.DataFrame
    trace: pd.DataFrame

    @property
    def target_syncs(self) -> int:
        if self.episodes.empty:
            return 0
        return int(self.episodes["target_syncs"].iloc[-1])


def train(
    md: MetaDataset,
    train_ids: Sequence[int],
    cfg: TrainConfig,
    static: Optional[np.ndarray] = None,
    split_id: Optional[int] = None,
    checkpoint_dir: Optional[Path] = None,
) -> Tuple[QNetworkParams, TrainingLog]:
    """Deep Q-learning over episodes drawn uniformly from the training datasets.

    Runs ``episodes_per_dataset * len(train_ids)`` episodes. Epsilon stays at its
    start value until the replay buffer is full; after that one gradient step
    happens every ``train_every`` frames, and the target network is refreshed
    every ``target_update`` frames.
    """
    logger = logging.getLogger(__name__)
    cfg.validate()
    train_ids = list(train_ids)
    if not train_ids:
        raise EpisodeError("training split is empty")
    for dataset_id in train_ids:
        if not md.has_dataset(dataset_id):
            raise EpisodeError(f"unknown dataset {dataset_id}")
    if static is None:
        if split_id is not None:
            static = md.static_features(split_id)
        else:
            static, _ = standardize_metafeatures(md.metafeatures, train_ids)

    env = TuningEnvironment(md, cfg.budget, static)
    seed = normalize_seed(cfg.seed)
    params = init_params(
        N_METAFEATURES,
        env.input_dim,
        cfg.n_hidden,
        cfg.n_layer,
        md.n_configs,
        np.random.default_rng([seed, 10]),
    )
    dataset_rng = np.random.default_rng([seed, 11])
    explore_rng = np.random.default_rng([seed, 12])
    replay_rng = np.random.default_rng([seed, 13])

    target = sync_target(params)
    opt = AdamState.zeros_like(params)
    buffer = ReplayBuffer(cfg.buffer_size)
    schedule = EpsilonSchedule(cfg.epsilon_start, cfg.epsilon_end)
    n_episodes = cfg.episodes_per_dataset * len(train_ids)
    estimated_frames = n_episodes * cfg.budget

    frames = 0
    syncs = 0
    updates = 0
    rows: List[Dict[str, float]] = []
    trace: List[Dict[str, object]] = []
    datasets = sample_datasets(train_ids, dataset_rng)
    for episode in range(n_episodes):
        dataset_id = next(datasets)
        state = env.reset(dataset_id)
        epsilon = schedule.value(frames)
        rewards: List[float] = []
        taken_q: List[float] = []
        expected: List[float] = []
        while not state.terminal:
            epsilon = schedule.value(frames)
            q = q_forward(state, params)
            action = _epsilon_greedy(q, epsilon, explore_rng)
            outcome = env.step(state, action)
            buffer.add(
                Experience(state, outcome.next_state, action, outcome.reward, outcome.terminal)
            )
            frames += 1

            if schedule.anneal_from is None and buffer.full:
                remaining = max(1, estimated_frames - frames)
                schedule.begin_annealing(
                    frames, cfg.epsilon_anneal_frames or int(ANNEAL_SHARE * remaining)
                )
                logger.info(f"replay buffer full after {frames} frames, annealing epsilon")
            if buffer.full and frames % cfg.train_every == 0:
                labelled = compute_targets(
                    buffer.sample(cfg.batch_size, replay_rng),
                    target,
                    cfg.gamma,
                    cfg.reward_shift,
                )
                params, opt = adam_step(params, q_gradients(labelled, params), opt, cfg.lr)
                updates += 1
            if frames % cfg.target_update == 0:
                target = sync_target(params)
                syncs += 1

            if rewards:
                expected.append(max(0.0, float(q[action]) - max(rewards)))
            taken_q.append(float(q[action]))
            rewards.append(outcome.reward)
            trace.append(
                {
                    "episode": episode,
                    "t": outcome.next_state.step_count,
                    "dataset_id": dataset_id,
                    "action": action,
                    "reward": outcome.reward,
                    "terminal_reason": outcome.terminal_reason.value,
                }
            )
            state = outcome.next_state

        episode_return = float(np.sum(rewards))
        repeated = state.terminal_reason is TerminalReason.REPEAT
        rows.append(
            {
                "episode": episode,
                "dataset_id": dataset_id,
                "steps": state.step_count,
                "return": episode_return,
                "mean_q": float(np.mean(taken_q)),
                "epsilon": epsilon,
                "frames": frames,
                "target_syncs": syncs,
                "mean_reward": float(np.mean(rewards)),
                "mean_ei": float(np.mean(expected)) if expected else 0.0,
                "return_without_repeat": episode_return - (rewards[-1] if repeated else 0.0),
            }
        )
        if cfg.checkpoint_every and checkpoint_dir is not None:
            if (episode + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(
                    params, Path(checkpoint_dir) / f"model-{episode + 1:06d}.ckpt", split_id
                )
        if n_episodes >= 10 and (episode + 1) % (n_episodes // 10) == 0:
            logger.info(
                f"episode {episode + 1}/{n_episodes}: {frames} frames, {updates} updates, "
                f"epsilon {epsilon:.3f}, steps {state.step_count}"
            )

    log = TrainingLog(
        episodes=pd.DataFrame(rows, columns=TRAINING_LOG_COLUMNS),
        trace=pd.DataFrame(trace, columns=EPISODE_TRACE_COLUMNS),
    )
    return params, log


def deploy(
    params: QNetworkParams,
    md: MetaDataset,
    dataset_id: int,
    budget: int,
    static: Optional[np.ndarray] = None,
    seed: int = 0,
    split_id: int = 0,
) -> TrialRecord:
    """Greedy rollout of ``budget`` distinct configurations on one dataset.

    Metafeatures default to the standardization fitted on the training part of
    ``split_id``.
    """
    tuner = HypRLTuner(md, params=params, static=static, split_id=split_id if md.splits else None)
    return tuner.run(dataset_id, budget, np.random.default_rng(normalize_seed(seed)), seed, split_id)
