import json
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from dateutil.parser import parse as parse_date

from hyprl.errors import ConfigError, HypRLError, MetaDatasetError
from hyprl.meta import CONTROLLER_DEFAULTS, N_METAFEATURES
from hyprl.schemas.grid import HyperparameterGrid
from hyprl.schemas.metafeatures import MetafeatureScaler, MetafeatureVector

MANIFEST_FILE = "run_manifest.json"


@dataclass(frozen=True)
class Split:
    split_id: int
    train: Tuple[int, ...]
    test: Tuple[int, ...]


@dataclass(eq=False)
class MetaDataset:
    """Complete tabular benchmark: loss of every grid configuration on every
    dataset, per cross-validation fold. Dataset ids are row indices."""

    grid: HyperparameterGrid
    metafeatures: np.ndarray  # (n_datasets, 16), raw values
    responses: np.ndarray  # (n_datasets, n_configs, n_folds)
    splits: List[Split] = field(default_factory=list)
    seed: Optional[int] = None
    mean_losses: np.ndarray = field(init=False, repr=False)
    _scalers: Dict[int, MetafeatureScaler] = field(
        default_factory=dict, init=False, repr=False
    )

    def __post_init__(self) -> None:
        self.metafeatures = np.asarray(self.metafeatures, dtype=np.float64)
        self.responses = np.asarray(self.responses, dtype=np.float64)
        if self.responses.ndim != 3:
            raise MetaDatasetError("responses must be a dataset x config x fold table")
        if self.metafeatures.ndim != 2 or self.metafeatures.shape[1] != N_METAFEATURES:
            raise MetaDatasetError(
                f"metafeatures must have {N_METAFEATURES} columns, got shape "
                f"{self.metafeatures.shape}"
            )
        if self.responses.shape[0] != self.metafeatures.shape[0]:
            raise MetaDatasetError(
                f"{self.metafeatures.shape[0]} metafeature rows for "
                f"{self.responses.shape[0]} datasets"
            )
        if self.responses.shape[1] != len(self.grid):
            raise MetaDatasetError(
                f"responses cover {self.responses.shape[1]} configs, grid has {len(self.grid)}"
            )
        if not np.all(np.isfinite(self.responses)):
            raise MetaDatasetError("responses must be finite")
        self.mean_losses = self.responses.mean(axis=2)

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, MetaDataset):
            return NotImplemented
        return (
            self.grid == other.grid
            and np.array_equal(self.metafeatures, other.metafeatures)
            and np.array_equal(self.responses, other.responses)
            and self.splits == other.splits
            and self.seed == other.seed
        )

    @property
    def n_datasets(self) -> int:
        return self.responses.shape[0]

    @property
    def n_configs(self) -> int:
        return self.responses.shape[1]

    @property
    def n_folds(self) -> int:
        return self.responses.shape[2]

    @property
    def dataset_ids(self) -> List[int]:
        return list(range(self.n_datasets))

    def has_dataset(self, dataset_id: int) -> bool:
        return 0 <= dataset_id < self.n_datasets

    def loss(self, dataset_id: int, config_id: int) -> float:
        return float(self.mean_losses[dataset_id, config_id])

    def metafeature_vector(self, dataset_id: int) -> MetafeatureVector:
        return MetafeatureVector.from_array(self.metafeatures[dataset_id])

    def split(self, split_id: int) -> Split:
        for split in self.splits:
            if split.split_id == split_id:
                return split
        raise MetaDatasetError(f"unknown split {split_id}")

    def scaler(self, split_id: int) -> MetafeatureScaler:
        if split_id not in self._scalers:
            train = list(self.split(split_id).train)
            self._scalers[split_id] = MetafeatureScaler.fit(self.metafeatures[train])
        return self._scalers[split_id]

    def set_scaler(self, split_id: int, scaler: MetafeatureScaler) -> None:
        self._scalers[split_id] = scaler

    def static_features(self, split_id: int) -> np.ndarray:
        return self.scaler(split_id).transform(self.metafeatures)


@dataclass
class Trial:
    t: int
    config_id: int
    loss: float
    # wall-clock seconds spent choosing this configuration
    seconds: float = field(default=0.0, compare=False)


@dataclass
class TrialRecord:
    method: str
    dataset_id: int
    seed: int
    trials: List[Trial] = field(default_factory=list)
    split_id: int = 0

    @property
    def config_ids(self) -> List[int]:
        return [trial.config_id for trial in self.trials]

    @property
    def losses(self) -> List[float]:
        return [trial.loss for trial in self.trials]

    def best_so_far(self, t: int) -> float:
        if t < 1 or t > len(self.trials):
            raise ValueError(f"record has {len(self.trials)} trials, asked for t={t}")
        return min(trial.loss for trial in self.trials[:t])


@dataclass
class TrainConfig:
    gamma: float = CONTROLLER_DEFAULTS["gamma"]
    target_update: int = CONTROLLER_DEFAULTS["target_update"]
    buffer_size: int = CONTROLLER_DEFAULTS["buffer_size"]
    episodes_per_dataset: int = CONTROLLER_DEFAULTS["episodes_per_dataset"]
    budget: int = CONTROLLER_DEFAULTS["budget"]
    train_every: int = CONTROLLER_DEFAULTS["train_every"]
    lr: float = CONTROLLER_DEFAULTS["lr"]
    batch_size: int = CONTROLLER_DEFAULTS["batch_size"]
    epsilon_start: float = CONTROLLER_DEFAULTS["epsilon_start"]
    epsilon_end: float = CONTROLLER_DEFAULTS["epsilon_end"]
    # None: a quarter of the frames left once the buffer is full
    epsilon_anneal_frames: Optional[int] = None
    seed: int = 0
    n_hidden: int = CONTROLLER_DEFAULTS["n_hidden"]
    n_layer: int = CONTROLLER_DEFAULTS["n_layer"]
    # added to rewards inside Bellman labels only
    reward_shift: float = 0.0
    checkpoint_every: int = 0

    def validate(self) -> "TrainConfig":
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")
        for name in (
            "target_update",
            "buffer_size",
            "budget",
            "train_every",
            "batch_size",
            "n_hidden",
            "n_layer",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.episodes_per_dataset < 0 or self.checkpoint_every < 0:
            raise ConfigError("episode counts must not be negative")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        for name in ("epsilon_start", "epsilon_end"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {getattr(self, name)}")
        if self.epsilon_anneal_frames is not None and self.epsilon_anneal_frames < 1:
            raise ConfigError("epsilon_anneal_frames must be positive")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in known})


@dataclass
class RunManifest:
    command: str
    config: Dict[str, Any]
    seed: int
    inputs: Dict[str, str]
    version: str
    timestamp: datetime

    def save(self, directory: Path, overwrite: bool = False) -> Path:
        path = directory / MANIFEST_FILE
        if path.exists() and not overwrite:
            raise HypRLError(
                f"{path} already exists, pass --overwrite to replace its run"
            )
        directory.mkdir(parents=True, exist_ok=True)
        payload = asdict(self)
        payload["timestamp"] = self.timestamp.isoformat()
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, directory: Path) -> Optional["RunManifest"]:
        path = directory / MANIFEST_FILE
        if not path.exists():
            return None
        payload = json.loads(path.read_text())
        payload["timestamp"] = parse_date(payload["timestamp"])
        return cls(**payload)
