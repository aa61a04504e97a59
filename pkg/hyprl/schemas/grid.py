# Hyperparameter grid types. A grid is the finite action space of the tuning
# environment: every configuration carries its raw values and the fixed-width
# real encoding the policy network and the GP surrogates consume.

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np

from hyprl.errors import GridError

RawValue = Union[str, int, float]


class HyperparameterKind(Enum):
    """How a hyperparameter is encoded: categorical values expand to one
    indicator per level, numeric values become one min-max scaled entry."""

    ONE_HOT = "one-hot"
    SCALAR = "scalar"

    @classmethod
    def from_str(cls, string: str) -> "HyperparameterKind":
        normalized = string.strip().lower().replace("_", "-")
        if normalized in {"onehot", "categorical"}:
            return HyperparameterKind.ONE_HOT
        if normalized in {"numeric", "float", "int"}:
            return HyperparameterKind.SCALAR
        try:
            return HyperparameterKind(normalized)
        except ValueError:
            raise GridError(f"unknown hyperparameter kind {string!r}") from None


@dataclass(frozen=True)
class HyperparameterSpec:
    name: str
    kind: HyperparameterKind
    levels: Tuple[RawValue, ...]

    def __post_init__(self) -> None:
        if not self.levels:
            raise GridError(f"hyperparameter {self.name!r} has no levels")
        if len(set(self.levels)) != len(self.levels):
            raise GridError(f"hyperparameter {self.name!r} has duplicated levels")
        if self.kind is HyperparameterKind.SCALAR:
            for level in self.levels:
                if isinstance(level, str) or not np.isfinite(float(level)):
                    raise GridError(
                        f"scalar hyperparameter {self.name!r} has non-numeric level {level!r}"
                    )

    @property
    def width(self) -> int:
        if self.kind is HyperparameterKind.ONE_HOT:
            return len(self.levels)
        return 1

    def index(self, value: RawValue) -> int:
        for i, level in enumerate(self.levels):
            if level == value:
                return i
        raise GridError(f"unknown level {value!r} for hyperparameter {self.name!r}")

    def encode(self, value: RawValue) -> List[float]:
        i = self.index(value)
        if self.kind is HyperparameterKind.ONE_HOT:
            return [1.0 if j == i else 0.0 for j in range(len(self.levels))]
        low = min(float(v) for v in self.levels)
        high = max(float(v) for v in self.levels)
        if high == low:
            return [0.0]
        return [(float(self.levels[i]) - low) / (high - low)]


@dataclass(frozen=True)
class HyperparameterConfig:
    config_id: int
    raw: Dict[str, RawValue]
    encoded: Tuple[float, ...]

    def __hash__(self) -> int:
        return hash((self.config_id, self.encoded))


@dataclass(eq=False)
class HyperparameterGrid:
    configs: List[HyperparameterConfig]
    schema: List[HyperparameterSpec]
    encodings: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        for i, config in enumerate(self.configs):
            if config.config_id != i:
                raise GridError(
                    f"config ids must be contiguous from 0, found {config.config_id} at position {i}"
                )
        width = self.encoded_dim
        self.encodings = np.array(
            [config.encoded for config in self.configs], dtype=np.float64
        ).reshape(len(self.configs), width)

    def __len__(self) -> int:
        return len(self.configs)

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, HyperparameterGrid):
            return NotImplemented
        return self.schema == other.schema and self.configs == other.configs

    @property
    def names(self) -> List[str]:
        return [spec.name for spec in self.schema]

    @property
    def encoded_dim(self) -> int:
        return sum(spec.width for spec in self.schema)

    def encode(self, config_id: int) -> np.ndarray:
        return self.encodings[config_id]

    def find(self, raw: Dict[str, RawValue]) -> HyperparameterConfig:
        # linear scan, grids are at most a few thousand configs
        for config in self.configs:
            if all(config.raw[name] == raw.get(name) for name in self.names):
                return config
        raise GridError(f"no configuration matches {raw!r}")


def schema_from_tuples(
    entries: Sequence[Tuple[str, str, Sequence[RawValue]]]
) -> List[HyperparameterSpec]:
    return [
        HyperparameterSpec(name, HyperparameterKind.from_str(kind), tuple(levels))
        for name, kind, levels in entries
    ]
