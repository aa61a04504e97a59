from dataclasses import astuple, dataclass
from typing import Iterable

import numpy as np

from hyprl.errors import ShapeError
from hyprl.meta import N_METAFEATURES


@dataclass(frozen=True)
class MetafeatureVector:
    """Statistical description of one dataset, fields in file order."""

    num_instances: float
    log_num_instances: float
    num_features: float
    log_num_features: float
    dimensionality: float
    log_dimensionality: float
    inv_dimensionality: float
    log_inv_dimensionality: float
    kurtosis_min: float
    kurtosis_max: float
    kurtosis_mean: float
    kurtosis_std: float
    skewness_min: float
    skewness_max: float
    skewness_mean: float
    skewness_std: float

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.to_array())):
            raise ValueError(f"metafeatures must be finite: {self}")

    def to_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    @classmethod
    def from_array(cls, values: Iterable[float]) -> "MetafeatureVector":
        values = [float(v) for v in values]
        if len(values) != N_METAFEATURES:
            raise ShapeError(
                f"expected {N_METAFEATURES} metafeatures, got {len(values)}"
            )
        return cls(*values)


@dataclass(eq=False)
class MetafeatureScaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray) -> "MetafeatureScaler":
        values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        if values.shape[0] == 0:
            raise ValueError("cannot fit a scaler on an empty set of datasets")
        return cls(mean=values.mean(axis=0), std=values.std(axis=0))

    def transform(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        centered = values - self.mean
        safe_std = np.where(self.std > 0, self.std, 1.0)
        # zero-variance dimensions carry no information
        return np.where(self.std > 0, centered / safe_std, 0.0)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MetafeatureScaler):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(
            self.std, other.std
        )
