import itertools
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats
from scipy.spatial.distance import pdist
from scipy.special import expit

from hyprl.errors import GridError, MetaDatasetError
from hyprl.meta import (
    FULL_NNMETA,
    METAFEATURE_NAMES,
    N_METAFEATURES,
    NNMETA_SCHEMA,
    SYNTH_DEFAULTS,
)
from hyprl.schemas import MetaDataset, Split
from hyprl.schemas.grid import (
    HyperparameterConfig,
    HyperparameterGrid,
    HyperparameterKind,
    HyperparameterSpec,
    RawValue,
    schema_from_tuples,
)
from hyprl.schemas.metafeatures import MetafeatureScaler, MetafeatureVector

FORMAT_VERSION = 1
LOSS_EPSILON = 1e-6

MANIFEST_TXT = "manifest.txt"
SCHEMA_CSV = "schema.csv"
GRID_CSV = "grid.csv"
METAFEATURES_CSV = "metafeatures.csv"
SCALER_CSV = "scaler.csv"
RESPONSES_CSV = "responses.csv"
SPLITS_CSV = "splits.csv"


################
# Metafeatures #
################


def compute_metafeatures(table: Any) -> MetafeatureVector:
    table = np.asarray(table, dtype=np.float64)
    if table.ndim == 1:
        table = table[:, None]
    if table.ndim != 2 or table.size == 0:
        raise MetaDatasetError("empty dataset")
    if not np.all(np.isfinite(table)):
        raise MetaDatasetError("dataset contains non-finite values")

    n_instances, n_features = table.shape
    # population moments, excess kurtosis
    with np.errstate(all="ignore"):
        skewness = stats.skew(table, axis=0, bias=True)
        kurtosis = stats.kurtosis(table, axis=0, fisher=True, bias=True)
    degenerate = np.ptp(table, axis=0) == 0
    skewness = np.where(degenerate | ~np.isfinite(skewness), 0.0, skewness)
    kurtosis = np.where(degenerate | ~np.isfinite(kurtosis), 0.0, kurtosis)

    dimensionality = n_features / n_instances
    return MetafeatureVector(
        num_instances=float(n_instances),
        log_num_instances=float(np.log(n_instances)),
        num_features=float(n_features),
        log_num_features=float(np.log(n_features)),
        dimensionality=dimensionality,
        log_dimensionality=float(np.log(dimensionality)),
        inv_dimensionality=1.0 / dimensionality,
        log_inv_dimensionality=float(np.log(1.0 / dimensionality)),
        kurtosis_min=float(kurtosis.min()),
        kurtosis_max=float(kurtosis.max()),
        kurtosis_mean=float(kurtosis.mean()),
        kurtosis_std=float(kurtosis.std()),
        skewness_min=float(skewness.min()),
        skewness_max=float(skewness.max()),
        skewness_mean=float(skewness.mean()),
        skewness_std=float(skewness.std()),
    )


def standardize_metafeatures(
    vectors: Union[Sequence[MetafeatureVector], np.ndarray], fit_ids: Iterable[int]
) -> Tuple[np.ndarray, MetafeatureScaler]:
    """Z-score every dimension with statistics of the fit datasets only.

    >>> standardized, scaler = standardize_metafeatures(vectors, {0, 1})
    >>> scaler.transform(unseen.to_array())  # test datasets reuse the scaler
    """
    values = _as_matrix(vectors)
    fit_ids = sorted(set(fit_ids))
    if not fit_ids:
        raise ValueError("fit_ids must not be empty")
    scaler = MetafeatureScaler.fit(values[fit_ids])
    return scaler.transform(values), scaler


def _as_matrix(vectors: Union[Sequence[MetafeatureVector], np.ndarray]) -> np.ndarray:
    if isinstance(vectors, np.ndarray):
        return np.atleast_2d(vectors.astype(np.float64))
    return np.array([vector.to_array() for vector in vectors], dtype=np.float64).reshape(
        -1, N_METAFEATURES
    )


########
# Grid #
########


def encode_grid(
    schema: Sequence[HyperparameterSpec],
    raw_combinations: Optional[Iterable[Union[Sequence[RawValue], Dict[str, RawValue]]]] = None,
) -> HyperparameterGrid:
    """Encode raw combinations (the full cross product by default)."""
    schema = list(schema)
    if raw_combinations is None:
        raw_combinations = itertools.product(*(spec.levels for spec in schema))

    configs: List[HyperparameterConfig] = []
    seen = set()
    for combination in raw_combinations:
        if isinstance(combination, dict):
            values = [combination[spec.name] for spec in schema]
        else:
            values = list(combination)
        if len(values) != len(schema):
            raise GridError(
                f"combination {values!r} does not match the {len(schema)} hyperparameters"
            )
        encoded: List[float] = []
        raw: Dict[str, RawValue] = {}
        for spec, value in zip(schema, values):
            value = _native(value)
            encoded.extend(spec.encode(value))
            raw[spec.name] = spec.levels[spec.index(value)]
        key = tuple(raw.values())
        if key in seen:
            raise GridError(f"duplicated configuration {raw!r}")
        seen.add(key)
        configs.append(HyperparameterConfig(len(configs), raw, tuple(encoded)))
    if not configs:
        raise GridError("grid is empty")
    return HyperparameterGrid(configs=configs, schema=schema)


def nnmeta_schema() -> List[HyperparameterSpec]:
    return schema_from_tuples(NNMETA_SCHEMA)


def parse_grid_spec(spec: str) -> List[HyperparameterSpec]:
    """Parse ``name:kind:v1,v2,...`` entries separated by semicolons."""
    if spec.strip() == FULL_NNMETA:
        return nnmeta_schema()
    schema = []
    for entry in filter(None, (part.strip() for part in spec.split(";"))):
        parts = entry.split(":")
        if len(parts) != 3 or not parts[0] or not parts[2]:
            raise GridError(f"bad grid entry {entry!r}, expected name:kind:v1,v2,...")
        name, kind, values = parts
        levels = tuple(_parse_level(value) for value in values.split(","))
        schema.append(HyperparameterSpec(name.strip(), HyperparameterKind.from_str(kind), levels))
    if not schema:
        raise GridError(f"empty grid specification {spec!r}")
    return schema


def grid_from_spec(spec: str) -> HyperparameterGrid:
    return encode_grid(parse_grid_spec(spec))


def _parse_level(value: str) -> RawValue:
    value = value.strip()
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def _native(value: Any) -> RawValue:
    if isinstance(value, np.generic):
        return value.item()
    return value


##########
# Splits #
##########


def make_splits(dataset_ids: Sequence[int], n_splits: int, seed: int) -> List[Split]:
    """Cross-dataset folds: every dataset is a test dataset in exactly one split."""
    dataset_ids = list(dataset_ids)
    if len(dataset_ids) < 2:
        raise MetaDatasetError("need ≥ 2 datasets for splits")
    n_splits = max(2, min(n_splits, len(dataset_ids)))
    rng = np.random.default_rng([normalize_seed(seed), 3])
    folds = np.array_split(rng.permutation(dataset_ids), n_splits)
    splits = []
    for split_id, fold in enumerate(folds):
        test = set(int(i) for i in fold)
        splits.append(
            Split(
                split_id=split_id,
                train=tuple(sorted(i for i in dataset_ids if i not in test)),
                test=tuple(sorted(test)),
            )
        )
    return splits


#####################
# Synthetic surface #
#####################


def generate_synthetic_metadataset(
    n_datasets: int,
    grid: HyperparameterGrid,
    n_folds: int = SYNTH_DEFAULTS["n_folds"],
    seed: int = 0,
    noise_std: float = SYNTH_DEFAULTS["noise_std"],
    n_latent: int = SYNTH_DEFAULTS["n_latent"],
    n_splits: int = SYNTH_DEFAULTS["n_splits"],
) -> MetaDataset:
    """Desk-scale stand-in for a meta-dataset of trained models.

    Each dataset draws a latent vector z; its response surface is
    ``logistic(e'A(z)e + b(z)'e + c(z))`` over encoded configurations e, and its
    metafeatures are monotone maps of an affine function of the same z, so the
    metafeatures carry information about the surface.
    """
    logger = logging.getLogger(__name__)
    if n_datasets < 2:
        raise MetaDatasetError("need ≥ 2 datasets for splits")
    if len(grid) == 0:
        raise GridError("grid is empty")
    if n_folds < 1:
        raise MetaDatasetError("need at least one fold")

    seed = normalize_seed(seed)
    width = grid.encoded_dim
    # coefficients depend on the master seed and the grid only
    coefficients = np.random.default_rng([seed, 0])
    quadratic = coefficients.normal(scale=1.0 / width, size=(n_latent + 1, width, width))
    quadratic = (quadratic + quadratic.transpose(0, 2, 1)) / 2.0
    linear = coefficients.normal(scale=1.0 / np.sqrt(width), size=(n_latent + 1, width))
    offset = coefficients.normal(scale=0.5, size=n_latent + 1)
    offset[0] -= 0.5
    projection = coefficients.normal(size=(10, n_latent)) / np.sqrt(n_latent)
    projection_offset = coefficients.normal(scale=0.1, size=10)

    encodings = grid.encodings
    metafeatures = np.empty((n_datasets, N_METAFEATURES))
    responses = np.empty((n_datasets, len(grid), n_folds))
    for dataset_id in range(n_datasets):
        z = np.random.default_rng([seed, 1, dataset_id]).normal(size=n_latent)
        zz = np.concatenate([[1.0], z])
        a = np.tensordot(zz, quadratic, axes=1)
        b = zz @ linear
        c = zz @ offset
        logits = np.einsum("np,pq,nq->n", encodings, a, encodings) + encodings @ b + c
        clean = expit(logits)
        noise = np.random.default_rng([seed, 2, dataset_id]).normal(
            scale=noise_std, size=(len(grid), n_folds)
        )
        responses[dataset_id] = np.clip(
            clean[:, None] + noise, LOSS_EPSILON, 1.0 - LOSS_EPSILON
        )
        metafeatures[dataset_id] = _latent_metafeatures(
            projection @ z + projection_offset
        ).to_array()

    md = MetaDataset(
        grid=grid,
        metafeatures=metafeatures,
        responses=responses,
        splits=make_splits(range(n_datasets), n_splits, seed),
        seed=seed,
    )
    if n_datasets >= 3:
        correlation = metafeature_response_correlation(md)
        logger.info(f"metafeature/response distance correlation {correlation:.3f}")
        if not correlation > 0:
            logger.warning(
                f"metafeatures do not track response surfaces (correlation {correlation:.3f})"
            )
    return md


def _latent_metafeatures(u: np.ndarray) -> MetafeatureVector:
    n_instances = max(2.0, float(np.rint(np.exp(6.0 + 1.2 * u[0]))))
    n_features = max(1.0, float(np.rint(np.exp(2.5 + 0.8 * u[1]))))
    dimensionality = n_features / n_instances
    kurtosis_mean = float(np.exp(0.5 * u[2]) - 1.0)
    skewness_mean = float(u[6])
    return MetafeatureVector(
        num_instances=n_instances,
        log_num_instances=float(np.log(n_instances)),
        num_features=n_features,
        log_num_features=float(np.log(n_features)),
        dimensionality=dimensionality,
        log_dimensionality=float(np.log(dimensionality)),
        inv_dimensionality=1.0 / dimensionality,
        log_inv_dimensionality=float(np.log(1.0 / dimensionality)),
        kurtosis_min=kurtosis_mean - float(np.exp(0.5 * u[4])),
        kurtosis_max=kurtosis_mean + float(np.exp(0.5 * u[5])),
        kurtosis_mean=kurtosis_mean,
        kurtosis_std=float(np.exp(0.5 * u[3])),
        skewness_min=skewness_mean - float(np.exp(0.5 * u[8])),
        skewness_max=skewness_mean + float(np.exp(0.5 * u[9])),
        skewness_mean=skewness_mean,
        skewness_std=float(np.exp(0.5 * u[7])),
    )


def metafeature_response_correlation(md: MetaDataset) -> float:
    """Rank correlation between pairwise metafeature distances and pairwise
    response surface distances."""
    standardized, _ = standardize_metafeatures(md.metafeatures, md.dataset_ids)
    correlation = stats.spearmanr(pdist(standardized), pdist(md.mean_losses))[0]
    return float(correlation)


def normalize_seed(seed: int) -> int:
    return int(seed) & 0xFFFF_FFFF_FFFF_FFFF


###########
# On disk #
###########


def save_metadataset(md: MetaDataset, directory: Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    manifest = {
        "format_version": FORMAT_VERSION,
        "n_datasets": md.n_datasets,
        "n_configs": md.n_configs,
        "n_folds": md.n_folds,
        "seed": "none" if md.seed is None else md.seed,
    }
    (directory / MANIFEST_TXT).write_text(
        "".join(f"{key}={value}\n" for key, value in manifest.items())
    )

    pd.DataFrame(
        {
            "name": [spec.name for spec in md.grid.schema],
            "kind": [spec.kind.value for spec in md.grid.schema],
            "levels": [json.dumps(list(spec.levels)) for spec in md.grid.schema],
        }
    ).to_csv(directory / SCHEMA_CSV, index=False)

    grid = pd.DataFrame({"config_id": range(md.n_configs)})
    for name in md.grid.names:
        grid[name] = [config.raw[name] for config in md.grid.configs]
    for i in range(md.grid.encoded_dim):
        grid[f"enc_{i}"] = md.grid.encodings[:, i]
    grid.to_csv(directory / GRID_CSV, index=False)

    metafeatures = pd.DataFrame(md.metafeatures, columns=list(METAFEATURE_NAMES))
    metafeatures.insert(0, "dataset_id", md.dataset_ids)
    metafeatures.to_csv(directory / METAFEATURES_CSV, index=False)

    scaler_rows = []
    for split in md.splits:
        scaler = md.scaler(split.split_id)
        for name, mean, std in zip(METAFEATURE_NAMES, scaler.mean, scaler.std):
            scaler_rows.append((split.split_id, name, mean, std))
    pd.DataFrame(scaler_rows, columns=["split_id", "dimension", "mean", "std"]).to_csv(
        directory / SCALER_CSV, index=False
    )

    dataset, config, fold = np.indices(md.responses.shape).reshape(3, -1)
    pd.DataFrame(
        {
            "dataset_id": dataset,
            "config_id": config,
            "fold": fold,
            "loss": md.responses.reshape(-1),
        }
    ).to_csv(directory / RESPONSES_CSV, index=False)

    split_rows = [
        (split.split_id, dataset_id, role)
        for split in md.splits
        for role, ids in (("train", split.train), ("test", split.test))
        for dataset_id in ids
    ]
    pd.DataFrame(split_rows, columns=["split_id", "dataset_id", "role"]).to_csv(
        directory / SPLITS_CSV, index=False
    )


def load_metadataset(directory: Path, loss_column: str = "loss") -> MetaDataset:
    """Load a meta-dataset directory, synthetic or produced by real training
    runs; losses are used as stored."""
    directory = Path(directory)
    manifest = _read_manifest(directory)
    n_datasets = manifest["n_datasets"]
    n_configs = manifest["n_configs"]
    n_folds = manifest["n_folds"]

    schema = _read_schema(directory)
    grid = _read_grid(directory, schema)
    if len(grid) != n_configs:
        raise MetaDatasetError(
            f"manifest declares {n_configs} configs, grid.csv has {len(grid)}"
        )

    metafeatures = _read_csv(directory, METAFEATURES_CSV, "missing metafeatures")
    _expect_columns(METAFEATURES_CSV, metafeatures, ["dataset_id", *METAFEATURE_NAMES])
    _expect_contiguous(METAFEATURES_CSV, "dataset", metafeatures["dataset_id"])
    if len(metafeatures) != n_datasets:
        raise MetaDatasetError(
            f"manifest declares {n_datasets} datasets, metafeatures.csv has {len(metafeatures)}"
        )

    responses = _read_responses(directory, loss_column, n_datasets, n_configs, n_folds)
    splits = _read_splits(directory, n_datasets)

    md = MetaDataset(
        grid=grid,
        metafeatures=metafeatures[list(METAFEATURE_NAMES)].to_numpy(dtype=np.float64),
        responses=responses,
        splits=splits,
        seed=manifest.get("seed"),
    )
    for split_id, scaler in _read_scalers(directory).items():
        md.set_scaler(split_id, scaler)
    return md


def _read_csv(directory: Path, name: str, missing: str, **kwargs: Any) -> pd.DataFrame:
    path = directory / name
    if not path.exists():
        raise MetaDatasetError(f"{missing}: {path}")
    return pd.read_csv(path, float_precision="round_trip", **kwargs)


def _expect_columns(name: str, frame: pd.DataFrame, columns: Sequence[str]) -> None:
    if list(frame.columns) != list(columns):
        raise MetaDatasetError(
            f"schema mismatch in {name}: expected columns {list(columns)}, "
            f"found {list(frame.columns)}"
        )


def _expect_contiguous(name: str, what: str, ids: pd.Series) -> None:
    if not np.array_equal(ids.to_numpy(), np.arange(len(ids))):
        raise MetaDatasetError(f"non-contiguous {what} ids in {name}")


def _read_manifest(directory: Path) -> Dict[str, Any]:
    path = directory / MANIFEST_TXT
    if not path.exists():
        raise MetaDatasetError(f"missing manifest: {path}")
    manifest: Dict[str, Any] = {}
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        manifest[key.strip()] = value.strip()
    try:
        version = int(manifest["format_version"])
        for key in ("n_datasets", "n_configs", "n_folds"):
            manifest[key] = int(manifest[key])
    except (KeyError, ValueError) as e:
        raise MetaDatasetError(f"malformed manifest {path}: {e!r}") from None
    if version != FORMAT_VERSION:
        raise MetaDatasetError(f"unsupported format_version {version} in {path}")
    seed = manifest.get("seed", "none")
    manifest["seed"] = None if seed in ("", "none") else int(seed)
    return manifest


def _read_schema(directory: Path) -> List[HyperparameterSpec]:
    frame = _read_csv(directory, SCHEMA_CSV, "missing schema")
    _expect_columns(SCHEMA_CSV, frame, ["name", "kind", "levels"])
    return [
        HyperparameterSpec(
            str(row.name), HyperparameterKind.from_str(row.kind), tuple(json.loads(row.levels))
        )
        for row in frame.itertuples(index=False)
    ]


def _read_grid(directory: Path, schema: List[HyperparameterSpec]) -> HyperparameterGrid:
    # one-hot levels are matched by their text so "NA", "None" or "True" stay strings
    one_hot = [spec for spec in schema if spec.kind is HyperparameterKind.ONE_HOT]
    frame = _read_csv(
        directory,
        GRID_CSV,
        "missing grid",
        dtype={spec.name: str for spec in one_hot},
        keep_default_na=False,
    )
    width = sum(spec.width for spec in schema)
    encoded_columns = [f"enc_{i}" for i in range(width)]
    _expect_columns(
        GRID_CSV, frame, ["config_id", *(spec.name for spec in schema), *encoded_columns]
    )
    _expect_contiguous(GRID_CSV, "config", frame["config_id"])
    raw_columns = []
    for spec in schema:
        cells = frame[spec.name].tolist()
        if spec.kind is HyperparameterKind.ONE_HOT:
            levels = {str(level): level for level in spec.levels}
            cells = [levels.get(cell, cell) for cell in cells]
        raw_columns.append(cells)
    try:
        grid = encode_grid(schema, zip(*raw_columns))
    except GridError as e:
        raise MetaDatasetError(f"schema mismatch in {GRID_CSV}: {e}") from None
    stored = frame[encoded_columns].to_numpy(dtype=np.float64)
    if not np.allclose(stored, grid.encodings, atol=1e-9):
        raise MetaDatasetError(f"schema mismatch in {GRID_CSV}: encodings disagree with raw values")
    return grid


def _read_responses(
    directory: Path, loss_column: str, n_datasets: int, n_configs: int, n_folds: int
) -> np.ndarray:
    frame = _read_csv(directory, RESPONSES_CSV, "missing responses")
    _expect_columns(RESPONSES_CSV, frame, ["dataset_id", "config_id", "fold", loss_column])
    index = frame[["dataset_id", "config_id", "fold"]].to_numpy(dtype=np.int64)
    shape = np.array([n_datasets, n_configs, n_folds])
    if np.any(index < 0) or np.any(index >= shape):
        raise MetaDatasetError(f"{RESPONSES_CSV} references ids outside the manifest ranges")

    counts = np.zeros(shape, dtype=np.int64)
    np.add.at(counts, tuple(index.T), 1)
    if np.any(counts > 1):
        d, c, f = np.argwhere(counts > 1)[0]
        raise MetaDatasetError(
            f"duplicated response in {RESPONSES_CSV}: dataset {d}, config {c}, fold {f}"
        )
    if np.any(counts == 0):
        d, c, f = np.argwhere(counts == 0)[0]
        raise MetaDatasetError(
            f"incomplete response table: dataset {d}, config {c}, fold {f} is missing"
        )
    responses = np.empty(shape)
    responses[tuple(index.T)] = frame[loss_column].to_numpy(dtype=np.float64)
    if not np.all(np.isfinite(responses)):
        raise MetaDatasetError(f"non-finite losses in {RESPONSES_CSV}")
    return responses


def _read_splits(directory: Path, n_datasets: int) -> List[Split]:
    frame = _read_csv(directory, SPLITS_CSV, "missing splits")
    _expect_columns(SPLITS_CSV, frame, ["split_id", "dataset_id", "role"])
    splits = []
    for split_id, rows in frame.groupby("split_id", sort=True):
        train = tuple(sorted(int(i) for i in rows.loc[rows.role == "train", "dataset_id"]))
        test = tuple(sorted(int(i) for i in rows.loc[rows.role == "test", "dataset_id"]))
        if set(rows.role) - {"train", "test"}:
            raise MetaDatasetError(f"unknown role in split {split_id}")
        if set(train) & set(test) or sorted(train + test) != list(range(n_datasets)):
            raise MetaDatasetError(f"split {split_id} does not partition the datasets")
        splits.append(Split(int(split_id), train, test))
    return splits


def _read_scalers(directory: Path) -> Dict[int, MetafeatureScaler]:
    path = directory / SCALER_CSV
    if not path.exists():
        return {}
    frame = pd.read_csv(path, float_precision="round_trip")
    _expect_columns(SCALER_CSV, frame, ["split_id", "dimension", "mean", "std"])
    scalers = {}
    for split_id, rows in frame.groupby("split_id", sort=True):
        rows = rows.set_index("dimension").reindex(list(METAFEATURE_NAMES))
        if rows.isna().any().any():
            raise MetaDatasetError(f"incomplete scaler for split {split_id}")
        scalers[int(split_id)] = MetafeatureScaler(
            mean=rows["mean"].to_numpy(dtype=np.float64),
            std=rows["std"].to_numpy(dtype=np.float64),
        )
    return scalers
