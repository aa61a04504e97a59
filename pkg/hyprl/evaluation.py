import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from hyprl.errors import HypRLError, UsageError
from hyprl.neuralnet import QNetworkParams
from hyprl.schemas import MetaDataset, TrialRecord
from hyprl.tuner import Tuner
from hyprl.tuners import get_tuner_cls
from hyprl.tuners.policy import HypRLTuner

TRIALS_COLUMNS = ["method", "split", "dataset_id", "seed", "t", "config_id", "loss"]
ADTM_COLUMNS = ["method", "split", "t", "value"]
RANK_COLUMNS = ["method", "split", "dataset_id", "seed", "t", "best_loss", "rank"]
TIMING_COLUMNS = ["method", "mean_seconds", "trials"]


###########
# Metrics #
###########


def normalized_distance(record: TrialRecord, md: MetaDataset, t: int) -> Optional[float]:
    """Min-max normalized regret of the best of the first t trials, None for a
    dataset whose losses are all equal."""
    losses = md.mean_losses[record.dataset_id]
    low, high = float(losses.min()), float(losses.max())
    if high <= low:
        return None
    return (record.best_so_far(t) - low) / (high - low)


def adtm_with_excluded(
    records: Sequence[TrialRecord], md: MetaDataset, t: int
) -> Tuple[float, int]:
    distances = []
    excluded = 0
    for record in records:
        distance = normalized_distance(record, md, t)
        if distance is None:
            excluded += 1
        else:
            distances.append(distance)
    if not distances:
        return float("nan"), excluded
    return float(np.mean(distances)), excluded


def adtm(records: Sequence[TrialRecord], md: MetaDataset, t: int) -> float:
    """Average distance to the minimum after t trials, over all records."""
    value, excluded = adtm_with_excluded(records, md, t)
    if excluded:
        logging.getLogger(__name__).warning(
            f"{excluded} record(s) on datasets with constant loss excluded from ADTM"
        )
    return value


def average_rank(best_so_far: Dict[str, Dict[Hashable, float]]) -> Dict[str, float]:
    """Per dataset, rank methods by best loss (1 = best, ties averaged), then
    average each method's rank over datasets."""
    methods = list(best_so_far)
    if not methods:
        return {}
    keys = list(best_so_far[methods[0]])
    for method in methods[1:]:
        if set(best_so_far[method]) != set(keys):
            raise ValueError(f"method {method!r} was not run on the same datasets")
    if not keys:
        raise ValueError("no datasets to rank on")
    ranks = np.array(
        [rankdata([best_so_far[method][key] for method in methods]) for key in keys]
    )
    return {method: float(ranks[:, j].mean()) for j, method in enumerate(methods)}


##########
# Report #
##########


def records_frame(records: Sequence[TrialRecord]) -> pd.DataFrame:
    rows = [
        (r.method, r.split_id, r.dataset_id, r.seed, trial.t, trial.config_id, trial.loss)
        for r in records
        for trial in r.trials
    ]
    return pd.DataFrame(rows, columns=TRIALS_COLUMNS)


@dataclass
class BenchmarkReport:
    budget: int
    records: List[TrialRecord] = field(default_factory=list)
    adtm: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=ADTM_COLUMNS))
    rank: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=RANK_COLUMNS))
    timing: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=TIMING_COLUMNS))
    # datasets with constant loss, left out of ADTM
    excluded: int = 0

    @property
    def methods(self) -> List[str]:
        return list(dict.fromkeys(record.method for record in self.records))

    def adtm_curve(self, method: str) -> np.ndarray:
        rows = self.adtm[self.adtm["method"] == method]
        return rows.groupby("t")["value"].mean().to_numpy()

    def rank_curve(self, method: str) -> np.ndarray:
        rows = self.rank[self.rank["method"] == method]
        return rows.groupby("t")["rank"].mean().to_numpy()


def build_report(records: Sequence[TrialRecord], md: MetaDataset, budget: int) -> BenchmarkReport:
    logger = logging.getLogger(__name__)
    records = list(records)
    report = BenchmarkReport(budget=budget, records=records)
    if not records:
        return report
    methods = report.methods
    splits = sorted({record.split_id for record in records})

    adtm_rows = []
    excluded = set()
    for method in methods:
        for split_id in splits:
            selected = [r for r in records if r.method == method and r.split_id == split_id]
            if not selected:
                continue
            for t in range(1, budget + 1):
                value, _ = adtm_with_excluded(selected, md, t)
                adtm_rows.append((method, split_id, t, value))
            excluded.update(r.dataset_id for r in selected if normalized_distance(r, md, 1) is None)
    if excluded:
        logger.warning(f"{len(excluded)} dataset(s) with constant loss excluded from ADTM")

    by_key: Dict[Tuple[int, int, int], Dict[str, TrialRecord]] = {}
    for record in records:
        by_key.setdefault((record.split_id, record.dataset_id, record.seed), {})[
            record.method
        ] = record
    rank_rows = []
    for (split_id, dataset_id, seed), per_method in sorted(by_key.items()):
        if set(per_method) != set(methods):
            raise HypRLError(
                f"dataset {dataset_id}, seed {seed}: not every method has a record"
            )
        for t in range(1, budget + 1):
            best = {method: per_method[method].best_so_far(t) for method in methods}
            ranks = rankdata([best[method] for method in methods])
            for method, rank in zip(methods, ranks):
                rank_rows.append((method, split_id, dataset_id, seed, t, best[method], float(rank)))

    timing_rows = []
    for method in methods:
        seconds = [trial.seconds for r in records if r.method == method for trial in r.trials]
        timing_rows.append((method, float(np.mean(seconds)), len(seconds)))

    report.adtm = pd.DataFrame(adtm_rows, columns=ADTM_COLUMNS)
    report.rank = pd.DataFrame(rank_rows, columns=RANK_COLUMNS)
    report.timing = pd.DataFrame(timing_rows, columns=TIMING_COLUMNS)
    report.excluded = len(excluded)
    return report


#############
# Benchmark #
#############


@dataclass(frozen=True)
class Strategy:
    """A method as it appears in a benchmark: report label, tuner method and,
    for hyp-rl, the trained network of every split."""

    name: str
    method: str
    params: Dict[int, QNetworkParams] = field(default_factory=dict, compare=False, hash=False)

    @classmethod
    def from_method(
        cls, method: str, params: Optional[Dict[int, QNetworkParams]] = None
    ) -> "Strategy":
        get_tuner_cls(method)
        return cls(name=method, method=method, params=params or {})

    def tuner(self, md: MetaDataset, split_id: int) -> Tuner:
        tuner_cls = get_tuner_cls(self.method)
        if tuner_cls is HypRLTuner:
            if split_id not in self.params:
                raise UsageError(f"{self.name} has no trained network for split {split_id}")
            return HypRLTuner(
                md, params=self.params[split_id], static=md.static_features(split_id)
            )
        return tuner_cls(md)


def run_benchmark(
    md: MetaDataset,
    methods: Sequence[Strategy],
    budget: int,
    seeds: Sequence[int],
    split_ids: Optional[Sequence[int]] = None,
    jobs: int = 1,
    partial_path: Optional[Path] = None,
) -> BenchmarkReport:
    """Run every method on every test dataset of every split, once per seed.

    Units run on up to ``jobs`` threads; records are collected in unit order so
    the report does not depend on scheduling. If a unit fails, the records that
    did complete are written to ``partial_path`` before the error propagates.
    """
    logger = logging.getLogger(__name__)
    if not md.splits:
        raise UsageError("meta-dataset has no splits")
    if budget < 1 or budget > md.n_configs:
        raise UsageError(f"budget must lie in [1, {md.n_configs}], got {budget}")
    if split_ids is None:
        split_ids = [split.split_id for split in md.splits]

    units = [
        (split_id, seed, dataset_id, strategy)
        for split_id in split_ids
        for seed in seeds
        for dataset_id in md.split(split_id).test
        for strategy in methods
    ]

    def run_unit(unit: Tuple[int, int, int, Strategy]) -> TrialRecord:
        split_id, seed, dataset_id, strategy = unit
        tuner = strategy.tuner(md, split_id)
        record = tuner.run(dataset_id, budget, Tuner.rng_for(seed, dataset_id), seed, split_id)
        record.method = strategy.name
        return record

    records: List[TrialRecord] = []
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as executor:
        futures = [executor.submit(run_unit, unit) for unit in units]
        failure: Optional[BaseException] = None
        for unit, future in zip(units, futures):
            try:
                records.append(future.result())
            except Exception as e:
                if failure is None:
                    logger.error(f"{unit[3].name} failed on dataset {unit[2]}: {repr(e)}")
                    failure = e
        if failure is not None:
            if partial_path is not None:
                Path(partial_path).parent.mkdir(parents=True, exist_ok=True)
                records_frame(records).to_csv(partial_path, index=False)
                logger.error(f"{len(records)} completed record(s) saved to {partial_path}")
            raise failure

    return build_report(records, md, budget)
