import logging
from pathlib import Path
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from hyprl.agent import EPISODE_TRACE_COLUMNS, TRAINING_LOG_COLUMNS, TrainingLog  # noqa: E402
from hyprl.errors import ReportError  # noqa: E402
from hyprl.evaluation import (  # noqa: E402
    ADTM_COLUMNS,
    RANK_COLUMNS,
    TIMING_COLUMNS,
    TRIALS_COLUMNS,
    BenchmarkReport,
    records_frame,
)

ADTM_CSV = "adtm.csv"
RANK_CSV = "rank.csv"
TIMING_CSV = "timing.csv"
TRIALS_CSV = "trials.csv"
PARTIAL_TRIALS_CSV = "trials.partial.csv"
TRAINING_LOG_CSV = "training_log.csv"
EPISODE_TRACE_CSV = "episode_trace.csv"

ADTM_SVG = "adtm.svg"
RANK_SVG = "rank.svg"
TRAINING_SVG = "training.svg"

TRAINING_PANELS = [
    ("steps", "episode length"),
    ("mean_q", "mean Q"),
    ("return", "return"),
    ("mean_reward", "mean reward"),
    ("mean_ei", "mean EI"),
]

# column -> type; float columns accept empty cells and "nan"
COLUMN_TYPES: Dict[str, type] = {
    "method": str,
    "terminal_reason": str,
    "split": int,
    "dataset_id": int,
    "seed": int,
    "t": int,
    "config_id": int,
    "trials": int,
    "episode": int,
    "steps": int,
    "frames": int,
    "target_syncs": int,
    "action": int,
}

STYLE = {
    "svg.hashsalt": "hyprl",
    "svg.fonttype": "none",
    "figure.figsize": (5.0, 3.5),
    "axes.grid": True,
    "grid.linestyle": "--",
    "grid.alpha": 0.7,
    "lines.linewidth": 1.2,
    "legend.fontsize": 8,
    "legend.frameon": False,
}


###########
# Writing #
###########


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False)
    except OSError as e:
        raise OSError(f"cannot write {path}: {e.strerror or e}") from e
    return path


def emit_report(report: BenchmarkReport, directory: Path) -> List[Path]:
    """CSV files first; plots are then rendered from those files only."""
    directory = Path(directory)
    written = [
        _write_csv(report.adtm[ADTM_COLUMNS], directory / ADTM_CSV),
        _write_csv(report.rank[RANK_COLUMNS], directory / RANK_CSV),
        _write_csv(report.timing[TIMING_COLUMNS], directory / TIMING_CSV),
        _write_csv(records_frame(report.records), directory / TRIALS_CSV),
    ]
    return written + plot_report(directory, directory)


def write_training_log(log: TrainingLog, directory: Path) -> List[Path]:
    directory = Path(directory)
    return [
        _write_csv(log.episodes[TRAINING_LOG_COLUMNS], directory / TRAINING_LOG_CSV),
        _write_csv(log.trace[EPISODE_TRACE_COLUMNS], directory / EPISODE_TRACE_CSV),
    ]


###########
# Reading #
###########


def read_report_csv(path: Path, columns: Sequence[str]) -> pd.DataFrame:
    """Read one report table, checking its header and every cell's type."""
    path = Path(path)
    if not path.exists():
        raise ReportError(f"missing report file {path}")
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise ReportError(f"{path}: empty file, expected columns {','.join(columns)}") from None
    except pd.errors.ParserError as e:
        raise ReportError(f"{path}: {e}") from None
    if list(raw.columns) != list(columns):
        raise ReportError(
            f"{path}: expected columns {','.join(columns)}, got {','.join(map(str, raw.columns))}"
        )

    converted = {}
    for column in columns:
        kind = COLUMN_TYPES.get(column, float)
        values = []
        for i, cell in enumerate(raw[column]):
            try:
                if kind is str:
                    values.append(cell)
                elif kind is float:
                    values.append(float(cell) if cell.strip() else float("nan"))
                else:
                    values.append(int(cell))
            except ValueError:
                # header is line 1
                raise ReportError(
                    f"{path} line {i + 2}: column {column} expects {kind.__name__}, got {cell!r}"
                ) from None
        converted[column] = pd.Series(values, dtype=object if kind is str else kind)
    return pd.DataFrame(converted, columns=list(columns))


def read_adtm(directory: Path) -> pd.DataFrame:
    return read_report_csv(Path(directory) / ADTM_CSV, ADTM_COLUMNS)


def read_rank(directory: Path) -> pd.DataFrame:
    return read_report_csv(Path(directory) / RANK_CSV, RANK_COLUMNS)


def read_timing(directory: Path) -> pd.DataFrame:
    return read_report_csv(Path(directory) / TIMING_CSV, TIMING_COLUMNS)


def read_trials(path: Path) -> pd.DataFrame:
    return read_report_csv(path, TRIALS_COLUMNS)


def read_training_log(directory: Path) -> pd.DataFrame:
    return read_report_csv(Path(directory) / TRAINING_LOG_CSV, TRAINING_LOG_COLUMNS)


############
# Plotting #
############


def _curves(frame: pd.DataFrame, value: str) -> Dict[str, pd.Series]:
    methods = dict.fromkeys(frame["method"])
    return {
        method: frame[frame["method"] == method].groupby("t")[value].mean()
        for method in methods
    }


def plot_curves(curves: Dict[str, pd.Series], ylabel: str, path: Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for method, curve in curves.items():
            ax.plot(
                curve.index.to_numpy(),
                curve.to_numpy(),
                marker="o",
                markersize=2.5,
                label=method,
                gid=f"curve-{method}",
            )
        ax.set_xlabel("trial")
        ax.set_ylabel(ylabel)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


def plot_training(log: pd.DataFrame, path: Path) -> Path:
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(TRAINING_PANELS), 1, sharex=True, figsize=(5.0, 9.0))
        episodes = log["episode"].to_numpy()
        for ax, (column, label) in zip(axes, TRAINING_PANELS):
            ax.plot(episodes, log[column].to_numpy(), linewidth=0.6, gid=f"curve-{column}")
            ax.set_ylabel(label)
        axes[-1].set_xlabel("episode")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


def plot_report(report_dir: Path, out_dir: Path) -> List[Path]:
    """Render every plot a report directory has data for."""
    logger = logging.getLogger(__name__)
    report_dir, out_dir = Path(report_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    adtm = read_adtm(report_dir)
    if adtm.empty:
        logger.warning(f"{report_dir / ADTM_CSV} has no rows, skipping the ADTM plot")
    else:
        written.append(plot_curves(_curves(adtm, "value"), "ADTM", out_dir / ADTM_SVG))

    if (report_dir / RANK_CSV).exists():
        rank = read_rank(report_dir)
        if rank.empty:
            logger.warning(f"{report_dir / RANK_CSV} has no rows, skipping the rank plot")
        else:
            written.append(
                plot_curves(_curves(rank, "rank"), "average rank", out_dir / RANK_SVG)
            )

    if (report_dir / TRAINING_LOG_CSV).exists():
        log = read_training_log(report_dir)
        if not log.empty:
            written.append(plot_training(log, out_dir / TRAINING_SVG))
    return written


def summarize(report: BenchmarkReport) -> Dict[str, Dict[str, float]]:
    """Final-trial ADTM, average rank and seconds per trial of every method."""
    summary = {}
    timing = report.timing.set_index("method")
    for method in report.methods:
        adtm_curve = report.adtm_curve(method)
        rank_curve = report.rank_curve(method)
        summary[method] = {
            "adtm": float(adtm_curve[-1]) if len(adtm_curve) else float("nan"),
            "rank": float(rank_curve[-1]) if len(rank_curve) else float("nan"),
            "seconds": float(timing.loc[method, "mean_seconds"]),
        }
    return summary
