import argparse
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from hyprl import __version__
from hyprl.agent import train
from hyprl.errors import ConfigError, GridError, HypRLError, MetaDatasetError, UsageError
from hyprl.evaluation import Strategy, run_benchmark
from hyprl.exporter import PARTIAL_TRIALS_CSV, emit_report, plot_report, summarize, write_training_log
from hyprl.meta import CONTROLLER_DEFAULTS, FULL_NNMETA, METAFEATURE_NAMES, SEED_ENV, SYNTH_DEFAULTS
from hyprl.metadata import (
    compute_metafeatures,
    generate_synthetic_metadataset,
    grid_from_spec,
    load_metadataset,
    save_metadataset,
)
from hyprl.neuralnet import QNetworkParams, load_checkpoint, param_count, save_checkpoint
from hyprl.schemas import MANIFEST_FILE, RunManifest, TrainConfig
from hyprl.tuners import get_tuner_cls

CHECKPOINT_FILE = "model.ckpt"


def default_seed() -> int:
    value = os.environ.get(SEED_ENV)
    if value is None or not value.strip():
        return 0
    try:
        return int(value)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {value!r}") from None


def _prepare_out(directory: Path, overwrite: bool) -> Path:
    if (directory / MANIFEST_FILE).exists() and not overwrite:
        raise UsageError(f"{directory} already holds a run, pass --overwrite to replace it")
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def _write_manifest(
    args: argparse.Namespace, directory: Path, config: Dict[str, Any], inputs: Dict[str, str]
) -> None:
    RunManifest(
        command=args.command,
        config=config,
        seed=args.seed,
        inputs=inputs,
        version=f"v{__version__}",
        timestamp=datetime.now(timezone.utc),
    ).save(directory, overwrite=True)


############
# Commands #
############


def cmd_synth(args: argparse.Namespace) -> int:
    if args.datasets < 2:
        raise UsageError("need ≥ 2 datasets for splits")
    if args.folds < 1:
        raise UsageError("--folds must be positive")
    try:
        grid = grid_from_spec(args.grid)
    except GridError as e:
        raise UsageError(f"invalid --grid: {e}") from None
    out = _prepare_out(args.out, args.overwrite)

    print(
        f"\U0001f9ea Synthesizing {args.datasets} datasets x {len(grid)} configs "
        f"({grid.encoded_dim} encoded dims)",
        flush=True,
    )
    md = generate_synthetic_metadataset(
        args.datasets,
        grid,
        n_folds=args.folds,
        seed=args.seed,
        noise_std=args.noise,
        n_splits=args.splits,
    )
    save_metadataset(md, out)
    _write_manifest(
        args,
        out,
        {
            "datasets": args.datasets,
            "grid": args.grid,
            "folds": args.folds,
            "splits": args.splits,
            "noise": args.noise,
        },
        {},
    )
    print(f"\t\U0001f4be Saved meta-dataset to {out}", flush=True)
    return 0


def read_numeric_table(path: Path) -> pd.DataFrame:
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError:
        raise MetaDatasetError(f"missing data file: {path}") from None
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise MetaDatasetError(f"{path}: {e}") from None
    for column in raw.columns:
        for i, cell in enumerate(raw[column]):
            try:
                float(cell)
            except ValueError:
                raise MetaDatasetError(
                    f"{path} line {i + 2}, column {column!r}: non-numeric cell {cell!r}"
                ) from None
    return raw.astype(float)


def cmd_featurize(args: argparse.Namespace) -> int:
    out_dir = _prepare_out(args.out.parent, args.overwrite)
    table = read_numeric_table(args.data)
    vector = compute_metafeatures(table.to_numpy())
    pd.DataFrame([vector.to_array()], columns=list(METAFEATURE_NAMES)).to_csv(
        args.out, index=False
    )
    _write_manifest(args, out_dir, {}, {"data": str(args.data)})
    print(
        f"\U0001f4d0 {int(vector.num_instances)} instances x {int(vector.num_features)} "
        f"features -> {args.out}",
        flush=True,
    )
    return 0


def _train_config(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig(
        gamma=args.gamma,
        target_update=args.target_update,
        buffer_size=args.buffer_size,
        episodes_per_dataset=args.episodes,
        budget=args.budget,
        train_every=args.train_every,
        lr=args.lr,
        batch_size=args.batch_size,
        epsilon_start=args.epsilon_start,
        epsilon_end=args.epsilon_end,
        epsilon_anneal_frames=args.anneal_frames,
        seed=args.seed,
        n_hidden=args.hidden,
        n_layer=args.layer,
        reward_shift=args.reward_shift,
        checkpoint_every=args.checkpoint_every,
    ).validate()


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _train_config(args)
    md = load_metadataset(args.metadata)
    try:
        split = md.split(args.split)
    except MetaDatasetError as e:
        raise UsageError(str(e)) from None
    out = _prepare_out(args.out, args.overwrite)

    print(
        f"\U0001f3cb Training on split {split.split_id}: {len(split.train)} datasets, "
        f"{cfg.episodes_per_dataset * len(split.train)} episodes",
        flush=True,
    )
    params, log = train(
        md, split.train, cfg, split_id=split.split_id, checkpoint_dir=out
    )
    save_checkpoint(params, out / CHECKPOINT_FILE, split.split_id)
    write_training_log(log, out)
    _write_manifest(args, out, cfg.to_dict(), {"metadata": str(args.metadata)})
    print(
        f"\t\U0001f4be {param_count(params)} parameters, {log.target_syncs} target syncs "
        f"-> {out / CHECKPOINT_FILE}",
        flush=True,
    )
    return 0


def _load_checkpoints(
    paths: Sequence[Path], split_ids: List[int], logger: logging.Logger
) -> Dict[int, QNetworkParams]:
    params: Dict[int, QNetworkParams] = {}
    for path in paths:
        if not path.exists():
            raise UsageError(f"missing checkpoint {path}")
        network, header = load_checkpoint(path)
        trained_on = header["split_id"]
        if len(split_ids) == 1 and len(paths) == 1:
            if trained_on is not None and trained_on != split_ids[0]:
                logger.warning(
                    f"{path} was trained on split {trained_on}, evaluating split {split_ids[0]}"
                )
            params[split_ids[0]] = network
        elif trained_on is None:
            raise UsageError(f"{path} does not record its training split")
        else:
            params[trained_on] = network
    return params


def cmd_evaluate(args: argparse.Namespace) -> int:
    logger = logging.getLogger(__name__)
    methods = [method.strip() for method in args.methods.split(",") if method.strip()]
    if not methods:
        raise UsageError("--methods is empty")
    for method in methods:
        get_tuner_cls(method)
    if args.seeds < 1:
        raise UsageError("--seeds must be positive")
    if "hyp-rl" in methods and not args.checkpoint:
        raise UsageError("hyp-rl needs --checkpoint")

    md = load_metadataset(args.metadata)
    if args.budget < 1 or args.budget > md.n_configs:
        raise UsageError(f"--budget must lie in [1, {md.n_configs}] (grid size), got {args.budget}")
    if args.split is None:
        split_ids = [split.split_id for split in md.splits]
    else:
        try:
            split_ids = [md.split(args.split).split_id]
        except MetaDatasetError as e:
            raise UsageError(str(e)) from None

    params = _load_checkpoints(args.checkpoint or [], split_ids, logger)
    if "hyp-rl" in methods:
        missing = sorted(set(split_ids) - set(params))
        if missing:
            raise UsageError(f"no checkpoint for split(s) {missing}")
    out = _prepare_out(args.out, args.overwrite)

    strategies = [Strategy.from_method(method, params) for method in methods]
    seeds = [args.seed + i for i in range(args.seeds)]
    print(
        f"\U0001f52c Benchmarking {', '.join(methods)} on split(s) {split_ids}, "
        f"{len(seeds)} seed(s), budget {args.budget}",
        flush=True,
    )
    report = run_benchmark(
        md,
        strategies,
        args.budget,
        seeds,
        split_ids=split_ids,
        jobs=args.jobs,
        partial_path=out / PARTIAL_TRIALS_CSV,
    )
    emit_report(report, out)
    _write_manifest(
        args,
        out,
        {"methods": methods, "budget": args.budget, "seeds": seeds, "splits": split_ids},
        {
            "metadata": str(args.metadata),
            **{f"checkpoint{i}": str(path) for i, path in enumerate(args.checkpoint or [])},
        },
    )
    for method, values in summarize(report).items():
        print(
            f"\t\U0001f4c8 {method}: ADTM {values['adtm']:.4f}, rank {values['rank']:.2f}, "
            f"{values['seconds'] * 1000:.2f} ms/trial",
            flush=True,
        )
    return 0


def cmd_plot(args: argparse.Namespace) -> int:
    written = plot_report(args.report, args.out)
    print(f"\U0001f4ca Rendered {len(written)} plot(s) to {args.out}", flush=True)
    return 0


##########
# Parser #
##########


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hyprl",
        description="Hyperparameter optimization as a learned sequential policy.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG"
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help: str) -> argparse.ArgumentParser:
        sub = subparsers.add_parser(
            name, help=help, formatter_class=argparse.ArgumentDefaultsHelpFormatter
        )
        sub.add_argument(
            "--seed", type=int, default=None, help=f"master seed (default: ${SEED_ENV} or 0)"
        )
        sub.add_argument(
            "--overwrite", action="store_true", help="replace a previous run in the output"
        )
        return sub

    synth = command("synth", "generate a synthetic meta-dataset")
    synth.add_argument("--out", type=Path, required=True)
    synth.add_argument("--datasets", type=int, default=25)
    synth.add_argument(
        "--grid",
        default=FULL_NNMETA,
        help=f"'{FULL_NNMETA}' or 'name:kind:v1,v2;...' with kind one-hot or scalar",
    )
    synth.add_argument("--folds", type=int, default=SYNTH_DEFAULTS["n_folds"])
    synth.add_argument("--splits", type=int, default=SYNTH_DEFAULTS["n_splits"])
    synth.add_argument("--noise", type=float, default=SYNTH_DEFAULTS["noise_std"])
    synth.set_defaults(handler=cmd_synth)

    featurize = command("featurize", "compute the metafeatures of a numeric CSV table")
    featurize.add_argument("--data", type=Path, required=True)
    featurize.add_argument(
        "--out",
        type=Path,
        required=True,
        help=f"metafeature CSV; {MANIFEST_FILE} goes to its directory",
    )
    featurize.set_defaults(handler=cmd_featurize)

    train_cmd = command("train", "train the tuning policy on one split")
    train_cmd.add_argument("--metadata", type=Path, required=True)
    train_cmd.add_argument("--split", type=int, default=0)
    train_cmd.add_argument("--out", type=Path, required=True)
    defaults = CONTROLLER_DEFAULTS
    train_cmd.add_argument("--gamma", type=float, default=defaults["gamma"])
    train_cmd.add_argument("--target-update", type=int, default=defaults["target_update"])
    train_cmd.add_argument("--buffer-size", type=int, default=defaults["buffer_size"])
    train_cmd.add_argument(
        "--episodes",
        type=int,
        default=defaults["episodes_per_dataset"],
        help="episodes per training dataset",
    )
    train_cmd.add_argument(
        "--budget", type=int, default=defaults["budget"], help="actions per episode"
    )
    train_cmd.add_argument("--train-every", type=int, default=defaults["train_every"])
    train_cmd.add_argument("--lr", type=float, default=defaults["lr"])
    train_cmd.add_argument("--batch-size", type=int, default=defaults["batch_size"])
    train_cmd.add_argument("--epsilon-start", type=float, default=defaults["epsilon_start"])
    train_cmd.add_argument("--epsilon-end", type=float, default=defaults["epsilon_end"])
    train_cmd.add_argument(
        "--anneal-frames",
        type=int,
        default=None,
        help="epsilon anneal length (default: a quarter of the frames left once the buffer is full)",
    )
    train_cmd.add_argument("--hidden", type=int, default=defaults["n_hidden"], help="LSTM cells")
    train_cmd.add_argument("--layer", type=int, default=defaults["n_layer"], help="ReLU units")
    train_cmd.add_argument(
        "--reward-shift", type=float, default=0.0, help="added to rewards in Bellman labels"
    )
    train_cmd.add_argument(
        "--checkpoint-every", type=int, default=0, help="episodes between checkpoints, 0 for none"
    )
    train_cmd.set_defaults(handler=cmd_train)

    evaluate = command("evaluate", "benchmark tuning methods on test datasets")
    evaluate.add_argument("--metadata", type=Path, required=True)
    evaluate.add_argument("--split", type=int, default=None, help="default: every split")
    evaluate.add_argument("--methods", default="random,i-gp,spearmint,hyp-rl")
    evaluate.add_argument(
        "--checkpoint",
        type=Path,
        nargs="+",
        default=None,
        help="trained network(s); one per split when evaluating several",
    )
    evaluate.add_argument("--budget", type=int, default=defaults["budget"], help="trials")
    evaluate.add_argument("--seeds", type=int, default=5, help="number of seeds")
    evaluate.add_argument("--jobs", type=int, default=1, help="parallel benchmark units")
    evaluate.add_argument("--out", type=Path, required=True)
    evaluate.set_defaults(handler=cmd_evaluate)

    plot = subparsers.add_parser(
        "plot",
        help="render plots from report CSVs",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    plot.add_argument("--report", type=Path, required=True)
    plot.add_argument("--out", type=Path, required=True)
    plot.set_defaults(handler=cmd_plot, seed=0)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    logging.basicConfig(
        level={0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.seed is None:
            args.seed = default_seed()
        return args.handler(args)
    except (UsageError, ConfigError) as e:
        print(f"hyprl {args.command}: error: {e}", file=sys.stderr, flush=True)
        return 2
    except (HypRLError, OSError) as e:
        print(f"hyprl {args.command}: {e}", file=sys.stderr, flush=True)
        return 1
