"""Command-line harness: synthesis, corruption, training, grids, sweeps.

Every experiment writes a self-describing run directory: config.json (the
full configuration, enough to reproduce the run exactly), metrics.csv with
one row per epoch, results.json with the final evaluation, histograms.csv
with per-epoch probability histograms for hidden positives, and binary
checkpoints of the selected model.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from contextlib import contextmanager
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .data import (
    CORRUPTION_MODES,
    DatasetBundle,
    apply_corruption,
    corrupt_partial,
    corrupt_single_positive,
    load_dataset,
    load_labels,
    save_features,
    save_labels,
    split_train_val,
    synthesize_dataset,
    validate_full_labels,
)
from .evaluation import (
    label_recovery_map,
    mean_average_precision,
    unobserved_positive_histogram,
)
from .exceptions import ConfigError, DataError, NumericalError
from .kestimate import k_confidence_interval
from .model import forward
from .trainer import (
    LOSS_MODES,
    MODES_NEEDING_K,
    FitResult,
    TrainConfig,
    derive_seed,
    fit_with_validation,
    grid_search,
    make_grid,
)

# seed-stream tags for experiment-level randomness
_SEED_TEST_SPLIT, _SEED_VAL_SPLIT, _SEED_SWEEP = 11, 12, 13


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment run."""

    out_dir: str
    # file-backed dataset (full labels); leave unset to synthesize
    features: str | None = None
    labels: str | None = None
    test_features: str | None = None
    test_labels: str | None = None
    test_fraction: float = 0.2
    val_fraction: float = 0.2
    # synthetic dataset
    n_train: int = 2000
    n_val: int = 500
    n_test: int = 500
    n_features: int = 32
    n_classes: int = 10
    target_k: float = 2.0
    data_seed: int = 0
    # observation regime
    corruption: str = "single_pos"
    corruption_seed: int = 0
    split_seed: int = 0
    # training
    loss: str = "an"
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 25
    phi_lr_multiplier: float = 10.0
    epr_lambda: float = 1.0
    k: float | None = None
    gamma: float | None = None
    eps_p: float | None = None
    eps_n: float | None = None
    train_seed: int = 0
    # evaluation
    histogram_bins: int = 10
    recovery: bool = True

    def __post_init__(self):
        if not self.out_dir:
            raise ConfigError("out_dir must be set")
        if self.loss not in LOSS_MODES:
            raise ConfigError(f"unknown loss {self.loss!r}; choose from {LOSS_MODES}")
        if self.corruption not in CORRUPTION_MODES:
            raise ConfigError(
                f"unknown corruption {self.corruption!r}; choose from {CORRUPTION_MODES}"
            )
        if (self.features is None) != (self.labels is None):
            raise ConfigError("features and labels paths must be given together")
        if (self.test_features is None) != (self.test_labels is None):
            raise ConfigError("test feature and label paths must be given together")
        for path in (self.features, self.labels, self.test_features, self.test_labels):
            if path is not None and not Path(path).exists():
                raise ConfigError(f"referenced path does not exist: {path}")


def config_from_dict(payload: dict) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(**payload)


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(asdict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


@contextmanager
def _stage(name: str):
    """Attach the failing pipeline stage to raised errors."""
    try:
        yield
    except (ConfigError, DataError, NumericalError) as exc:
        raise type(exc)(f"stage {name!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# experiment pipeline
# ---------------------------------------------------------------------------

def _build_dataset(config: ExperimentConfig) -> tuple[DatasetBundle, DatasetBundle]:
    """Assemble the (train+val, test) bundles, both fully labeled."""
    if config.features is not None:
        bundle = load_dataset(config.features, config.labels)
        if bundle.full_labels is None:
            raise DataError("experiment datasets must provide full labels")
        if config.test_features is not None:
            test = load_dataset(config.test_features, config.test_labels)
            if test.full_labels is None:
                raise DataError("test dataset must provide full labels")
            return bundle, replace(test, split_tag="test")
        trainval, held = split_train_val(
            bundle, config.test_fraction, derive_seed(config.data_seed, _SEED_TEST_SPLIT)
        )
        return trainval, replace(held, split_tag="test")
    total = config.n_train + config.n_val + config.n_test
    bundle = synthesize_dataset(
        total, config.n_features, config.n_classes, config.target_k, config.data_seed
    )
    trainval, held = split_train_val(
        bundle, config.n_test / total, derive_seed(config.data_seed, _SEED_TEST_SPLIT)
    )
    return trainval, replace(held, split_tag="test")


def _train_val_split(
    config: ExperimentConfig, trainval: DatasetBundle
) -> tuple[DatasetBundle, DatasetBundle]:
    if config.features is not None:
        fraction = config.val_fraction
    else:
        fraction = config.n_val / (config.n_train + config.n_val)
    return split_train_val(
        trainval, fraction, derive_seed(config.split_seed, _SEED_VAL_SPLIT)
    )


def _resolve_k(config: ExperimentConfig, train: DatasetBundle) -> float | None:
    """EPR-style losses take k from the config or the full training labels."""
    if config.k is not None or config.loss not in MODES_NEEDING_K:
        return config.k
    if train.full_labels is None:
        raise DataError(f"loss {config.loss!r} needs k or full training labels")
    return float(train.full_labels.sum(axis=1).mean())


def _train_config(config: ExperimentConfig, k: float | None) -> TrainConfig:
    return TrainConfig(
        loss_mode=config.loss,
        learning_rate=config.learning_rate,
        batch_size=config.batch_size,
        epochs=config.epochs,
        phi_lr_multiplier=config.phi_lr_multiplier,
        epr_lambda=config.epr_lambda,
        k=k,
        gamma=config.gamma,
        eps_p=config.eps_p,
        eps_n=config.eps_n,
        seed=config.train_seed,
    )


def _histogram_hook(config: ExperimentConfig, train: DatasetBundle, rows: list):
    """Per-epoch histogram of training predictions at hidden positives."""
    has_hidden = train.full_labels is not None and bool(
        ((train.full_labels == 1) & (train.observed_labels == -1)).any()
    )
    if config.histogram_bins < 2 or not has_hidden:
        return None

    def hook(epoch: int, state) -> None:
        predictions = forward(state.model, train.features)
        masses, edges = unobserved_positive_histogram(
            predictions, train.full_labels, train.observed_labels, config.histogram_bins
        )
        for lo, hi, mass in zip(edges[:-1], edges[1:], masses):
            rows.append((epoch, float(lo), float(hi), float(mass)))

    return hook


def _write_metrics(path: Path, history) -> None:
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epoch", "train_loss", "val_map", "wall_ms"])
        for record in history:
            writer.writerow(
                [record.epoch, repr(record.train_loss), repr(record.val_map),
                 f"{record.wall_ms:.3f}"]
            )


def _write_histograms(path: Path, rows) -> None:
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epoch", "bin_lo", "bin_hi", "mass"])
        for epoch, lo, hi, mass in rows:
            writer.writerow([epoch, repr(lo), repr(hi), repr(mass)])


def _write_checkpoint(run_dir: Path, config: ExperimentConfig, fit: FitResult) -> None:
    checkpoint = run_dir / "checkpoint"
    checkpoint.mkdir(parents=True, exist_ok=True)
    save_features(checkpoint / "weights.bin", fit.best_model.weights)
    save_features(checkpoint / "bias.bin", fit.best_model.bias[None, :])
    meta = {
        "epoch": fit.best_epoch,
        "seed": config.train_seed,
        "loss": config.loss,
        "weights_shape": list(fit.best_model.weights.shape),
    }
    if fit.best_estimator is not None:
        save_features(checkpoint / "phi.bin", fit.best_estimator.phi)
        meta["phi_shape"] = list(fit.best_estimator.phi.shape)
    (checkpoint / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _json_ap_list(per_class_ap: np.ndarray) -> list:
    return [None if np.isnan(v) else float(v) for v in per_class_ap]


def run_experiment(config: ExperimentConfig) -> dict:
    """Corrupt, split, train with validation selection, evaluate, persist."""
    run_dir = Path(config.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(
        json.dumps(asdict(config), indent=2, sort_keys=True) + "\n"
    )

    with _stage("data"):
        trainval, test = _build_dataset(config)
        trainval = apply_corruption(trainval, config.corruption, config.corruption_seed)
        train, val = _train_val_split(config, trainval)
        k = _resolve_k(config, train)

    histogram_rows: list = []
    with _stage("train"):
        train_config = _train_config(config, k)
        hook = _histogram_hook(config, train, histogram_rows)
        fit = fit_with_validation(train, val, train_config, epoch_hook=hook)

    with _stage("eval"):
        test_report = mean_average_precision(
            forward(fit.best_model, test.features), test.full_labels
        )
        results = {
            "test_map": test_report.map,
            "per_class_ap": _json_ap_list(test_report.per_class_ap),
            "best_epoch": fit.best_epoch,
            "config_hash": config_hash(config),
        }
        if config.recovery and train.full_labels is not None:
            recovery = label_recovery_map(
                forward(fit.best_model, train.features), train.full_labels
            )
            results["recovery_map"] = recovery.map
            if fit.best_estimator is not None:
                estimator_recovery = label_recovery_map(
                    fit.best_estimator.estimates(), train.full_labels
                )
                results["recovery_map_estimator"] = estimator_recovery.map

    with _stage("persist"):
        _write_metrics(run_dir / "metrics.csv", fit.history)
        if histogram_rows:
            _write_histograms(run_dir / "histograms.csv", histogram_rows)
        _write_checkpoint(run_dir, config, fit)
        (run_dir / "results.json").write_text(
            json.dumps(results, indent=2, sort_keys=True) + "\n"
        )
    return results


# ---------------------------------------------------------------------------
# budget sweep
# ---------------------------------------------------------------------------

def labels_per_example(loss: str, n_classes: int) -> int:
    """Observed training labels one example contributes under a loss's regime."""
    if loss in ("bce", "bce_ls", "iun"):
        return n_classes
    if loss == "iu":
        return 2
    return 1


def run_budget_sweep(
    config: ExperimentConfig, fractions: list[float], losses: list[str]
) -> list[dict]:
    """Test MAP as a function of the share of training examples kept.

    For each loss and fraction, trains on a seeded subsample of the
    corrupted training set and records the label budget actually observed.
    """
    for fraction in fractions:
        if not (0.0 < fraction <= 1.0):
            raise ConfigError(f"fractions must lie in (0, 1], got {fraction}")
    for loss in losses:
        if loss not in LOSS_MODES:
            raise ConfigError(f"unknown loss {loss!r} in sweep")
    with _stage("data"):
        trainval, test = _build_dataset(config)
        trainval = apply_corruption(trainval, config.corruption, config.corruption_seed)
        train, val = _train_val_split(config, trainval)
    rows = []
    for loss in losses:
        for index, fraction in enumerate(fractions):
            n_keep = int(round(fraction * train.n_examples))
            if n_keep < 1:
                raise DataError(f"fraction {fraction} keeps no training examples")
            rng = np.random.default_rng(
                np.random.SeedSequence(derive_seed(config.data_seed, _SEED_SWEEP, index))
            )
            keep = np.sort(rng.permutation(train.n_examples)[:n_keep])
            sub_train = train.subset(keep)
            sub_config = replace(config, loss=loss)
            with _stage(f"train[{loss}@{fraction}]"):
                k = _resolve_k(sub_config, sub_train)
                fit = fit_with_validation(sub_train, val, _train_config(sub_config, k))
            test_map = mean_average_precision(
                forward(fit.best_model, test.features), test.full_labels
            ).map
            rows.append(
                {
                    "loss": loss,
                    "fraction": fraction,
                    "n_train_examples": n_keep,
                    "n_observed_labels": n_keep * labels_per_example(loss, train.n_classes),
                    "test_map": test_map,
                }
            )
    return rows


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

_CONFIG_FLAGS: dict[str, dict] = {
    "features": {"type": str},
    "labels": {"type": str},
    "test_features": {"type": str},
    "test_labels": {"type": str},
    "test_fraction": {"type": float},
    "val_fraction": {"type": float},
    "n_train": {"type": int},
    "n_val": {"type": int},
    "n_test": {"type": int},
    "n_features": {"type": int},
    "n_classes": {"type": int},
    "target_k": {"type": float},
    "data_seed": {"type": int},
    "corruption": {"type": str, "choices": CORRUPTION_MODES},
    "corruption_seed": {"type": int},
    "split_seed": {"type": int},
    "loss": {"type": str, "choices": LOSS_MODES},
    "learning_rate": {"type": float},
    "batch_size": {"type": int},
    "epochs": {"type": int},
    "phi_lr_multiplier": {"type": float},
    "epr_lambda": {"type": float},
    "k": {"type": float},
    "gamma": {"type": float},
    "eps_p": {"type": float},
    "eps_n": {"type": float},
    "train_seed": {"type": int},
    "histogram_bins": {"type": int},
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, help="JSON config file; flags override it")
    parser.add_argument("--out", dest="out_dir", type=str, help="run directory")
    for name, spec in _CONFIG_FLAGS.items():
        flag = "--" + name.replace("_", "-")
        parser.add_argument(flag, dest=name, default=None, **spec)
    parser.add_argument(
        "--recovery",
        dest="recovery",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="evaluate training-set label recovery",
    )


def _merge_config(args: argparse.Namespace) -> ExperimentConfig:
    """Precedence: command-line flag > config file > dataclass default."""
    payload: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            payload.update(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config file {path}: {exc}") from exc
    for name in list(_CONFIG_FLAGS) + ["out_dir", "recovery"]:
        value = getattr(args, name, None)
        if value is not None:
            payload[name] = value
    if "out_dir" not in payload:
        raise ConfigError("an output directory is required (--out)")
    return config_from_dict(payload)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="singlepos",
        description="Multi-label learning from single positive labels",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.add_argument("--n", type=int, default=1000)
    p_synth.add_argument("--n-features", type=int, default=32)
    p_synth.add_argument("--n-classes", type=int, default=10)
    p_synth.add_argument("--target-k", type=float, default=2.0)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.set_defaults(func=cmd_synth)

    p_corrupt = sub.add_parser("corrupt", help="corrupt a full label file")
    p_corrupt.add_argument("--labels", required=True)
    p_corrupt.add_argument("--mode", default="single_pos",
                           choices=[m for m in CORRUPTION_MODES if m != "full"])
    p_corrupt.add_argument("--seed", type=int, default=0)
    p_corrupt.add_argument("--out", required=True, help="output label CSV")
    p_corrupt.set_defaults(func=cmd_corrupt)

    p_train = sub.add_parser("train", help="run one experiment")
    _add_config_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_grid = sub.add_parser("grid", help="hyperparameter grid search")
    _add_config_flags(p_grid)
    p_grid.add_argument("--learning-rates", type=float, nargs="+", default=None)
    p_grid.add_argument("--batch-sizes", type=int, nargs="+", default=None)
    p_grid.add_argument("--epr-lambdas", type=float, nargs="+", default=None)
    p_grid.set_defaults(func=cmd_grid)

    p_kest = sub.add_parser("kest", help="estimate expected positives per example")
    p_kest.add_argument("--labels", help="full label CSV; omit to synthesize")
    p_kest.add_argument("--n", type=int, default=1000)
    p_kest.add_argument("--n-features", type=int, default=8)
    p_kest.add_argument("--n-classes", type=int, default=10)
    p_kest.add_argument("--target-k", type=float, default=2.0)
    p_kest.add_argument("--data-seed", type=int, default=0)
    p_kest.add_argument("--sample-size", type=int, required=True, help="M")
    p_kest.add_argument("--trials", type=int, default=100_000)
    p_kest.add_argument("--level", type=float, default=0.9,
                        help="0.9 reproduces 5th/95th percentile intervals")
    p_kest.add_argument("--seed", type=int, default=0)
    p_kest.add_argument("--out", help="optional JSON output path")
    p_kest.set_defaults(func=cmd_kest)

    p_sweep = sub.add_parser("sweep", help="label-budget sweep over training fractions")
    _add_config_flags(p_sweep)
    p_sweep.add_argument("--fractions", type=float, nargs="+", required=True)
    p_sweep.add_argument("--losses", type=str, nargs="+", required=True)
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with _stage("synth"):
        bundle = synthesize_dataset(
            args.n, args.n_features, args.n_classes, args.target_k, args.seed
        )
        save_features(out / "features.bin", bundle.features)
        save_labels(out / "labels.csv", bundle.full_labels)
    summary = {
        "n": bundle.n_examples,
        "n_features": bundle.n_features,
        "n_classes": bundle.n_classes,
        "mean_positives": float(bundle.full_labels.sum(axis=1).mean()),
    }
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_corrupt(args) -> int:
    with _stage("corrupt"):
        full = validate_full_labels(load_labels(args.labels))
        if args.mode == "single_pos":
            observed = corrupt_single_positive(full, args.seed)
        else:
            observed = corrupt_partial(full, args.mode, args.seed)
        save_labels(args.out, observed)
    print(f"wrote {args.out}")
    return 0


def cmd_train(args) -> int:
    config = _merge_config(args)
    results = run_experiment(config)
    print(json.dumps({"out_dir": config.out_dir, "test_map": results["test_map"]},
                     sort_keys=True))
    return 0


def cmd_grid(args) -> int:
    config = _merge_config(args)
    with _stage("data"):
        trainval, test = _build_dataset(config)
        trainval = apply_corruption(trainval, config.corruption, config.corruption_seed)
        train, val = _train_val_split(config, trainval)
        k = _resolve_k(config, train)
    base = _train_config(config, k)
    grid = make_grid(
        base,
        learning_rates=args.learning_rates or [config.learning_rate],
        batch_sizes=args.batch_sizes,
        epr_lambdas=args.epr_lambdas,
    )
    with _stage("grid"):
        result = grid_search(train, val, grid)
    run_dir = Path(config.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    with (run_dir / "grid.csv").open("w", newline="") as handle:
        writer = csv.DictWriter(
            handle,
            fieldnames=["loss_mode", "learning_rate", "batch_size", "epr_lambda",
                        "best_epoch", "val_map"],
        )
        writer.writeheader()
        writer.writerows(result.rows)
    with _stage("eval"):
        test_map = mean_average_precision(
            forward(result.best_fit.best_model, test.features), test.full_labels
        ).map
    best = {
        "learning_rate": result.best_config.learning_rate,
        "batch_size": result.best_config.batch_size,
        "epr_lambda": result.best_config.epr_lambda,
        "best_epoch": result.best_fit.best_epoch,
        "test_map": test_map,
    }
    (run_dir / "grid_best.json").write_text(json.dumps(best, indent=2, sort_keys=True) + "\n")
    print(json.dumps(best, sort_keys=True))
    return 0


def cmd_kest(args) -> int:
    with _stage("kest"):
        if args.labels:
            full = validate_full_labels(load_labels(args.labels))
        else:
            full = synthesize_dataset(
                args.n, args.n_features, args.n_classes, args.target_k, args.data_seed
            ).full_labels
        estimate = k_confidence_interval(
            full, args.sample_size, trials=args.trials, level=args.level, seed=args.seed
        )
    payload = {
        "k_hat_full": estimate.k_hat,
        "M": estimate.sample_size,
        "T": estimate.trials,
        "lo": estimate.interval[0],
        "hi": estimate.interval[1],
    }
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def cmd_sweep(args) -> int:
    config = _merge_config(args)
    rows = run_budget_sweep(config, args.fractions, args.losses)
    run_dir = Path(config.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    with (run_dir / "sweep.csv").open("w", newline="") as handle:
        writer = csv.DictWriter(
            handle,
            fieldnames=["loss", "fraction", "n_train_examples", "n_observed_labels",
                        "test_map"],
        )
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {run_dir / 'sweep.csv'} ({len(rows)} rows)")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
