"""Command-line entry point: training, interval-count sweeps, inference benchmark, export.

Option precedence is CLI flag > config file (flat key=value lines) >
built-in default.  The resolved configuration is echoed into the output
directory so a run can be reproduced from it.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import time
from pathlib import Path

import numpy as np

from .checkpoint import load_model, save_checkpoint
from .data import export_shapes, gen_spirals, load_idx, standardize
from .errors import ConfigError, PwluError
from .kernel import build_fused, forward_fused, forward_reference, init_pwlu_relu
from .layers import build_mlp
from .optim import TrainSchedule
from .stats import write_alignment_csv
from .trainer import Trainer

DEFAULTS = {
    "dataset": "spirals",
    "arch": "2,32,32,2",
    "activation": "pwlu",
    "n_intervals": 16,
    "granularity": "channel",
    "realign": "on",
    "t_prime_epochs": 5,
    "half_width": 3.0,
    "epochs": 60,
    "lr": 0.1,
    "momentum": 0.9,
    "weight_decay": 0.0,
    "batch_size": 64,
    "seed": 0,
    "out": "run_out",
    "n_per_class": 600,
    "noise": 0.02,
    "n_list": "4,8,12,16,20",
    "repetitions": 500,
    "batch_elems": 1_000_000,
    "checkpoint": "",
}

_INT_FIELDS = {"n_intervals", "t_prime_epochs", "epochs", "batch_size", "seed",
               "n_per_class", "repetitions", "batch_elems"}
_FLOAT_FIELDS = {"half_width", "lr", "momentum", "weight_decay", "noise"}


@dataclasses.dataclass
class RunConfig:
    subcommand: str
    dataset: str
    arch: str
    activation: str
    n_intervals: int
    granularity: str
    realign: str
    t_prime_epochs: int
    half_width: float
    epochs: int
    lr: float
    momentum: float
    weight_decay: float
    batch_size: int
    seed: int
    out: str
    n_per_class: int
    noise: float
    n_list: str
    repetitions: int
    batch_elems: int
    checkpoint: str

    def widths(self) -> list[int]:
        try:
            widths = [int(w) for w in self.arch.split(",")]
        except ValueError:
            raise ConfigError("arch", f"not a comma-separated width list: {self.arch!r}")
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ConfigError("arch", f"need at least two positive widths, got {widths}")
        return widths

    def n_values(self) -> list[int]:
        try:
            values = [int(n) for n in self.n_list.split(",")]
        except ValueError:
            raise ConfigError("n_list", f"not a comma-separated integer list: {self.n_list!r}")
        if not values:
            raise ConfigError("n_list", "must be non-empty")
        if len(set(values)) != len(values):
            raise ConfigError("n_list", f"duplicate interval counts in {values}")
        for n in values:
            if n < 2 or n % 2 != 0:
                raise ConfigError("n_list", f"interval counts must be even and >= 2, got {n}")
        return values

    def validate(self) -> None:
        self.widths()
        if self.dataset != "spirals":
            if not self.dataset.startswith("idx:") or "," not in self.dataset[4:]:
                raise ConfigError(
                    "dataset",
                    f"must be 'spirals' or 'idx:IMAGES,LABELS', got {self.dataset!r}",
                )
        if self.activation not in ("relu", "swish", "pwlu"):
            raise ConfigError("activation", f"must be relu|swish|pwlu, got {self.activation!r}")
        if self.granularity not in ("layer", "channel"):
            raise ConfigError("granularity", f"must be layer|channel, got {self.granularity!r}")
        if self.realign not in ("on", "off"):
            raise ConfigError("realign", f"must be on|off, got {self.realign!r}")
        if self.n_intervals < 2 or self.n_intervals % 2 != 0:
            raise ConfigError("n_intervals", f"must be even and >= 2, got {self.n_intervals}")
        if self.half_width <= 0:
            raise ConfigError("half_width", f"must be positive, got {self.half_width}")
        if self.epochs < 0:
            raise ConfigError("epochs", f"must be >= 0, got {self.epochs}")
        if self.lr < 0:
            raise ConfigError("lr", f"must be >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError("batch_size", f"must be >= 1, got {self.batch_size}")
        if self.realign == "on" and self.activation == "pwlu":
            if not 1 <= self.t_prime_epochs < max(1, self.epochs):
                raise ConfigError(
                    "t_prime_epochs",
                    f"realign=on needs 1 <= t_prime_epochs < epochs "
                    f"({self.t_prime_epochs} vs {self.epochs})",
                )
        if self.subcommand == "sweep-n":
            self.n_values()


def _parse_config_file(path: str) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError("config", f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _coerce(key: str, value):
    if key in _INT_FIELDS:
        return int(value)
    if key in _FLOAT_FIELDS:
        return float(value)
    return str(value)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    merged = dict(DEFAULTS)
    if args.config:
        for key, value in _parse_config_file(args.config).items():
            if key not in DEFAULTS:
                raise ConfigError("config", f"unknown key {key!r} in {args.config}")
            merged[key] = _coerce(key, value)
    for key in DEFAULTS:
        cli_value = getattr(args, key.replace("-", "_"), None)
        if cli_value is not None:
            merged[key] = _coerce(key, cli_value)
    config = RunConfig(subcommand=args.subcommand, **merged)
    config.validate()
    return config


def _write_resolved_config(config: RunConfig, out_dir: Path) -> None:
    lines = []
    for key in sorted(DEFAULTS):
        lines.append(f"{key}={getattr(config, key)}")
    (out_dir / "config.txt").write_text("\n".join(lines) + "\n")


def _load_datasets(config: RunConfig):
    if config.dataset == "spirals":
        train = gen_spirals(config.n_per_class, config.noise, config.seed)
        test = gen_spirals(config.n_per_class, config.noise, config.seed + 100_000)
        return standardize(train, test)
    images_path, labels_path = config.dataset[4:].split(",", 1)
    full = load_idx(images_path, labels_path)
    n_train = int(full.features.shape[0] * 0.9)
    train = dataclasses.replace(full, features=full.features[:n_train],
                                labels=full.labels[:n_train])
    test = dataclasses.replace(full, features=full.features[n_train:],
                               labels=full.labels[n_train:])
    return standardize(train, test)


def run_training(config: RunConfig, out_dir: Path) -> dict:
    """Train per the config, write all artifacts, return summary values."""
    train, test = _load_datasets(config)
    widths = config.widths()
    realign_active = config.realign == "on" and config.activation == "pwlu"
    rng = np.random.default_rng(config.seed)
    model = build_mlp(
        widths, config.activation, rng,
        n_intervals=config.n_intervals, granularity=config.granularity,
        half_width=config.half_width,
        pwlu_frozen=realign_active, pwlu_collecting=realign_active,
        seed=config.seed,
    )
    iters_per_epoch = max(1, train.features.shape[0] // config.batch_size)
    schedule = TrainSchedule(
        total_iterations=config.epochs * iters_per_epoch,
        realign_iteration=config.t_prime_epochs * iters_per_epoch if realign_active else 0,
        base_lr=config.lr,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
        seed=config.seed,
    )
    trainer = Trainer(model, schedule, train.features, train.labels,
                      batch_size=config.batch_size,
                      test_features=test.features, test_labels=test.labels)
    trainer.run()

    trainer.write_metrics_csv(out_dir / "metrics.csv")
    save_checkpoint(out_dir / "checkpoint.bin", trainer)
    if trainer.pre_reports:
        write_alignment_csv(trainer.pre_reports, out_dir / "alignment_pre.csv")
        write_alignment_csv(trainer.post_reports, out_dir / "alignment_post.csv")
    final_acc = model.accuracy(test.features, test.labels)
    final_loss = trainer.metrics[-1]["train_loss"] if trainer.metrics else float("nan")
    return {"final_test_accuracy": final_acc, "final_train_loss": final_loss}


def cmd_train(config: RunConfig) -> int:
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_resolved_config(config, out_dir)
    summary = run_training(config, out_dir)
    print(f"final_test_accuracy={summary['final_test_accuracy']:.4f}")
    return 0


def cmd_sweep_n(config: RunConfig) -> int:
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_resolved_config(config, out_dir)
    rows = []
    for n in config.n_values():
        run_cfg = dataclasses.replace(config, n_intervals=n, activation="pwlu",
                                      out=str(out_dir / f"n{n}"))
        run_dir = Path(run_cfg.out)
        run_dir.mkdir(parents=True, exist_ok=True)
        try:
            summary = run_training(run_cfg, run_dir)
            rows.append((n, summary["final_test_accuracy"],
                         summary["final_train_loss"], "ok"))
        except PwluError as exc:  # record the failure, keep sweeping
            rows.append((n, float("nan"), float("nan"), f"error: {exc}"))
    table_path = out_dir / "sweep.csv"
    with open(table_path, "w") as fh:
        fh.write("n_intervals,final_test_accuracy,final_train_loss,status\n")
        for n, acc, loss, status in rows:
            fh.write(f"{n},{acc!r},{loss!r},{status}\n")
    for n, acc, loss, status in rows:
        print(f"N={n:<3d} test_accuracy={acc:.4f} status={status}")
    return 0


def _time_kernel(fn, repetitions: int):
    fn()  # warmup
    samples = np.empty(repetitions)
    for i in range(repetitions):
        start = time.perf_counter()
        fn()
        samples[i] = time.perf_counter() - start
    return samples.mean() * 1e3, samples.std() * 1e3


def cmd_bench(config: RunConfig) -> int:
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if config.checkpoint:
        model = load_model(config.checkpoint)
        pwlu_layers = model.pwlu_layers()
        if not pwlu_layers:
            raise ConfigError("checkpoint", "checkpoint has no PWLU layers to benchmark")
        params = pwlu_layers[0].units[0]
    else:
        params = init_pwlu_relu(config.n_intervals, config.half_width)
    rng = np.random.default_rng(config.seed)
    x = rng.normal(0.0, 2.0, size=config.batch_elems)
    table64 = build_fused(params)
    table32 = build_fused(params, dtype=np.float32)
    x32 = x.astype(np.float32)

    kernels = [
        ("relu", lambda: np.maximum(x, 0.0)),
        ("reference", lambda: forward_reference(x, params)),
        ("fused_f64", lambda: forward_fused(x, table64)),
        ("fused_f32", lambda: forward_fused(x32, table32)),
    ]
    rows = []
    for name, fn in kernels:
        mean_ms, std_ms = _time_kernel(fn, config.repetitions)
        rows.append((name, mean_ms, std_ms))
    with open(out_dir / "bench.csv", "w") as fh:
        fh.write("kernel,mean_ms,std_ms\n")
        for name, mean_ms, std_ms in rows:
            fh.write(f"{name},{mean_ms!r},{std_ms!r}\n")
    for name, mean_ms, std_ms in rows:
        print(f"{name:<10s} mean={mean_ms:8.3f} ms  std={std_ms:.3f} ms")
    return 0


def cmd_export(config: RunConfig) -> int:
    if not config.checkpoint:
        raise ConfigError("checkpoint", "export requires --checkpoint PATH")
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = load_model(config.checkpoint)
    export_shapes(model, out_dir / "shapes.csv", out_dir / "shapes.json")
    print(f"exported shapes to {out_dir / 'shapes.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pwlu",
        description="Train and inspect piecewise-linear-unit activation networks.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in ("train", "sweep-n", "bench", "export"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--dataset", default=None, help="spirals | idx:IMAGES,LABELS")
        p.add_argument("--arch", default=None, help="comma-separated layer widths")
        p.add_argument("--activation", default=None, choices=["relu", "swish", "pwlu"])
        p.add_argument("--n-intervals", dest="n_intervals", type=int, default=None)
        p.add_argument("--granularity", default=None, choices=["layer", "channel"])
        p.add_argument("--realign", default=None, choices=["on", "off"])
        p.add_argument("--t-prime-epochs", dest="t_prime_epochs", type=int, default=None)
        p.add_argument("--half-width", dest="half_width", type=float, default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--momentum", type=float, default=None)
        p.add_argument("--weight-decay", dest="weight_decay", type=float, default=None)
        p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--n-per-class", dest="n_per_class", type=int, default=None)
        p.add_argument("--noise", type=float, default=None)
        p.add_argument("--n-list", dest="n_list", default=None,
                       help="comma-separated interval counts for sweep-n")
        p.add_argument("--repetitions", type=int, default=None)
        p.add_argument("--batch-elems", dest="batch_elems", type=int, default=None)
        p.add_argument("--checkpoint", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        handler = {
            "train": cmd_train,
            "sweep-n": cmd_sweep_n,
            "bench": cmd_bench,
            "export": cmd_export,
        }[config.subcommand]
        return handler(config)
    except ConfigError as exc:
        print(f"error: field={exc.field} message={exc.message}", file=sys.stderr)
        return 2
    except PwluError as exc:
        print(f"error: type={type(exc).__name__} message={exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
