"""Two-phase training loop: freeze-and-collect, realign, then full gradient training."""

from __future__ import annotations

import csv

import numpy as np

from .errors import NonFiniteLossError
from .layers import Model
from .optim import TrainSchedule
from .stats import AlignmentReport, realign_reset


class Trainer:
    """Single-threaded step loop over a fixed dataset.

    Batches are drawn with replacement from one seeded generator, so the
    whole trajectory is a deterministic function of (model init, schedule,
    data).  When the schedule has a realignment point, every PWLU layer is
    expected to start frozen and collecting; at that iteration the units
    are reset from their running statistics and unfrozen.
    """

    def __init__(self, model: Model, schedule: TrainSchedule,
                 train_features: np.ndarray, train_labels: np.ndarray,
                 batch_size: int = 64,
                 test_features: np.ndarray | None = None,
                 test_labels: np.ndarray | None = None):
        self.model = model
        self.schedule = schedule
        self.train_features = train_features
        self.train_labels = train_labels
        self.test_features = test_features
        self.test_labels = test_labels
        self.batch_size = batch_size
        self.iters_per_epoch = max(1, train_features.shape[0] // batch_size)
        self.rng = np.random.default_rng(schedule.seed)
        self.t = 0
        self.epoch_loss_sum = 0.0
        self.epoch_loss_count = 0
        self.metrics: list[dict] = []
        self.pre_reports: list[AlignmentReport] = []
        self.post_reports: list[AlignmentReport] = []

    def _alignment_reports(self) -> list[AlignmentReport]:
        reports = []
        for layer in self.model.pwlu_layers():
            for u, params in enumerate(layer.units):
                p05, p95 = layer.reservoirs[u].percentile_interval()
                reports.append(AlignmentReport.from_unit(layer.name, u, params, p05, p95))
        return reports

    def realign_now(self) -> None:
        """Reset every PWLU unit from its running statistics and unfreeze."""
        self.pre_reports = self._alignment_reports()
        for layer in self.model.pwlu_layers():
            for u in range(layer.n_units):
                layer.units[u] = realign_reset(layer.units[u], layer.stats[u])
            layer.frozen = False
            layer.collecting = False
        self.post_reports = self._alignment_reports()

    def step(self) -> float:
        if self.schedule.realign_iteration > 0 and self.t == self.schedule.realign_iteration:
            self.realign_now()
        idx = self.rng.integers(0, self.train_features.shape[0], self.batch_size)
        xb = self.train_features[idx]
        yb = self.train_labels[idx]
        loss, logits = self.model.loss_and_backward(xb, yb)
        if not (np.isfinite(loss) and np.all(np.isfinite(logits))):
            layer = self.model.first_nonfinite_layer(xb) or "loss"
            raise NonFiniteLossError(layer, self.t)
        self.model.step(
            self.schedule.lr_at(self.t), self.schedule.momentum, self.schedule.weight_decay
        )
        self.epoch_loss_sum += loss
        self.epoch_loss_count += 1
        self.t += 1
        if self.t % self.iters_per_epoch == 0:
            self._record_epoch()
        return loss

    def _record_epoch(self) -> None:
        row = {
            "epoch": self.t // self.iters_per_epoch,
            "iteration": self.t,
            "train_loss": self.epoch_loss_sum / max(1, self.epoch_loss_count),
            "lr": self.schedule.lr_at(self.t - 1),
        }
        if self.test_features is not None:
            row["test_accuracy"] = self.model.accuracy(self.test_features, self.test_labels)
        self.metrics.append(row)
        self.epoch_loss_sum = 0.0
        self.epoch_loss_count = 0

    def run(self) -> list[dict]:
        while self.t < self.schedule.total_iterations:
            self.step()
        return self.metrics

    def write_metrics_csv(self, path) -> None:
        fields = ["epoch", "iteration", "train_loss", "lr"]
        if self.test_features is not None:
            fields.append("test_accuracy")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(fields)
            for row in self.metrics:
                writer.writerow([repr(row[f]) if isinstance(row[f], float) else row[f]
                                 for f in fields])


def train_two_phase(model: Model, schedule: TrainSchedule,
                    train_features, train_labels, batch_size: int = 64,
                    test_features=None, test_labels=None):
    """Run the full schedule and return (trainer, pre_reports, post_reports)."""
    trainer = Trainer(model, schedule, train_features, train_labels,
                      batch_size=batch_size,
                      test_features=test_features, test_labels=test_labels)
    trainer.run()
    return trainer, trainer.pre_reports, trainer.post_reports
