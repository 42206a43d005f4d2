"""Training protocol: fixed-size epochs of adam updates on freshly generated
batches, evaluation on a frozen held-out set after every epoch, early stop."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .model import ModelParams, PoolingMode, backward, forward, loss, predict
from .numeric import NumericError, Rng
from .optim import AdamState, adam_step, init_params
from .tasks import (INIT_STREAM, TRAIN_STREAM, Fixed, LengthSpec, TaskKind,
                    generate_batch, group_by_length, make_test_set)

log = logging.getLogger(__name__)

DEFAULT_LR_GRID = (0.0003, 0.001, 0.003, 0.01)


@dataclass(frozen=True)
class TrainConfig:
    task: TaskKind = TaskKind.ADDITION
    lengths: LengthSpec = Fixed(50)
    pooling: PoolingMode = PoolingMode.ATTENTION
    lr: float = 0.001
    batch_size: int = 100
    updates_per_epoch: int = 1000
    max_epochs: int = 100
    test_size: int = 1000
    accuracy_threshold: float = 0.04
    seed: int = 0
    D: int = 100
    # Stop once test accuracy reaches this; 1.0 means perfect accuracy.
    target_accuracy: float = 1.0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "task", TaskKind(self.task))
        object.__setattr__(self, "pooling", PoolingMode(self.pooling))
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1 or self.updates_per_epoch < 1 or self.test_size < 1:
            raise ValueError("batch size, updates per epoch and test size must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.accuracy_threshold <= 0:
            raise ValueError("accuracy threshold must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["task"] = self.task.value
        d["pooling"] = self.pooling.value
        d["lengths"] = str(self.lengths)
        return d


@dataclass
class EpochReport:
    epoch: int
    train_loss: float
    test_accuracy: float
    wall_seconds: float


@dataclass
class RunResult:
    config: TrainConfig
    reports: list = field(default_factory=list)
    final_params: Optional[ModelParams] = None
    optimizer: Optional[AdamState] = None

    @property
    def solved_at_epoch(self) -> Optional[int]:
        for r in self.reports:
            if r.test_accuracy == 1.0:
                return r.epoch
        return None

    @property
    def final_accuracy(self) -> float:
        return self.reports[-1].test_accuracy if self.reports else float("nan")

    @property
    def total_updates(self) -> int:
        return len(self.reports) * self.config.updates_per_epoch

    def summary(self) -> dict:
        final = self.final_accuracy
        return {
            "config": self.config.to_dict(),
            "solved_at_epoch": self.solved_at_epoch,
            "final_accuracy": None if math.isnan(final) else final,
            "epochs_run": len(self.reports),
            "total_updates": self.total_updates,
        }


def evaluate(params: ModelParams, test_set, threshold: float = 0.04, workers: int = 1) -> float:
    """Fraction of instances whose prediction is strictly within ``threshold``."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if len(test_set) == 0:
        raise ValueError("empty test set")
    correct = 0
    for batch in group_by_length(test_set):
        y = predict(params, batch, workers=workers)
        correct += int(np.count_nonzero(np.abs(y - batch.targets) < threshold))
    return correct / len(test_set)


def train(config: TrainConfig, on_epoch: Optional[Callable[[EpochReport], None]] = None,
          test_set=None, resume=None) -> RunResult:
    """Run the protocol described by ``config``.

    ``resume`` is an optional ``(params, optimizer_state, epochs_done)`` triple;
    training then continues exactly where an uninterrupted run would be.
    """
    if resume is None:
        params = init_params(config.D, config.pooling, Rng(config.seed, INIT_STREAM))
        state = AdamState.fresh(params, config.lr)
        done = 0
    else:
        params, state, done = resume
        if state.t != done * config.updates_per_epoch:
            raise ValueError(f"optimizer has taken {state.t} steps, expected "
                             f"{done * config.updates_per_epoch} after {done} epochs")
    train_rng = Rng(config.seed, TRAIN_STREAM)
    if test_set is None:
        test_set = make_test_set(config.task, config.lengths, config.test_size, config.seed)
    result = RunResult(config, final_params=params, optimizer=state)

    for epoch in range(done + 1, config.max_epochs + 1):
        start = time.perf_counter()
        total = 0.0
        for u in range(config.updates_per_epoch):
            index = (epoch - 1) * config.updates_per_epoch + u
            batch = generate_batch(config.task, config.lengths, config.batch_size, train_rng, index)
            cache = forward(params, batch, workers=config.workers)
            value = loss(cache, batch.targets)
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {epoch}, update {u}, lr {config.lr}")
            total += value
            grads = backward(params, batch, cache, workers=config.workers)
            params, state = adam_step(params, grads, state)
        accuracy = evaluate(params, test_set, config.accuracy_threshold, workers=config.workers)
        report = EpochReport(epoch, total / config.updates_per_epoch, accuracy,
                             time.perf_counter() - start)
        result.reports.append(report)
        result.final_params, result.optimizer = params, state
        log.info("epoch %d loss %.6g acc %.4f (%.1fs)", epoch, report.train_loss,
                 accuracy, report.wall_seconds)
        if on_epoch is not None:
            on_epoch(report)
        if accuracy >= config.target_accuracy:
            break
    return result


def _rank(result: RunResult):
    solved = result.solved_at_epoch
    final = result.final_accuracy
    return (solved is None, solved or 0, -(final if not math.isnan(final) else -1.0),
            result.config.lr)


def best_result(results: Sequence[RunResult]) -> RunResult:
    """Earliest solve wins; then higher final accuracy; then the smaller lr."""
    return min(results, key=_rank)


def lr_sweep(template: TrainConfig, lrs=DEFAULT_LR_GRID, on_epoch=None):
    """Train once per learning rate; return ``(best, all_results)``."""
    lrs = list(lrs)
    if not lrs:
        raise ValueError("learning-rate grid is empty")
    test_set = make_test_set(template.task, template.lengths, template.test_size, template.seed)
    results = []
    for lr in lrs:
        cfg = replace(template, lr=lr)
        results.append(train(cfg, on_epoch=on_epoch, test_set=test_set))
    return best_result(results), results

