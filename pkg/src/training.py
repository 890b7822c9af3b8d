"""
Sensor-aided learning loop

A fresh module is first fitted to pass the raw FTM distance through (no
labels involved). Each epoch then runs the ranging module and the EKF over every training dataset
on a fresh tape, sums the alignment costs against the PDR tracks, takes one
full-batch gradient step on the per-step mean cost, then scores the validation datasets without a tape.
The parameters with the lowest validation cost seen so far are kept as the
best snapshot.
"""

import csv
import io
import logging
import math
from concurrent.futures import Executor, ProcessPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .alignment import TrajectoryPair, aligned_cost, aligned_pdr
from .dataset import Dataset
from .errors import ConfigurationError, DatasetError, NumericDomainError, TrainingDivergedError
from .evaluation import labeled_samples, mae
from .positioning import ApMap, EkfConfig, Point, positions_array, run_trajectory
from .ranging_nn import DEFAULT_HIDDEN, RangingModule, fit_passthrough, init_params, predict

logger = logging.getLogger(__name__)

DEFAULT_LEARNING_RATE = 0.01
DEFAULT_EPOCHS = 200
DEFAULT_SPLIT = 0.7
DEFAULT_CLIP_NORM = 10.0
MOMENTUM = 0.9
SNAPSHOT_EPOCHS = (1, 20, 100, 200)


class Optimizer(str, Enum):
    PLAIN_GD = "paper-gd"
    MOMENTUM = "momentum"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = DEFAULT_LEARNING_RATE
    epochs: int = DEFAULT_EPOCHS
    split: float = DEFAULT_SPLIT
    seed: int = 0
    clip_norm: float = DEFAULT_CLIP_NORM
    optimizer: Optimizer = Optimizer.PLAIN_GD
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    workers: int = 1
    log_every: int = 10
    warm_start: bool = True
    per_step_cost: bool = True

    def __post_init__(self):
        if not 0.0 < self.split < 1.0:
            raise ConfigurationError(f"split must be in (0, 1), got {self.split}")
        # zero is accepted so a run can be replayed without moving the parameters
        if self.learning_rate < 0 or not math.isfinite(self.learning_rate):
            raise ConfigurationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.clip_norm <= 0:
            raise ConfigurationError(f"clip_norm must be positive, got {self.clip_norm}")
        if self.workers < 1:
            raise ConfigurationError(f"workers must be >= 1, got {self.workers}")
        object.__setattr__(self, "optimizer", Optimizer(self.optimizer))


def _ordered(datasets: Sequence[Dataset]) -> list[Dataset]:
    return sorted(datasets, key=lambda d: (d.metadata.segment_id, d.metadata.kind, d.metadata.seed))


def split_datasets(datasets: Sequence[Dataset], ratio: float = DEFAULT_SPLIT,
                   seed: int = 0) -> tuple[list[Dataset], list[Dataset]]:
    """Seeded shuffle, then the first round(ratio * n) datasets train."""
    if len(datasets) < 2:
        raise DatasetError(f"Need at least 2 datasets to hold one out for validation, got {len(datasets)}")
    if not 0.0 < ratio < 1.0:
        raise ConfigurationError(f"split ratio must be in (0, 1), got {ratio}")
    ordered = _ordered(datasets)
    order = np.random.default_rng(seed).permutation(len(ordered))
    n_train = min(max(int(round(ratio * len(ordered))), 1), len(ordered) - 1)
    train = [ordered[i] for i in order[:n_train]]
    validation = [ordered[i] for i in order[n_train:]]
    return train, validation


@dataclass
class EpochCost:
    value: float
    gradients: dict[str, np.ndarray] = field(default_factory=dict)


def dataset_cost(dataset: Dataset, module: RangingModule, aps: ApMap, taped: bool,
                 center: Point | None = None, ekf: EkfConfig = EkfConfig()) -> EpochCost:
    tape = ad.Tape() if taped else None
    trajectory = run_trajectory(dataset.steps, aps, module, tape, ekf, center)
    cost = aligned_cost(TrajectoryPair(trajectory, dataset.pdr.positions))
    if not isinstance(cost, ad.Var):
        return EpochCost(value=float(cost))
    return EpochCost(value=cost.value, gradients=tape.backward(cost).params)


def _dataset_cost_job(args) -> EpochCost:
    return dataset_cost(*args)


def epoch_cost(datasets: Sequence[Dataset], module: RangingModule, aps: ApMap, taped: bool = False,
               workers: int = 1, center: Point | None = None, ekf: EkfConfig = EkfConfig(),
               pool: Executor | None = None) -> EpochCost:
    """Sum of per-dataset aligned costs, reduced in segment order.

    A caller-owned pool is reused as is; otherwise workers > 1 starts a
    pool for this call only.
    """
    ordered = _ordered(datasets)
    jobs = [(d, module, dict(aps), taped, center, ekf) for d in ordered]
    if pool is not None and len(jobs) > 1:
        parts = list(pool.map(_dataset_cost_job, jobs))
    elif workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            parts = list(pool.map(_dataset_cost_job, jobs))
    else:
        parts = [_dataset_cost_job(job) for job in jobs]

    value = 0.0
    gradients = {name: np.zeros_like(arr) for name, arr in module.params.items()} if taped else {}
    for part in parts:
        value += part.value
        for name, grad in part.gradients.items():
            gradients[name] = gradients[name] + grad
    return EpochCost(value=value, gradients=gradients)


def scale_gradients(gradients: Mapping[str, np.ndarray], factor: float) -> dict[str, np.ndarray]:
    return {name: g * factor for name, g in gradients.items()}


def gradient_norm(gradients: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in gradients.values()))


def clip_gradients(gradients: Mapping[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    norm = gradient_norm(gradients)
    if norm <= max_norm:
        return dict(gradients)
    scale = max_norm / norm
    return {name: g * scale for name, g in gradients.items()}


def apply_update(module: RangingModule, gradients: Mapping[str, np.ndarray], config: TrainConfig,
                 velocity: dict[str, np.ndarray] | None = None) -> RangingModule:
    """theta <- theta - mu * step; returns a new module and leaves the input untouched."""
    updated = module.copy()
    for name in module.param_names():
        grad = gradients.get(name)
        if grad is None:
            continue
        step = grad
        if config.optimizer is Optimizer.MOMENTUM and velocity is not None:
            step = MOMENTUM * velocity.get(name, np.zeros_like(grad)) + grad
            velocity[name] = step
        updated.params[name] = module.params[name] - config.learning_rate * step
    return updated


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_cost: float
    val_cost: float
    is_best: bool


@dataclass(frozen=True)
class HeldOutRecord:
    """Errors of the current parameters on a labeled walk that never drives the update."""
    epoch: int
    ranging_mae: float
    positioning_mae: float


@dataclass
class TrajectorySnapshot:
    epoch: int
    positions: np.ndarray
    pdr: np.ndarray | None = None


@dataclass
class TrainResult:
    best: RangingModule
    final: RangingModule
    history: list[EpochRecord]
    train_ids: list[int]
    validation_ids: list[int]
    held_out: list[HeldOutRecord] = field(default_factory=list)
    snapshots: list[TrajectorySnapshot] = field(default_factory=list)

    @property
    def best_epoch(self) -> int:
        return min(self.history, key=lambda r: (r.val_cost, r.epoch)).epoch


class HeldOutMonitor:
    """Scores every epoch's parameters on a labeled test walk."""

    def __init__(self, dataset: Dataset, aps: ApMap, center: Point | None = None, ekf: EkfConfig = EkfConfig(),
                 snapshot_epochs: Sequence[int] = SNAPSHOT_EPOCHS):
        if dataset.truth is None:
            raise DatasetError("The held-out test walk needs ground-truth positions")
        self.dataset = dataset
        self.aps = aps
        self.center = center
        self.ekf = ekf
        self.snapshot_epochs = set(snapshot_epochs)
        samples = labeled_samples(dataset, aps)
        self._inputs = np.array([s.measurement.as_input() for s in samples], dtype=float).reshape(-1, 3)
        self._d_true = np.array([s.d_true for s in samples], dtype=float)

    def score(self, epoch: int, module: RangingModule) -> tuple[HeldOutRecord, np.ndarray]:
        ranging = math.nan
        if len(self._inputs):
            d_hat, _ = predict(module, self._inputs)
            ranging = mae(np.abs(d_hat - self._d_true).tolist())
        track = positions_array(run_trajectory(self.dataset.steps, self.aps, module, None, self.ekf, self.center))
        positioning = mae(np.linalg.norm(track - self.dataset.truth, axis=1).tolist())
        return HeldOutRecord(epoch, ranging, positioning), track

    def snapshot(self, epoch: int, track: np.ndarray) -> TrajectorySnapshot:
        pdr = aligned_pdr(TrajectoryPair(track, self.dataset.pdr.positions)) if self.dataset.K >= 2 else None
        return TrajectorySnapshot(epoch, track, pdr)


def _snapshot(module: RangingModule) -> dict:
    return module.to_dict()


def warm_start(module: RangingModule, datasets: Sequence[Dataset]) -> RangingModule:
    """Passthrough fit on every raw measurement of the training datasets."""
    inputs = [m.as_input() for d in _ordered(datasets) for step in d.steps for _, m in step]
    if not inputs:
        logger.warning("No ranging inputs to warm start on; keeping the initial parameters")
        return module
    return fit_passthrough(module, np.asarray(inputs, dtype=float))


def train(datasets: Sequence[Dataset], config: TrainConfig, aps: ApMap, center: Point | None = None,
          module: RangingModule | None = None, ekf: EkfConfig = EkfConfig(),
          test: Dataset | None = None) -> TrainResult:
    """Sensor-aided training; a given module is used as is, a fresh one is warm started."""
    train_set, val_set = split_datasets(datasets, config.split, config.seed)
    if module is None:
        module = init_params(config.hidden, np.random.default_rng(config.seed))
        if config.warm_start:
            module = warm_start(module, train_set)
    module.validate()
    monitor = HeldOutMonitor(test, aps, center, ekf) if test is not None else None
    n_steps = sum(d.K for d in train_set)
    grad_scale = 1.0 / n_steps if config.per_step_cost and n_steps else 1.0
    logger.info(f"Training on {len(train_set)} datasets ({n_steps} steps), validating on {len(val_set)} "
                f"({module.n_params} parameters, {config.optimizer.value}, lr={config.learning_rate})")

    best = module.copy()
    best_val = math.inf
    velocity: dict[str, np.ndarray] = {}
    history: list[EpochRecord] = []
    held_out: list[HeldOutRecord] = []
    snapshots: list[TrajectorySnapshot] = []

    pool_context = ProcessPoolExecutor(max_workers=config.workers) if config.workers > 1 else nullcontext()
    with pool_context as pool:
        for epoch in range(1, config.epochs + 1):
            try:
                cost = epoch_cost(train_set, module, aps, taped=True, center=center, ekf=ekf, pool=pool)
            except NumericDomainError as e:
                logger.error(f"Epoch {epoch}: {e}")
                raise TrainingDivergedError(epoch, math.nan, _snapshot(module)) from e
            if not math.isfinite(cost.value) or not all(np.all(np.isfinite(g)) for g in cost.gradients.values()):
                raise TrainingDivergedError(epoch, cost.value, _snapshot(module))

            step = clip_gradients(scale_gradients(cost.gradients, grad_scale), config.clip_norm)
            module = apply_update(module, step, config, velocity)

            try:
                val_cost = epoch_cost(val_set, module, aps, taped=False, center=center, ekf=ekf, pool=pool).value
            except NumericDomainError as e:
                logger.error(f"Epoch {epoch} validation: {e}")
                raise TrainingDivergedError(epoch, math.nan, _snapshot(module)) from e
            if not math.isfinite(val_cost):
                raise TrainingDivergedError(epoch, val_cost, _snapshot(module))

            is_best = val_cost < best_val
            if is_best:
                best_val = val_cost
                best = module.copy()
            history.append(EpochRecord(epoch, cost.value, val_cost, is_best))

            message = f"Epoch {epoch}/{config.epochs}: train {cost.value:.4f}, val {val_cost:.4f}{' *' if is_best else ''}"
            if monitor is not None:
                record, track = monitor.score(epoch, module)
                held_out.append(record)
                if epoch in monitor.snapshot_epochs or epoch == config.epochs:
                    snapshots.append(monitor.snapshot(epoch, track))
                message += f", test ranging {record.ranging_mae:.3f} m, positioning {record.positioning_mae:.3f} m"
            if epoch == 1 or epoch % config.log_every == 0 or epoch == config.epochs:
                logger.info(message)
            else:
                logger.debug(message)

    return TrainResult(
        best=best,
        final=module,
        history=history,
        train_ids=[d.segment_id for d in train_set],
        validation_ids=[d.segment_id for d in val_set],
        held_out=held_out,
        snapshots=snapshots,
    )


def history_to_csv(history: Sequence[EpochRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "train_cost", "val_cost", "is_best"])
    for r in history:
        writer.writerow([r.epoch, repr(float(r.train_cost)), repr(float(r.val_cost)), int(r.is_best)])
    return buf.getvalue()


def held_out_to_csv(records: Sequence[HeldOutRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "ranging_mae", "positioning_mae"])
    for r in records:
        writer.writerow([r.epoch, repr(float(r.ranging_mae)), repr(float(r.positioning_mae))])
    return buf.getvalue()
