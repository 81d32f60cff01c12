"""Training loops: the memory-type stratified gradient trainer and baselines.

The memory trainer (``mssg_train``) treats every scalar parameter as its own
estimation problem. Per iteration and per class it draws a pilot batch,
takes per-parameter sample mean/variance of the per-sample gradients, forms
the elementwise mixing pair from the previous iteration's pilot stats, and
blends the class memory with the zero-mean residual of one fresh sample:

    G_c <- p * G_c + q * (pilot_mean_c - fresh_grad_c)

The parameter update then follows the weighted sum of (G_c + pilot_mean_c)
over classes, scaled by step_size / n_classes by default (the extra 1 / C
factor folds into the step size; ``UpdateScale.WEIGHTS_ONLY`` drops it).

Baselines: single-sample steps (optionally with an iteration multiplier),
pooled mini-batches, and the memoryless one-sample-per-class stratified
direction.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import mlp
from .dataio import LabeledDataset
from .estimators import optimal_coefficients_elementwise
from .rng import spawn_rng


class UpdateScale(enum.Enum):
    """Whether the memory update carries the extra 1 / n_classes factor."""

    ALGORITHM_VERBATIM = "verbatim"
    WEIGHTS_ONLY = "weights-only"


class BaselineKind(enum.Enum):
    SGD = "sgd"
    BATCH = "batch"
    STRATIFIED = "gst"


@dataclass
class TrainConfig:
    step_size: float
    batch_size: int
    iterations: int
    weight_decay: float
    seed: int
    pilot_size: int = 8
    update_scale: UpdateScale = UpdateScale.ALGORITHM_VERBATIM
    checkpoint_every: int = 1000

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.pilot_size < 2:
            raise ValueError("pilot_size must be at least 2 (sample variance needs it)")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be at least 1")


@dataclass(frozen=True)
class AccuracyReport:
    iterations: int
    train_accuracy: float
    test_accuracy: float
    algorithm: str
    step_size: float
    weight_decay: float

    def __post_init__(self):
        for value in (self.train_accuracy, self.test_accuracy):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"accuracy {value} outside [0, 1]")


Shaped = list[tuple[np.ndarray, np.ndarray]]  # one (w, b) array pair per layer


@dataclass
class ClassMemory:
    """Per-class blended-gradient memory plus the previous pilot stats."""

    memory: list[Shaped]
    prev_mean: Optional[list[Shaped]] = None
    prev_var: Optional[list[Shaped]] = None
    fallbacks: int = 0


def accuracy(params: mlp.MlpParams, data: LabeledDataset) -> float:
    """Fraction of samples whose argmax probability hits the label.

    Ties resolve to the lowest class index.
    """
    if data.n_samples == 0:
        raise ValueError("cannot score an empty dataset")
    probs = mlp.forward_batch(params, data.features)
    predictions = np.argmax(probs, axis=1)
    return float(np.mean(predictions == data.labels))


def _zeros_like(params: mlp.MlpParams) -> Shaped:
    return [(np.zeros_like(w), np.zeros_like(b))
            for w, b in zip(params.weights, params.biases)]


def _pilot_stats(grads) -> tuple[Shaped, Shaped]:
    """Elementwise sample mean and n-1 variance of per-sample gradients."""
    means: Shaped = []
    variances: Shaped = []
    for dw, db in grads:
        means.append((dw.mean(axis=0), db.mean(axis=0)))
        variances.append((dw.var(axis=0, ddof=1), db.var(axis=0, ddof=1)))
    return means, variances


def _assert_finite(params: mlp.MlpParams, iteration: int, algorithm: str) -> None:
    if not params.all_finite():
        raise RuntimeError(f"{algorithm} produced non-finite parameters at iteration {iteration}")


def _checkpoint(reports, params, data, test_data, iteration, algorithm, config):
    reports.append(AccuracyReport(
        iterations=iteration,
        train_accuracy=accuracy(params, data),
        test_accuracy=accuracy(params, test_data),
        algorithm=algorithm,
        step_size=config.step_size,
        weight_decay=config.weight_decay,
    ))


def mssg_train(params: mlp.MlpParams, data: LabeledDataset, config: TrainConfig,
               test_data: LabeledDataset,
               memory_out: Optional[ClassMemory] = None):
    """Memory-type stratified gradient descent over class-partitioned data.

    Per iteration: for every class, pilot-batch gradient stats, elementwise
    mixing pair against the previous iteration's stats (the first iteration
    uses the pure fresh residual), memory blend, then one parameter update
    from the weighted (memory + pilot mean) directions. Reports accuracy
    every ``checkpoint_every`` iterations and at the end.

    Pass a ClassMemory as `memory_out` to receive the final memory and the
    fallback count.
    """
    n_classes = data.n_classes
    if n_classes < 2:
        raise ValueError("need at least two classes")
    for c, idx in enumerate(data.class_index):
        if idx.size == 0:
            raise ValueError(f"class {c} is empty")
        if idx.size < config.pilot_size:
            raise ValueError(f"class {c} has {idx.size} samples, pilot needs "
                             f"{config.pilot_size}")
    params = params.copy()
    class_w = data.class_weights()
    mem = memory_out if memory_out is not None else ClassMemory([])
    mem.memory = [_zeros_like(params) for _ in range(n_classes)]
    mem.prev_mean = None
    mem.prev_var = None
    mem.fallbacks = 0
    scale = config.step_size / n_classes \
        if config.update_scale is UpdateScale.ALGORITHM_VERBATIM else config.step_size
    reports: list[AccuracyReport] = []

    for it in range(1, config.iterations + 1):
        direction = _zeros_like(params)
        new_means: list[Shaped] = []
        new_vars: list[Shaped] = []
        for c in range(n_classes):
            rng = spawn_rng(config.seed, it, c)
            idx = data.class_index[c]
            pilot_rows = rng.choice(idx, size=config.pilot_size, replace=False)
            pilot = mlp.per_sample_grads(params, data.features[pilot_rows],
                                         data.labels[pilot_rows], config.weight_decay)
            mean_c, var_c = _pilot_stats(pilot)
            fresh_row = int(rng.choice(idx))
            fresh = mlp.per_sample_grads(params, data.features[[fresh_row]],
                                         data.labels[[fresh_row]], config.weight_decay)
            g_c = mem.memory[c]
            for l in range(params.n_layers):
                gw, gb = g_c[l]
                mw, mb = mean_c[l]
                fw, fb = fresh[l][0][0], fresh[l][1][0]
                if mem.prev_mean is None:
                    # First iteration: no previous stats, pure fresh residual.
                    gw[...] = mw - fw
                    gb[...] = mb - fb
                else:
                    pmw, pmb = mem.prev_mean[c][l]
                    pvw, pvb = mem.prev_var[c][l]
                    vw, vb = var_c[l]
                    pw, qw, nfw = optimal_coefficients_elementwise(pmw, pvw, mw, vw)
                    pb, qb, nfb = optimal_coefficients_elementwise(pmb, pvb, mb, vb)
                    mem.fallbacks += nfw + nfb
                    gw[...] = pw * gw + qw * (mw - fw)
                    gb[...] = pb * gb + qb * (mb - fb)
                direction[l][0][...] += class_w[c] * (gw + mw)
                direction[l][1][...] += class_w[c] * (gb + mb)
            new_means.append(mean_c)
            new_vars.append(var_c)
        for l in range(params.n_layers):
            params.weights[l] -= scale * direction[l][0]
            params.biases[l] -= scale * direction[l][1]
        _assert_finite(params, it, "mssg")
        mem.prev_mean = new_means
        mem.prev_var = new_vars
        if it % config.checkpoint_every == 0 or it == config.iterations:
            _checkpoint(reports, params, data, test_data, it, "mssg", config)
    return params, reports


_BASELINE_STREAM = {BaselineKind.SGD: 11, BaselineKind.BATCH: 12, BaselineKind.STRATIFIED: 13}


def baseline_train(params: mlp.MlpParams, data: LabeledDataset, config: TrainConfig,
                   kind: BaselineKind, test_data: LabeledDataset,
                   sgd_multiplier: int = 1):
    """Single-sample, pooled-batch, or memoryless stratified training.

    SGD draws one pooled sample per step and may run ``sgd_multiplier``
    times the configured iterations (checkpoint cadence stretches with it).
    Batch draws ``batch_size`` pooled samples without replacement, except
    that batch_size == n reuses the dataset verbatim so the trajectory
    matches full-gradient descent bit for bit. The stratified baseline
    weights one fresh sample per class by the class shares.
    """
    if sgd_multiplier < 1:
        raise ValueError("sgd_multiplier must be at least 1")
    if kind is not BaselineKind.SGD:
        sgd_multiplier = 1
    params = params.copy()
    n = data.n_samples
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    class_w = data.class_weights()
    rng = spawn_rng(config.seed, _BASELINE_STREAM[kind])
    total = config.iterations * sgd_multiplier
    cadence = config.checkpoint_every * sgd_multiplier
    algorithm = kind.value if sgd_multiplier == 1 else f"{kind.value}(x{sgd_multiplier})"
    reports: list[AccuracyReport] = []
    for it in range(1, total + 1):
        if kind is BaselineKind.SGD:
            row = int(rng.integers(n))
            _, grad = mlp.loss_and_grad(params, data.features[[row]],
                                        data.labels[[row]], config.weight_decay)
        elif kind is BaselineKind.BATCH:
            if config.batch_size > n:
                raise ValueError(f"batch_size {config.batch_size} exceeds dataset size {n}")
            if config.batch_size == n:
                feats, labels = data.features, data.labels
            else:
                rows = rng.choice(n, size=config.batch_size, replace=False)
                feats, labels = data.features[rows], data.labels[rows]
            _, grad = mlp.loss_and_grad(params, feats, labels, config.weight_decay)
        else:
            rows = np.array([int(rng.choice(idx)) for idx in data.class_index])
            per = mlp.per_sample_grads(params, data.features[rows], data.labels[rows],
                                       config.weight_decay)
            grad = mlp.MlpParams(
                [np.einsum("c,cio->io", class_w, dw) for dw, _ in per],
                [np.einsum("c,co->o", class_w, db) for _, db in per],
            )
        for l in range(params.n_layers):
            params.weights[l] -= config.step_size * grad.weights[l]
            params.biases[l] -= config.step_size * grad.biases[l]
        _assert_finite(params, it, algorithm)
        if it % cadence == 0 or it == total:
            _checkpoint(reports, params, data, test_data, it, algorithm, config)
    return params, reports


@dataclass(frozen=True)
class GridCell:
    step_size: float
    weight_decay: float
    test_accuracy: float


def grid_search(train_fn: Callable[[float, float, int], mlp.MlpParams],
                step_sizes: Sequence[float], weight_decays: Sequence[float],
                budget_iterations: int, eval_data: LabeledDataset):
    """Evaluate every (step_size, weight_decay) cell and pick the best.

    `train_fn(step_size, weight_decay, iterations)` must return trained
    parameters. Ties break toward the smaller step size, then the smaller
    decay. Returns (best_cell, all_cells in grid order).
    """
    step_sizes = list(step_sizes)
    weight_decays = list(weight_decays)
    if not step_sizes or not weight_decays:
        raise ValueError("both grids must be non-empty")
    cells: list[GridCell] = []
    for h, lam in itertools.product(step_sizes, weight_decays):
        trained = train_fn(h, lam, budget_iterations)
        cells.append(GridCell(h, lam, accuracy(trained, eval_data)))
    best = min(cells, key=lambda c: (-c.test_accuracy, c.step_size, c.weight_decay))
    return best, cells
