"""Constructing coded parameter vectors from a set of expert networks.

The main constructor is the Fisher-weighted average ("coin"): each coordinate
of the coded vector is the average of the experts' coordinates weighted by
their diagonal Fisher values plus a proximity penalty. That vector is the
unique minimizer of the strongly convex merge objective exposed here for
verification. The baselines are plain weighted averaging, task arithmetic
from a base model, and regression distillation against the ensemble output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fisher import DiagonalFisher
from .net import NetworkSpec, ParamVec, ProbeSet, TrainConfig, forward, train_regression
from .weights import CodingWeights

METHOD_COIN = "coin"
METHOD_VANILLA = "vanilla"
METHOD_TASK_ARITHMETIC = "task-arithmetic"
METHOD_DISTILL = "distill"
METHODS = (METHOD_COIN, METHOD_VANILLA, METHOD_TASK_ARITHMETIC, METHOD_DISTILL)


@dataclass
class CodedModel:
    params: ParamVec
    method: str
    hyperparams: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")


def _shared_spec(models) -> NetworkSpec:
    if not models:
        raise ValueError("need at least one model")
    spec = models[0].spec
    for m in models[1:]:
        if m.spec != spec:
            raise ValueError("all models must share one architecture")
    return spec


def _check_fishers(models, fishers, spec: NetworkSpec):
    if len(fishers) != len(models):
        raise ValueError("need one Fisher per model")
    for f in fishers:
        if f.spec != spec:
            raise ValueError("Fisher belongs to a different spec")


def coin_code(models, fishers, weights: CodingWeights, penalty: float) -> CodedModel:
    """Fisher-weighted coordinate-wise average of the expert parameters.

    theta_c[j] = sum_i w_i (F_i[j] + penalty) theta_i[j]
               / sum_i w_i (F_i[j] + penalty),   w_i the merge weights.

    penalty = 0 is allowed only when every coordinate has positive aggregate
    Fisher; a singular coordinate is an explicit error rather than a silent
    pseudo-inverse.
    """
    spec = _shared_spec(models)
    _check_fishers(models, fishers, spec)
    if weights.n != len(models):
        raise ValueError("weights must match the number of models")
    if penalty < 0:
        raise ValueError("penalty must be nonnegative")
    w = weights.merge_weights
    num = np.zeros_like(models[0].values)
    den = np.zeros_like(num)
    for i, (m, f) in enumerate(zip(models, fishers)):
        scale = w[i] * (f.values + penalty)
        num += scale * m.values
        den += scale
    if np.any(den == 0.0):
        raise ValueError(
            "zero aggregate Fisher on some coordinate; use penalty > 0"
        )
    return CodedModel(ParamVec(spec, num / den), METHOD_COIN, {"penalty": float(penalty)})


def merge_objective(theta: ParamVec, models, fishers, weights: CodingWeights, penalty: float) -> float:
    """Penalized quadratic objective whose global minimizer is coin_code.

    sum_i w_i (theta - theta_i)^T F_i (theta - theta_i)
      + penalty * sum_i w_i ||theta - theta_i||^2
    """
    spec = _shared_spec(models)
    _check_fishers(models, fishers, spec)
    if theta.spec != spec:
        raise ValueError("theta belongs to a different spec")
    w = weights.merge_weights
    total = 0.0
    for i, (m, f) in enumerate(zip(models, fishers)):
        delta = theta.values - m.values
        total += w[i] * float(np.sum((f.values + penalty) * delta * delta))
    return total


def merge_objective_gradient(theta: ParamVec, models, fishers, weights: CodingWeights, penalty: float) -> np.ndarray:
    """Analytic gradient of :func:`merge_objective` at theta."""
    spec = _shared_spec(models)
    if theta.spec != spec:
        raise ValueError("theta belongs to a different spec")
    w = weights.merge_weights
    grad = np.zeros_like(theta.values)
    for i, (m, f) in enumerate(zip(models, fishers)):
        grad += 2.0 * w[i] * (f.values + penalty) * (theta.values - m.values)
    return grad


def vanilla_average(models, weights: CodingWeights) -> CodedModel:
    """Plain weighted average of the parameter vectors."""
    spec = _shared_spec(models)
    if weights.n != len(models):
        raise ValueError("weights must match the number of models")
    acc = np.zeros_like(models[0].values)
    for beta, m in zip(weights.values, models):
        acc += beta * m.values
    return CodedModel(ParamVec(spec, acc), METHOD_VANILLA)


def task_arithmetic(base: ParamVec, models, alpha: float) -> CodedModel:
    """base + alpha * sum_i (theta_i - base), task vectors from a shared base."""
    spec = _shared_spec(models)
    if base.spec != spec:
        raise ValueError("base belongs to a different spec")
    acc = base.values.copy()
    for m in models:
        acc += alpha * (m.values - base.values)
    return CodedModel(ParamVec(spec, acc), METHOD_TASK_ARITHMETIC, {"alpha": float(alpha)})


def _grid_select(grid, build, scorer):
    """Score every grid point; return the entry with minimal score, ties to
    the smallest hyperparameter value."""
    grid = list(grid)
    if not grid:
        raise ValueError("grid must be nonempty")
    scored = []
    for value in grid:
        candidate = build(value)
        scored.append((scorer(candidate), float(value), candidate))
    best_score = min(s for s, _, _ in scored)
    _, best_value, best_model = min(
        (entry for entry in scored if entry[0] == best_score), key=lambda e: e[1]
    )
    return best_value, best_model


def _coding_loss_scorer(models, weights, probe):
    from .decoding import empirical_coding_loss

    return lambda coded: empirical_coding_loss(coded.params, models, weights, probe)


def tune_alpha(base: ParamVec, models, weights: CodingWeights, probe: ProbeSet, grid, scorer=None):
    """Pick the task-arithmetic scale from a grid.

    The default criterion is the empirical coding loss on the probe; a custom
    scorer (e.g. negated validation NDA) may be supplied instead. Ties go to
    the smallest alpha.
    """
    if scorer is None:
        scorer = _coding_loss_scorer(models, weights, probe)
    return _grid_select(grid, lambda a: task_arithmetic(base, models, a), scorer)


def tune_penalty(models, fishers, weights: CodingWeights, probe: ProbeSet, grid, scorer=None):
    """Pick the coin proximity penalty from a grid; same criterion and tie
    rule as :func:`tune_alpha`."""
    if scorer is None:
        scorer = _coding_loss_scorer(models, weights, probe)
    return _grid_select(grid, lambda lam: coin_code(models, fishers, weights, lam), scorer)


def distill(models, weights: CodingWeights, probe: ProbeSet, init: ParamVec, cfg: TrainConfig, on_epoch=None) -> CodedModel:
    """Regress a single network onto the ensemble output over the probe.

    Pseudo-labels are sum_i beta_i f_i(x_l); training is the shared
    squared-error trainer, so the result is deterministic given the seed.
    """
    spec = _shared_spec(models)
    if init.spec != spec:
        raise ValueError("init belongs to a different spec")
    if weights.n != len(models):
        raise ValueError("weights must match the number of models")
    from .decoding import ensemble_outputs

    targets = ensemble_outputs([forward(spec, m, probe.inputs) for m in models], weights)
    params = train_regression(spec, init, probe.inputs, targets, cfg, on_epoch=on_epoch)
    return CodedModel(
        params,
        METHOD_DISTILL,
        {"learning_rate": cfg.learning_rate, "epochs": cfg.epochs,
         "batch_size": cfg.batch_size, "weight_decay": cfg.weight_decay,
         "rng_seed": cfg.rng_seed},
    )
