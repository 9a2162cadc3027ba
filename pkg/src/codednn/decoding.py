"""Recovering an expert's output from the coded model, and its quality metrics.

Decoding is the affine inversion of the coding combination: given the coded
output and the other experts' outputs, the missing expert's output is
(coded - sum_j beta_j f_j) / beta_i. Quality is measured by the coding loss
(scaled mean squared residual against the ensemble combination) and by the
normalized decoding accuracy, the decoded argmax accuracy as a percentage of
the expert's own accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .net import LabeledDataset, NetworkSpec, ParamVec, ProbeSet, forward, jacobian_batch
from .weights import CodingWeights


@dataclass
class DecodeRequest:
    """One decode: recover expert ``target``'s output at a single input."""

    target: int
    coded_output: np.ndarray          # (K,)
    other_outputs: dict               # {expert index != target: (K,)}
    weights: CodingWeights

    def __post_init__(self):
        n = self.weights.n
        if not 0 <= self.target < n:
            raise ValueError("target index out of range")
        expected = set(range(n)) - {self.target}
        if set(self.other_outputs) != expected:
            raise ValueError("need outputs for exactly the other n-1 experts")
        self.coded_output = np.asarray(self.coded_output, dtype=np.float64)


def decode(req: DecodeRequest) -> np.ndarray:
    """Affine recovery of the target expert's output vector."""
    betas = req.weights.values
    acc = req.coded_output.copy()
    for j, out in req.other_outputs.items():
        acc -= betas[j] * np.asarray(out, dtype=np.float64)
    return acc / betas[req.target]


def decode_batch(coded_outputs: np.ndarray, expert_outputs, target: int, weights: CodingWeights) -> np.ndarray:
    """Vectorized decode over rows; expert_outputs is a list of (n, K) arrays."""
    betas = weights.values
    acc = np.asarray(coded_outputs, dtype=np.float64).copy()
    for j, out in enumerate(expert_outputs):
        if j == target:
            continue
        acc -= betas[j] * np.asarray(out, dtype=np.float64)
    return acc / betas[target]


def ensemble_outputs(expert_outputs, weights: CodingWeights) -> np.ndarray:
    """Target combination sum_i beta_i f_i evaluated from stacked outputs."""
    betas = weights.values
    acc = betas[0] * np.asarray(expert_outputs[0], dtype=np.float64)
    for j in range(1, len(expert_outputs)):
        acc = acc + betas[j] * np.asarray(expert_outputs[j], dtype=np.float64)
    return acc


def _probe_residuals(coded: ParamVec, models, weights: CodingWeights, probe: ProbeSet) -> np.ndarray:
    spec = coded.spec
    outs = [forward(spec, m, probe.inputs) for m in models]
    target = ensemble_outputs(outs, weights)
    return forward(spec, coded, probe.inputs) - target


def empirical_coding_loss(coded: ParamVec, models, weights: CodingWeights, probe: ProbeSet) -> float:
    """Scaled coding loss (loss_scale / 2P) * sum_l ||f_c(x_l) - sum beta_i f_i(x_l)||^2."""
    resid = _probe_residuals(coded, models, weights, probe)
    return float(weights.loss_scale * 0.5 * np.mean(np.sum(resid * resid, axis=1)))


def mean_squared_residual(coded: ParamVec, models, weights: CodingWeights, probe: ProbeSet) -> float:
    """Unscaled diagnostic: mean over the probe of the squared residual norm."""
    resid = _probe_residuals(coded, models, weights, probe)
    return float(np.mean(np.sum(resid * resid, axis=1)))


def coding_loss_gradient(coded: ParamVec, models, weights: CodingWeights, probe: ProbeSet) -> np.ndarray:
    """Analytic gradient of :func:`empirical_coding_loss` w.r.t. the coded params."""
    spec = coded.spec
    resid = _probe_residuals(coded, models, weights, probe)
    P = probe.inputs.shape[0]
    grad = np.zeros_like(coded.values)
    chunk = 64
    for start in range(0, P, chunk):
        J = jacobian_batch(spec, coded, probe.inputs[start : start + chunk])
        grad += np.einsum("nkd,nk->d", J, resid[start : start + chunk])
    return weights.loss_scale * grad / P


@dataclass
class NdaReport:
    """Normalized decoding accuracy per expert plus the arithmetic mean."""

    per_network: list        # percent, one per expert
    average: float
    test_sizes: list
    denominators: list       # each expert's own test accuracy

    def rows(self, method: str, scenario: str, seed: int):
        """Long-form CSV rows: one per expert plus an 'avg' row."""
        out = []
        for i, value in enumerate(self.per_network):
            out.append([method, scenario, seed, str(i), value,
                        self.denominators[i], self.test_sizes[i]])
        out.append([method, scenario, seed, "avg", self.average, "", ""])
        return out


def nda(coded: ParamVec, experts, target: int, test_data: LabeledDataset, weights: CodingWeights) -> float:
    """Normalized decoding accuracy (percent) for one expert.

    100 * (argmax accuracy of the decoded outputs) / (argmax accuracy of the
    expert itself), both on the expert's test set. The ratio may exceed 100
    and is reported as-is; a zero-accuracy expert is an error since the
    metric is undefined.
    """
    spec = coded.spec
    X, y = test_data.inputs, test_data.labels
    if X.shape[0] == 0:
        raise ValueError("empty test set")
    outs = [forward(spec, m, X) for m in experts]
    decoded = decode_batch(forward(spec, coded, X), outs, target, weights)
    direct_correct = int(np.sum(np.argmax(outs[target], axis=1) == y))
    if direct_correct == 0:
        raise ValueError("expert has zero accuracy; normalized metric undefined")
    decoded_correct = int(np.sum(np.argmax(decoded, axis=1) == y))
    return 100.0 * decoded_correct / direct_correct


def avg_nda(values) -> float:
    values = list(values)
    if not values:
        raise ValueError("need at least one per-network value")
    return float(np.mean(values))


def nda_report(coded: ParamVec, experts, test_sets, weights: CodingWeights) -> NdaReport:
    """Evaluate every expert's decode against its own test set."""
    per = []
    denoms = []
    sizes = []
    for i, test in enumerate(test_sets):
        per.append(nda(coded, experts, i, test, weights))
        outs = forward(coded.spec, experts[i], test.inputs)
        denoms.append(float(np.mean(np.argmax(outs, axis=1) == test.labels)))
        sizes.append(len(test))
    return NdaReport(per, avg_nda(per), sizes, denoms)


def decode_agreement_rate(coded: ParamVec, experts, target: int, inputs: np.ndarray, weights: CodingWeights) -> float:
    """Fraction of inputs where the decoded argmax matches the expert's argmax."""
    spec = coded.spec
    inputs = np.asarray(inputs, dtype=np.float64)
    outs = [forward(spec, m, inputs) for m in experts]
    decoded = decode_batch(forward(spec, coded, inputs), outs, target, weights)
    return float(np.mean(np.argmax(decoded, axis=1) == np.argmax(outs[target], axis=1)))
