"""Fisher information of a network's outputs over a probe set.

The Fisher here is the output-Jacobian form E_x[J(x)^T J(x)] under a
unit-covariance Gaussian observation model, estimated as a finite average
over probe inputs. The diagonal estimate is the quantity the coder consumes;
the full matrix is a test oracle for small networks only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .net import NetworkSpec, ParamVec, ProbeSet, forward, jacobian_batch, param_count

FULL_FISHER_MAX_DIM = 2000
_CHUNK = 64


@dataclass
class DiagonalFisher:
    """Per-coordinate curvature:  (1/P) sum_l sum_k (df_k(x_l)/dtheta_j)^2."""

    spec: NetworkSpec
    values: np.ndarray  # (d,) nonnegative
    probe_size: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (param_count(self.spec),):
            raise ValueError("Fisher length does not match spec")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("Fisher entries must be finite and nonnegative")
        self.values = v
        if self.probe_size < 1:
            raise ValueError("probe_size must be >= 1")


def estimate_diag_fisher(spec: NetworkSpec, params: ParamVec, probe: ProbeSet) -> DiagonalFisher:
    """Diagonal empirical Fisher over the probe inputs.

    Accumulation is chunked over samples in a fixed order, so estimates are
    bit-for-bit reproducible.
    """
    if params.spec != spec:
        raise ValueError("params belong to a different spec")
    X = probe.inputs
    if X.shape[1] != spec.input_dim:
        raise ValueError("probe input dim does not match spec")
    total = np.zeros(param_count(spec))
    for start in range(0, X.shape[0], _CHUNK):
        J = jacobian_batch(spec, params, X[start : start + _CHUNK])
        total += np.einsum("nkd,nkd->d", J, J)
    return DiagonalFisher(spec, total / X.shape[0], X.shape[0])


def full_empirical_fisher(spec: NetworkSpec, params: ParamVec, probe: ProbeSet) -> np.ndarray:
    """Dense (d, d) empirical Fisher; guarded to small d, test use only."""
    d = param_count(spec)
    if d > FULL_FISHER_MAX_DIM:
        raise ValueError(f"full Fisher limited to d <= {FULL_FISHER_MAX_DIM}, got {d}")
    if params.spec != spec:
        raise ValueError("params belong to a different spec")
    X = probe.inputs
    total = np.zeros((d, d))
    for start in range(0, X.shape[0], _CHUNK):
        J = jacobian_batch(spec, params, X[start : start + _CHUNK])
        total += np.einsum("nkd,nke->de", J, J)
    return total / X.shape[0]


def kl_quadratic(theta: ParamVec, theta_i: ParamVec, fisher) -> float:
    """Quadratic displacement form (theta - theta_i)^T F (theta - theta_i).

    ``fisher`` is a DiagonalFisher or a dense (d, d) matrix. This is the
    un-halved form; the matching output divergence carries the 1/2.
    """
    if theta.spec != theta_i.spec:
        raise ValueError("parameter vectors belong to different specs")
    delta = theta.values - theta_i.values
    if isinstance(fisher, DiagonalFisher):
        if fisher.spec != theta.spec:
            raise ValueError("Fisher belongs to a different spec")
        return float(np.sum(fisher.values * delta * delta))
    F = np.asarray(fisher, dtype=np.float64)
    if F.shape != (delta.shape[0], delta.shape[0]):
        raise ValueError("Fisher matrix shape does not match parameter dim")
    return float(delta @ F @ delta)


def empirical_output_divergence(spec: NetworkSpec, theta: ParamVec, theta_i: ParamVec, probe: ProbeSet) -> float:
    """Mean over the probe of half the squared output gap between two models.

    Equals the empirical KL divergence between the two networks' predictive
    Gaussians (unit covariance); zero iff outputs agree on every probe point.
    """
    fa = forward(spec, theta, probe.inputs)
    fb = forward(spec, theta_i, probe.inputs)
    diff = fa - fb
    return float(0.5 * np.mean(np.sum(diff * diff, axis=1)))
