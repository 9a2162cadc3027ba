"""Independent oracles shared across the test suite.

These deliberately avoid the library's analytic code paths: derivatives come
from central finite differences and the merge objective is minimized by
plain gradient descent, so agreement with the closed forms is evidence, not
tautology.
"""

import numpy as np

from codednn.net import NetworkSpec, ParamVec, forward, param_count


def fd_jacobian(spec: NetworkSpec, params: ParamVec, x, step=1e-5):
    """Central finite-difference Jacobian of the outputs w.r.t. all params."""
    d = param_count(spec)
    K = spec.output_dim
    J = np.zeros((K, d))
    base = params.values
    for j in range(d):
        up = base.copy()
        up[j] += step
        down = base.copy()
        down[j] -= step
        fu = forward(spec, ParamVec(spec, up), x)
        fd = forward(spec, ParamVec(spec, down), x)
        J[:, j] = (fu - fd) / (2.0 * step)
    return J


def fd_gradient(func, theta, step=1e-6):
    """Central finite-difference gradient of a scalar function of a vector."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    for j in range(theta.shape[0]):
        up = theta.copy()
        up[j] += step
        down = theta.copy()
        down[j] -= step
        grad[j] = (func(up) - func(down)) / (2.0 * step)
    return grad


def gd_minimize_quadratic(models, fishers, merge_weights, penalty, start=None,
                          max_iters=200_000, tol=1e-13):
    """Plain gradient descent on the penalized merge objective.

    The objective is sum_i w_i sum_j (F_ij + penalty)(theta_j - theta_ij)^2,
    a separable quadratic; the step size 1/L comes from the largest
    per-coordinate curvature. Independent of the closed-form solver.
    """
    thetas = np.stack([m.values for m in models])
    F = np.stack([f.values for f in fishers]) + penalty
    w = np.asarray(merge_weights, dtype=np.float64)
    curvature = 2.0 * np.einsum("i,ij->j", w, F)
    L = float(curvature.max())
    if L == 0.0:
        raise ValueError("objective is flat; nothing to minimize")
    step = 1.0 / L
    theta = np.zeros_like(thetas[0]) if start is None else np.asarray(start, float).copy()
    for _ in range(max_iters):
        grad = 2.0 * np.einsum("i,ij,ij->j", w, F, theta[None, :] - thetas)
        new = theta - step * grad
        if np.max(np.abs(new - theta)) < tol:
            theta = new
            break
        theta = new
    return theta


def relative_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)


def random_params(spec: NetworkSpec, rng, scale=0.5) -> ParamVec:
    return ParamVec(spec, scale * rng.standard_normal(param_count(spec)))
