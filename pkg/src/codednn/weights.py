"""Coding weights: the convex-combination coefficients and derived scalings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SUM_TOLERANCE = 1e-12


@dataclass(frozen=True)
class CodingWeights:
    """Positive weights beta summing to one.

    ``merge_weights`` (beta_i * sum_j beta_j) scale each model's term in the
    merge objective; keeping the explicit product means the algebra stays
    correct if the sum-to-one constraint is ever relaxed. ``loss_scale``
    (mean of 1/beta_i^2) converts the coded-output residual into the total
    decode mismatch across experts.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.shape[0] < 1:
            raise ValueError("need at least one weight")
        if np.any(v <= 0):
            raise ValueError("all coding weights must be positive")
        if abs(float(v.sum()) - 1.0) > SUM_TOLERANCE:
            raise ValueError("coding weights must sum to 1")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def normalized(cls, raw) -> "CodingWeights":
        raw = np.asarray(raw, dtype=np.float64)
        return cls(raw / raw.sum())

    @classmethod
    def uniform(cls, n: int) -> "CodingWeights":
        return cls(np.full(n, 1.0 / n))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def merge_weights(self) -> np.ndarray:
        return self.values * float(self.values.sum())

    @property
    def loss_scale(self) -> float:
        return float(np.mean(1.0 / (self.values * self.values)))
