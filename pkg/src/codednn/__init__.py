"""Erasure coding over neural networks.

Given N trained networks with shared architecture and convex coding weights,
build a single coded network whose output approximates the weighted
combination of the N outputs, so that any one network's output can be
recovered from the coded output plus the other N-1. The coded parameters are
a per-coordinate average weighted by each network's diagonal Fisher
information estimated on a small probe set.
"""

from .coding import (CodedModel, coin_code, distill, merge_objective,
                     merge_objective_gradient, task_arithmetic, tune_alpha,
                     tune_penalty, vanilla_average)
from .decoding import (DecodeRequest, NdaReport, avg_nda, decode, decode_batch,
                       empirical_coding_loss, nda, nda_report)
from .fisher import (DiagonalFisher, empirical_output_divergence,
                     estimate_diag_fisher, full_empirical_fisher, kl_quadratic)
from .net import (LabeledDataset, NetworkSpec, ParamVec, ProbeSet, TrainConfig,
                  accuracy, forward, init_params, jacobian, param_count, train)
from .weights import CodingWeights

__version__ = "0.1.0"
