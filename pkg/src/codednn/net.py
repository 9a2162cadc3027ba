"""Dense feed-forward networks on flat parameter vectors.

All parameters of a network live in a single float64 vector with a fixed
canonical layout (W1 row-major, b1, W2, b2, ...), so that merging, Fisher
estimation and checkpointing can treat a network as a point in R^d.
Weight matrices are stored output-major: W has shape (fan_out, fan_in) and a
layer computes a @ W.T + b.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("tanh", "relu")
LOSSES = ("cross_entropy", "squared_error")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description: layer sizes plus the hidden activation.

    ``layer_dims`` is (input_dim, hidden..., output_dim); the output layer is
    always linear, so the network produces raw logits.
    """

    layer_dims: tuple
    activation: str = "tanh"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2:
            raise ValueError("layer_dims needs at least input and output dims")
        if any(d < 1 for d in dims):
            raise ValueError("all layer dims must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def num_layers(self) -> int:
        return len(self.layer_dims) - 1


def param_count(spec: NetworkSpec) -> int:
    """Total number of parameters d under the canonical layout."""
    dims = spec.layer_dims
    return sum(dims[l] * dims[l + 1] + dims[l + 1] for l in range(len(dims) - 1))


@dataclass
class ParamVec:
    """A network's parameters as one flat float64 vector tied to its spec."""

    spec: NetworkSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        d = param_count(self.spec)
        if v.shape != (d,):
            raise ValueError(f"expected {d} parameters, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("parameters must be finite")
        self.values = v

    def copy(self) -> "ParamVec":
        return ParamVec(self.spec, self.values.copy())


@dataclass
class LabeledDataset:
    """Rows of (input vector, integer class label) with a split tag."""

    inputs: np.ndarray  # (n, s)
    labels: np.ndarray  # (n,)
    split: str = "train"

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ValueError("inputs must be a 2-D matrix")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ValueError("labels must match input row count")
        if self.split not in ("train", "test"):
            raise ValueError(f"unknown split tag {self.split!r}")

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass
class ProbeSet:
    """Unlabeled inputs used for Fisher estimation and hyperparameter tuning."""

    inputs: np.ndarray  # (P, s)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ValueError("probe needs at least one input row")
        if not np.all(np.isfinite(self.inputs)):
            raise ValueError("probe inputs must be finite")

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    epochs: int
    batch_size: int = 32
    weight_decay: float = 0.0
    rng_seed: int = 0
    loss: str = "cross_entropy"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")


# ---------------------------------------------------------------------------
# Parameter layout


def unflatten(spec: NetworkSpec, values: np.ndarray):
    """Split a flat vector into per-layer (W, b) pairs, W shaped (out, in)."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (param_count(spec),):
        raise ValueError("flat vector length does not match spec")
    layers = []
    offset = 0
    dims = spec.layer_dims
    for l in range(spec.num_layers):
        fan_in, fan_out = dims[l], dims[l + 1]
        w = values[offset : offset + fan_out * fan_in].reshape(fan_out, fan_in)
        offset += fan_out * fan_in
        b = values[offset : offset + fan_out]
        offset += fan_out
        layers.append((w, b))
    return layers


def flatten(spec: NetworkSpec, layers) -> np.ndarray:
    """Inverse of :func:`unflatten`; exact bit-for-bit round trip."""
    parts = []
    for w, b in layers:
        parts.append(np.asarray(w, dtype=np.float64).reshape(-1))
        parts.append(np.asarray(b, dtype=np.float64).reshape(-1))
    out = np.concatenate(parts)
    if out.shape != (param_count(spec),):
        raise ValueError("layer shapes do not match spec")
    return out


def init_params(spec: NetworkSpec, seed: int) -> ParamVec:
    """He-style init: weights ~ N(0, 2/fan_in), biases exactly zero."""
    rng = np.random.default_rng(seed)
    dims = spec.layer_dims
    layers = []
    for l in range(spec.num_layers):
        fan_in, fan_out = dims[l], dims[l + 1]
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        b = np.zeros(fan_out)
        layers.append((w, b))
    return ParamVec(spec, flatten(spec, layers))


# ---------------------------------------------------------------------------
# Forward pass and exact derivatives


def _forward_cached(spec: NetworkSpec, values: np.ndarray, X: np.ndarray):
    """Run the net on a batch, keeping post-activation values per layer.

    Returns (acts, logits) where acts[0] is X and acts[l] the activation
    output of hidden layer l. Tanh and ReLU derivatives are both recoverable
    from the post-activation value alone.
    """
    layers = unflatten(spec, values)
    acts = [X]
    a = X
    for l, (w, b) in enumerate(layers):
        z = a @ w.T + b
        if l < spec.num_layers - 1:
            a = np.tanh(z) if spec.activation == "tanh" else np.maximum(z, 0.0)
            acts.append(a)
        else:
            a = z
    return acts, a


def _hidden_derivative(spec: NetworkSpec, a: np.ndarray) -> np.ndarray:
    if spec.activation == "tanh":
        return 1.0 - a * a
    return (a > 0.0).astype(np.float64)


def _as_batch(spec: NetworkSpec, x) -> tuple:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ValueError(
            f"input dim {X.shape[-1] if X.ndim else '?'} does not match spec input {spec.input_dim}"
        )
    return X, single


def forward(spec: NetworkSpec, params: ParamVec, x) -> np.ndarray:
    """Logits f(x); accepts a single input (s,) or a batch (n, s)."""
    if params.spec != spec:
        raise ValueError("params belong to a different spec")
    X, single = _as_batch(spec, x)
    _, logits = _forward_cached(spec, params.values, X)
    return logits[0] if single else logits


def jacobian_batch(spec: NetworkSpec, params: ParamVec, X: np.ndarray) -> np.ndarray:
    """Per-sample Jacobians d f_k / d theta_j, shape (n, K, d).

    Computed by propagating an identity seed backwards through the layers;
    exact for tanh, almost-everywhere exact for ReLU (derivative 0 at kinks).
    """
    if params.spec != spec:
        raise ValueError("params belong to a different spec")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ValueError("X must be (n, input_dim)")
    layers = unflatten(spec, params.values)
    acts, _ = _forward_cached(spec, params.values, X)
    n, K = X.shape[0], spec.output_dim

    # G holds d f / d z_l for the layer being processed, shape (n, K, fan_out).
    G = np.broadcast_to(np.eye(K), (n, K, K)).copy()
    blocks = [None] * spec.num_layers
    for l in range(spec.num_layers - 1, -1, -1):
        a_prev = acts[l]
        jw = np.einsum("nkr,nc->nkrc", G, a_prev).reshape(n, K, -1)
        blocks[l] = (jw, G)
        if l > 0:
            w, _ = layers[l]
            G = np.einsum("nkr,rc->nkc", G, w)
            G = G * _hidden_derivative(spec, acts[l])[:, None, :]
    parts = []
    for jw, jb in blocks:
        parts.append(jw)
        parts.append(jb)
    return np.concatenate(parts, axis=2)


def jacobian(spec: NetworkSpec, params: ParamVec, x) -> np.ndarray:
    """Jacobian of the outputs w.r.t. all parameters for one input, (K, d)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("jacobian takes a single input vector")
    return jacobian_batch(spec, params, x[None, :])[0]


def backprop_param_grad(spec: NetworkSpec, values: np.ndarray, X: np.ndarray, dZ: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product: gradient of sum_n <dZ_n, f(x_n)> w.r.t. theta."""
    layers = unflatten(spec, values)
    acts, _ = _forward_cached(spec, values, X)
    grads = [None] * spec.num_layers
    G = dZ
    for l in range(spec.num_layers - 1, -1, -1):
        a_prev = acts[l]
        gw = G.T @ a_prev
        gb = G.sum(axis=0)
        grads[l] = (gw, gb)
        if l > 0:
            w, _ = layers[l]
            G = (G @ w) * _hidden_derivative(spec, acts[l])
    return flatten(spec, grads)


# ---------------------------------------------------------------------------
# Loss functions and the trainer


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def mean_loss(spec: NetworkSpec, params: ParamVec, X: np.ndarray, targets: np.ndarray, loss: str) -> float:
    """Mean training loss on a batch.

    cross_entropy: mean over rows of -log softmax(f(x))[y], targets int labels.
    squared_error: (1/2n) sum ||f(x) - y||^2, targets a float matrix (n, K).
    """
    logits = forward(spec, params, X)
    n = X.shape[0]
    if loss == "cross_entropy":
        ls = _log_softmax(logits)
        return float(-ls[np.arange(n), np.asarray(targets, dtype=np.int64)].mean())
    if loss == "squared_error":
        resid = logits - np.asarray(targets, dtype=np.float64)
        return float(0.5 * np.sum(resid * resid) / n)
    raise ValueError(f"unknown loss {loss!r}")


def _loss_grad(spec: NetworkSpec, values: np.ndarray, X: np.ndarray, targets: np.ndarray, loss: str) -> np.ndarray:
    _, logits = _forward_cached(spec, values, X)
    n = X.shape[0]
    if loss == "cross_entropy":
        p = np.exp(_log_softmax(logits))
        dZ = p.copy()
        dZ[np.arange(n), np.asarray(targets, dtype=np.int64)] -= 1.0
        dZ /= n
    else:
        dZ = (logits - np.asarray(targets, dtype=np.float64)) / n
    return backprop_param_grad(spec, values, X, dZ)


def _run_adamw(spec, init, X, targets, cfg: TrainConfig, loss: str, on_epoch=None) -> ParamVec:
    theta = init.values.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    t = 0
    rng = np.random.default_rng(cfg.rng_seed)
    n = X.shape[0]
    if on_epoch is not None:
        on_epoch(0, ParamVec(spec, theta.copy()))
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            g = _loss_grad(spec, theta, X[idx], targets[idx], loss)
            t += 1
            m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
            v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g
            mhat = m / (1.0 - ADAM_BETA1**t)
            vhat = v / (1.0 - ADAM_BETA2**t)
            theta = theta - cfg.learning_rate * (
                mhat / (np.sqrt(vhat) + ADAM_EPS) + cfg.weight_decay * theta
            )
        if on_epoch is not None:
            on_epoch(epoch + 1, ParamVec(spec, theta.copy()))
    return ParamVec(spec, theta)


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def train(spec: NetworkSpec, init: ParamVec, data: LabeledDataset, cfg: TrainConfig) -> ParamVec:
    """Mini-batch AdamW on the configured loss; deterministic given the seed.

    epochs = 0 returns the initial parameters unchanged.
    """
    if init.spec != spec:
        raise ValueError("init belongs to a different spec")
    if cfg.epochs == 0:
        return init.copy()
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    if data.labels.min() < 0 or data.labels.max() >= spec.output_dim:
        raise ValueError("labels out of range for the output dim")
    if cfg.loss == "cross_entropy":
        targets = data.labels
    else:
        targets = one_hot(data.labels, spec.output_dim)
    return _run_adamw(spec, init, data.inputs, targets, cfg, cfg.loss)


def train_regression(spec: NetworkSpec, init: ParamVec, inputs: np.ndarray, targets: np.ndarray, cfg: TrainConfig, on_epoch=None) -> ParamVec:
    """AdamW squared-error regression against vector targets (n, K)."""
    if init.spec != spec:
        raise ValueError("init belongs to a different spec")
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (inputs.shape[0], spec.output_dim):
        raise ValueError("targets must be (n, output_dim)")
    if cfg.epochs == 0:
        if on_epoch is not None:
            on_epoch(0, init.copy())
        return init.copy()
    if inputs.shape[0] == 0:
        raise ValueError("cannot train on empty inputs")
    return _run_adamw(spec, init, inputs, targets, cfg, "squared_error", on_epoch)


def accuracy(spec: NetworkSpec, params: ParamVec, data: LabeledDataset) -> float:
    """Fraction of rows where argmax of the logits equals the label.

    np.argmax breaks ties toward the lowest index, which is the tie rule
    used throughout the decoding metrics.
    """
    if len(data) == 0:
        raise ValueError("accuracy of an empty dataset is undefined")
    logits = forward(spec, params, data.inputs)
    return float(np.mean(np.argmax(logits, axis=1) == data.labels))
