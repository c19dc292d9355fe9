"""From-scratch MLP classifier: forward pass, exact gradients, SGD training.

The extractor is a stack of ReLU layers; the classification head is a linear
layer whose row count grows as class batches arrive. Everything is float64 so
that analytic gradients can be checked against central finite differences at
tight tolerance.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

CHECKPOINT_VERSION = 1


@dataclass
class TrainSpec:
    """Hyperparameters for one state's SGD run."""

    epochs: int
    batch_size: int
    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    plateau_patience: int = 8
    plateau_factor: float = 0.1
    distill: bool = False
    distill_temperature: float = 2.0
    distill_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.plateau_patience < 1:
            raise ConfigError("plateau_patience must be >= 1")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ConfigError("plateau_factor must be in (0, 1)")
        if self.distill_temperature <= 0:
            raise ConfigError("distill_temperature must be positive")
        if self.distill_weight < 0:
            raise ConfigError("distill_weight must be non-negative")


@dataclass
class LossBreakdown:
    classification_loss: float
    distillation_loss: float
    total: float


@dataclass
class Model:
    """ReLU MLP extractor plus linear head over the classes seen so far.

    ``extractor_layers`` holds (W, b) pairs with W of shape (fan_in, fan_out);
    ``head_weights`` has one row per seen class, ``head_bias`` one entry.
    """

    extractor_layers: list
    head_weights: np.ndarray
    head_bias: np.ndarray
    state_index: int = 0

    def __post_init__(self):
        self.extractor_layers = [
            (np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64))
            for w, b in self.extractor_layers
        ]
        self.head_weights = np.asarray(self.head_weights, dtype=np.float64)
        self.head_bias = np.asarray(self.head_bias, dtype=np.float64)
        if self.head_weights.ndim != 2:
            raise ShapeError("head_weights must be 2-D (classes x feature dim)")
        if self.head_bias.shape != (self.head_weights.shape[0],):
            raise ShapeError("head_bias length must match head row count")
        for arr in self.parameters():
            if not np.isfinite(arr).all():
                raise ConfigError("model parameters must be finite")

    @property
    def num_classes(self) -> int:
        return self.head_weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.head_weights.shape[1]

    @property
    def input_dim(self) -> int:
        if self.extractor_layers:
            return self.extractor_layers[0][0].shape[0]
        return self.feature_dim

    def parameters(self) -> list:
        """All parameter arrays in a fixed order (extractor first, head last)."""
        params = []
        for w, b in self.extractor_layers:
            params.extend([w, b])
        params.extend([self.head_weights, self.head_bias])
        return params

    def copy(self) -> "Model":
        return Model(
            [(w.copy(), b.copy()) for w, b in self.extractor_layers],
            self.head_weights.copy(),
            self.head_bias.copy(),
            self.state_index,
        )


def init_model(
    input_dim: int, hidden_sizes: list, num_classes: int, seed: int, state_index: int = 0
) -> Model:
    """Seeded model with uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases."""
    if input_dim < 1 or num_classes < 1:
        raise ConfigError("input_dim and num_classes must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 10]))
    layers = []
    fan_in = input_dim
    for width in hidden_sizes:
        bound = 1.0 / np.sqrt(fan_in)
        layers.append((rng.uniform(-bound, bound, size=(fan_in, width)), np.zeros(width)))
        fan_in = width
    bound = 1.0 / np.sqrt(fan_in)
    head_w = rng.uniform(-bound, bound, size=(num_classes, fan_in))
    return Model(layers, head_w, np.zeros(num_classes), state_index)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def _forward_cached(model: Model, batch: np.ndarray):
    """Forward pass keeping pre-activations for backprop."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeError(
            f"batch shape {x.shape} incompatible with input dim {model.input_dim}"
        )
    activations = [x]
    pre_activations = []
    h = x
    for w, b in model.extractor_layers:
        pre = h @ w + b
        h = np.maximum(pre, 0.0)
        pre_activations.append(pre)
        activations.append(h)
    logits = h @ model.head_weights.T + model.head_bias
    return activations, pre_activations, h, logits


def forward(model: Model, batch: np.ndarray):
    """Return (features, logits) for a batch of input rows."""
    _, _, features, logits = _forward_cached(model, batch)
    return features, logits


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    return exps / exps.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean softmax cross-entropy, computed via log-sum-exp for stability."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(labels.size), labels]
    return float(np.mean(log_norm - picked))


def loss_and_gradients(
    model: Model,
    batch: np.ndarray,
    labels: np.ndarray,
    previous_model: Model | None,
    spec: TrainSpec,
):
    """Total loss plus exact gradients for every parameter.

    Classification is mean cross-entropy over the full current head. With
    distillation on, the previous model's logits (softened at the configured
    temperature) constrain the current logits of the old classes, and the
    weighted term is added to the total.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ShapeError("empty batch")
    if labels.min() < 0 or labels.max() >= model.num_classes:
        raise ConfigError("labels outside the current class range")
    if spec.distill:
        if model.state_index == 0:
            raise ConfigError("distillation is undefined in the initial state")
        if previous_model is None:
            raise ConfigError("distillation requires the previous state's model")

    activations, pre_activations, features, logits = _forward_cached(model, batch)
    m = batch.shape[0]

    probs = softmax(logits)
    cls_loss = cross_entropy(logits, labels)
    d_logits = probs.copy()
    d_logits[np.arange(m), labels] -= 1.0
    d_logits /= m

    distill_loss = 0.0
    if spec.distill:
        n_prev = previous_model.num_classes
        tau = spec.distill_temperature
        _, prev_logits = forward(previous_model, batch)
        target = softmax(prev_logits / tau)
        cur_past = logits[:, :n_prev]
        shifted = cur_past / tau - (cur_past / tau).max(axis=1, keepdims=True)
        log_q = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        distill_loss = float(np.mean(-(target * log_q).sum(axis=1)))
        q = np.exp(log_q)
        d_logits[:, :n_prev] += spec.distill_weight * (q - target) / (tau * m)

    head_w_grad = d_logits.T @ features
    head_b_grad = d_logits.sum(axis=0)
    d_hidden = d_logits @ model.head_weights

    layer_grads = []
    for i in range(len(model.extractor_layers) - 1, -1, -1):
        w, _ = model.extractor_layers[i]
        d_pre = d_hidden * (pre_activations[i] > 0)
        layer_grads.append((activations[i].T @ d_pre, d_pre.sum(axis=0)))
        d_hidden = d_pre @ w.T
    layer_grads.reverse()

    grads = []
    for gw, gb in layer_grads:
        grads.extend([gw, gb])
    grads.extend([head_w_grad, head_b_grad])

    total = cls_loss + spec.distill_weight * distill_loss
    return LossBreakdown(cls_loss, distill_loss, total), grads


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    lr: float
    classification_loss: float
    distillation_loss: float
    train_accuracy: float


def _train_accuracy(model: Model, features: np.ndarray, labels: np.ndarray) -> float:
    _, logits = forward(model, features)
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def train_state(
    model_init: Model,
    view,
    spec: TrainSpec,
    previous_model: Model | None = None,
) -> tuple[Model, list]:
    """SGD with momentum and weight decay over one state's training view.

    The initial learning rate is ``base_lr`` in state 0 and ``base_lr / t`` in
    state t >= 1, and is multiplied by ``plateau_factor`` whenever the training
    error has not improved for ``plateau_patience`` consecutive epochs. Weight
    decay enters the update as an additive ``lambda * theta`` gradient term, so
    one step equals a step on loss + (lambda/2)||theta||^2.
    """
    if view.num_samples == 0:
        raise ConfigError("training view is empty")
    model = model_init.copy()
    t = model.state_index
    lr = spec.base_lr / max(1, t)
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 20, int(t)]))

    params = model.parameters()
    velocity = [np.zeros_like(p) for p in params]

    best_error = np.inf
    stall = 0
    trace: list[EpochStats] = []
    n = view.num_samples
    for epoch in range(spec.epochs):
        order = rng.permutation(n)
        cls_sum = 0.0
        dist_sum = 0.0
        batches = 0
        for start in range(0, n, spec.batch_size):
            idx = order[start : start + spec.batch_size]
            breakdown, grads = loss_and_gradients(
                model, view.features[idx], view.labels[idx], previous_model, spec
            )
            cls_sum += breakdown.classification_loss
            dist_sum += breakdown.distillation_loss
            batches += 1
            for p, v, g in zip(params, velocity, grads):
                np.multiply(v, spec.momentum, out=v)
                v += g + spec.weight_decay * p
                p -= lr * v
        accuracy = _train_accuracy(model, view.features, view.labels)
        trace.append(
            EpochStats(epoch, lr, cls_sum / batches, dist_sum / batches, accuracy)
        )
        error = 1.0 - accuracy
        if error < best_error - 1e-12:
            best_error = error
            stall = 0
        else:
            stall += 1
            if stall >= spec.plateau_patience:
                lr *= spec.plateau_factor
                stall = 0
    return model, trace


NEW_ROW_SCALE = 0.01


def extend_head(model: Model, n_new: int, seed: int, init_scale: float = NEW_ROW_SCALE) -> Model:
    """Next state's model: extractor and old head rows copied, new rows seeded.

    New rows start near zero (uniform in +-init_scale/sqrt(d)). Starting them
    at the scale of trained rows lets the extractor drift violently while the
    head catches up; near-zero rows grow to exactly the magnitude the state's
    training demands, which is what the initial-weights replay relies on.
    """
    if n_new < 1:
        raise ConfigError("n_new must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 30, model.state_index + 1]))
    d = model.feature_dim
    bound = init_scale / np.sqrt(d)
    new_rows = rng.uniform(-bound, bound, size=(n_new, d))
    head_w = np.vstack([model.head_weights, new_rows])
    head_b = np.concatenate([model.head_bias, np.zeros(n_new)])
    return Model(
        [(w.copy(), b.copy()) for w, b in model.extractor_layers],
        head_w,
        head_b,
        model.state_index + 1,
    )


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------
#
# Plain little-endian container rather than npz: identical models must produce
# identical bytes, and zip members carry timestamps.

CHECKPOINT_MAGIC = b"MCKP"


def _write_tensor(fh, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
    fh.write(arr.tobytes())


def _read_tensor(fh) -> np.ndarray:
    (ndim,) = struct.unpack("<I", fh.read(4))
    shape = struct.unpack(f"<{ndim}q", fh.read(8 * ndim))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(fh.read(count * 8), dtype="<f8").copy()
    return data.reshape(shape)


def save_model(model: Model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(
            struct.pack(
                "<4sIqI",
                CHECKPOINT_MAGIC,
                CHECKPOINT_VERSION,
                model.state_index,
                len(model.extractor_layers),
            )
        )
        for w, b in model.extractor_layers:
            _write_tensor(fh, w)
            _write_tensor(fh, b)
        _write_tensor(fh, model.head_weights)
        _write_tensor(fh, model.head_bias)


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        magic, version, state_index, n_layers = struct.unpack("<4sIqI", fh.read(20))
        if magic != CHECKPOINT_MAGIC:
            raise ConfigError(f"{path}: not a model checkpoint")
        if version != CHECKPOINT_VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {version}")
        layers = [(_read_tensor(fh), _read_tensor(fh)) for _ in range(n_layers)]
        head_w = _read_tensor(fh)
        head_b = _read_tensor(fh)
        return Model(layers, head_w, head_b, state_index)
