"""From-scratch trainable classifiers on plain numpy.

Two architectures: a small 1-D CNN (conv / batch-norm / ReLU / max-pool
blocks, global max pooling, two dense layers) and an MLP baseline.  Both
expose an opaque probability interface for the attribution engine:
``predict_batch`` returns softmax rows that are bitwise identical whether
a sample is scored alone, inside a batch, or from a different position
in a permuted batch.

That guarantee does not come for free.  BLAS matrix products are not
row-stable across different heights (the tail rows of a GEMM may use a
different micro-kernel and accumulate in a different order), so every
evaluation-mode forward pass runs at a fixed internal micro-batch size,
zero-padded, with the padding rows discarded.  All GEMM shapes are then
constants of the architecture and each row's arithmetic never depends
on the rest of the batch.

Training is ordinary minibatch Adam on softmax cross-entropy with
manual backpropagation, deterministic for a fixed seed.
"""

from __future__ import annotations

import json
import math
import struct
import time
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, FormatError, InvalidInputError, TrainingError
from .signal import TimeSeries

MODEL_KINDS = ("cnn1d", "mlp")
_DTYPES = {"float32": np.float32, "float64": np.float64}

# fixed GEMM height for evaluation-mode forwards; any constant works,
# changing it changes low-order bits of every prediction
_MICRO_BATCH = 128

_BN_EPS = 1e-5
_BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture description; everything needed to rebuild a model."""

    kind: str
    input_length: int
    class_count: int
    layer_widths: tuple  # cnn1d: channels per conv block; mlp: hidden widths
    kernel_size: int = 7  # first conv block; deeper blocks use 3
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigurationError(
                f"unknown model kind {self.kind!r}, expected one of {MODEL_KINDS}"
            )
        if int(self.class_count) < 2:
            raise ConfigurationError("class_count must be at least 2")
        if int(self.input_length) < 1:
            raise ConfigurationError("input_length must be positive")
        widths = tuple(int(w) for w in self.layer_widths)
        if not widths or any(w < 1 for w in widths):
            raise ConfigurationError("layer_widths must be positive integers")
        if int(self.kernel_size) < 1:
            raise ConfigurationError("kernel_size must be positive")
        if self.dtype not in _DTYPES:
            raise ConfigurationError(f"dtype must be one of {sorted(_DTYPES)}")
        object.__setattr__(self, "kind", str(self.kind))
        object.__setattr__(self, "input_length", int(self.input_length))
        object.__setattr__(self, "class_count", int(self.class_count))
        object.__setattr__(self, "layer_widths", widths)
        object.__setattr__(self, "kernel_size", int(self.kernel_size))
        object.__setattr__(self, "seed", int(self.seed))


def default_cnn_config(input_length, class_count, *, seed=0):
    # depth matters more than width here: seven pool-2 blocks give the
    # last conv a ~260-sample receptive field, spanning multiple impulse
    # repetitions, so the net can resolve modulation rate rather than
    # just carrier-band presence
    return ModelConfig(
        kind="cnn1d",
        input_length=input_length,
        class_count=class_count,
        layer_widths=(8, 16, 32, 48, 48, 48, 48),
        kernel_size=7,
        seed=seed,
    )


def default_mlp_config(input_length, class_count, *, seed=0):
    return ModelConfig(
        kind="mlp",
        input_length=input_length,
        class_count=class_count,
        layer_widths=(256, 64),
        kernel_size=1,
        seed=seed,
    )


def _uniform_fan_in(rng, fan_in, shape, dtype):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class _Conv1d:
    """Valid (no padding) stride-1 convolution via im2col."""

    def __init__(self, in_ch, out_ch, kernel, rng, dtype):
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.kernel = kernel
        fan_in = in_ch * kernel
        self.params = {
            "w": _uniform_fan_in(rng, fan_in, (fan_in, out_ch), dtype),
            "b": _uniform_fan_in(rng, fan_in, (out_ch,), dtype),
        }
        self.buffers = {}
        self.grads = {}

    def out_length(self, length):
        out = length - self.kernel + 1
        if out < 1:
            raise ConfigurationError(
                f"input length {length} shorter than kernel {self.kernel}"
            )
        return out

    def forward(self, x, training):
        # x: (B, C, L) -> (B, out_ch, T)
        b, _, length = x.shape
        t = length - self.kernel + 1
        patches = sliding_window_view(x, self.kernel, axis=2)  # (B, C, T, k)
        cols = patches.transpose(0, 2, 1, 3).reshape(b * t, self.in_ch * self.kernel)
        y = cols @ self.params["w"] + self.params["b"]
        y = y.reshape(b, t, self.out_ch).transpose(0, 2, 1)
        cache = (cols, x.shape) if training else None
        return np.ascontiguousarray(y), cache

    def backward(self, dy, cache):
        cols, x_shape = cache
        b, _, length = x_shape
        t = length - self.kernel + 1
        dyt = np.ascontiguousarray(dy.transpose(0, 2, 1)).reshape(b * t, self.out_ch)
        self.grads["w"] = cols.T @ dyt
        self.grads["b"] = dyt.sum(axis=0, dtype=np.float64).astype(dyt.dtype)
        dcols = (dyt @ self.params["w"].T).reshape(b, t, self.in_ch, self.kernel)
        dcols = dcols.transpose(0, 2, 1, 3)  # (B, C, T, k)
        dx = np.zeros(x_shape, dtype=dy.dtype)
        for j in range(self.kernel):
            dx[:, :, j : j + t] += dcols[:, :, :, j]
        return dx


class _BatchNorm1d:
    """Per-channel normalization over (batch, time); running stats at eval."""

    def __init__(self, channels, dtype):
        self.channels = channels
        self.params = {
            "gamma": np.ones(channels, dtype=dtype),
            "beta": np.zeros(channels, dtype=dtype),
        }
        self.buffers = {
            "running_mean": np.zeros(channels, dtype=dtype),
            "running_var": np.ones(channels, dtype=dtype),
        }
        self.grads = {}

    def out_length(self, length):
        return length

    def forward(self, x, training):
        gamma = self.params["gamma"][:, None]
        beta = self.params["beta"][:, None]
        if not training:
            # fold the whole affine into one scale/shift pair per channel
            mean = self.buffers["running_mean"].astype(x.dtype)[:, None]
            var = self.buffers["running_var"].astype(x.dtype)[:, None]
            scale = gamma * (1.0 / np.sqrt(var + _BN_EPS)).astype(x.dtype)
            return x * scale + (beta - mean * scale), None
        n = x.shape[0] * x.shape[2]
        mean = x.mean(axis=(0, 2), dtype=np.float64)
        var = x.var(axis=(0, 2), dtype=np.float64)
        inv = (1.0 / np.sqrt(var + _BN_EPS)).astype(x.dtype)[:, None]
        xhat = (x - mean.astype(x.dtype)[:, None]) * inv
        rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
        unbiased = var * (n / (n - 1)) if n > 1 else var
        rm[...] = (1 - _BN_MOMENTUM) * rm + _BN_MOMENTUM * mean.astype(rm.dtype)
        rv[...] = (1 - _BN_MOMENTUM) * rv + _BN_MOMENTUM * unbiased.astype(rv.dtype)
        return gamma * xhat + beta, (xhat, inv)

    def backward(self, dy, cache):
        xhat, inv = cache
        n = dy.shape[0] * dy.shape[2]
        self.grads["gamma"] = (dy * xhat).sum(axis=(0, 2), dtype=np.float64).astype(dy.dtype)
        self.grads["beta"] = dy.sum(axis=(0, 2), dtype=np.float64).astype(dy.dtype)
        dxhat = dy * self.params["gamma"][:, None]
        s1 = dxhat.sum(axis=(0, 2), dtype=np.float64).astype(dy.dtype)[:, None]
        s2 = (dxhat * xhat).sum(axis=(0, 2), dtype=np.float64).astype(dy.dtype)[:, None]
        return inv * (dxhat - s1 / n - xhat * s2 / n)


class _ReLU:
    def __init__(self):
        self.params = {}
        self.buffers = {}
        self.grads = {}

    def out_length(self, length):
        return length

    def forward(self, x, training):
        y = np.maximum(x, 0)
        return y, (x > 0) if training else None

    def backward(self, dy, cache):
        return dy * cache


class _MaxPool1d:
    """Width-2 stride-2 pooling; a trailing odd sample is dropped."""

    def __init__(self):
        self.params = {}
        self.buffers = {}
        self.grads = {}

    def out_length(self, length):
        out = length // 2
        if out < 1:
            raise ConfigurationError(f"cannot pool length {length}")
        return out

    def forward(self, x, training):
        t = (x.shape[2] // 2) * 2
        if not training:
            # same values as the argmax path, without the index bookkeeping
            return np.maximum(x[:, :, 0:t:2], x[:, :, 1:t:2]), None
        pairs = x[:, :, :t].reshape(x.shape[0], x.shape[1], t // 2, 2)
        idx = pairs.argmax(axis=3)
        y = np.take_along_axis(pairs, idx[..., None], axis=3)[..., 0]
        return y, (idx, x.shape)

    def backward(self, dy, cache):
        idx, x_shape = cache
        t = (x_shape[2] // 2) * 2
        dpairs = np.zeros((x_shape[0], x_shape[1], t // 2, 2), dtype=dy.dtype)
        np.put_along_axis(dpairs, idx[..., None], dy[..., None], axis=3)
        dx = np.zeros(x_shape, dtype=dy.dtype)
        dx[:, :, :t] = dpairs.reshape(x_shape[0], x_shape[1], t)
        return dx


class _GlobalMaxPool:
    def __init__(self):
        self.params = {}
        self.buffers = {}
        self.grads = {}

    def out_length(self, length):
        return 1

    def forward(self, x, training):
        if not training:
            return x.max(axis=2), None
        idx = x.argmax(axis=2)
        y = np.take_along_axis(x, idx[..., None], axis=2)[..., 0]  # (B, C)
        return y, (idx, x.shape)

    def backward(self, dy, cache):
        idx, x_shape = cache
        dx = np.zeros(x_shape, dtype=dy.dtype)
        np.put_along_axis(dx, idx[..., None], dy[..., None], axis=2)
        return dx


class _Dense:
    def __init__(self, in_features, out_features, rng, dtype):
        self.params = {
            "w": _uniform_fan_in(rng, in_features, (in_features, out_features), dtype),
            "b": _uniform_fan_in(rng, in_features, (out_features,), dtype),
        }
        self.buffers = {}
        self.grads = {}

    def forward(self, x, training):
        y = x @ self.params["w"] + self.params["b"]
        return y, x if training else None

    def backward(self, dy, cache):
        self.grads["w"] = cache.T @ dy
        self.grads["b"] = dy.sum(axis=0, dtype=np.float64).astype(dy.dtype)
        return dy @ self.params["w"].T


class Classifier:
    """Trained or untrained network; treat as opaque beyond predict."""

    def __init__(self, config: ModelConfig, layers):
        self.config = config
        self.dtype = _DTYPES[config.dtype]
        self._layers = layers

    # -- introspection ------------------------------------------------

    @property
    def parameter_count(self):
        return sum(p.size for lay in self._layers for p in lay.params.values())

    @property
    def state_float_count(self):
        """Learnable parameters plus persistent buffers (serialized size)."""
        return self.parameter_count + sum(
            b.size for lay in self._layers for b in lay.buffers.values()
        )

    def state_arrays(self):
        out = []
        for i, lay in enumerate(self._layers):
            for name in sorted(lay.params):
                out.append((f"layer{i}.{name}", lay.params[name], "param"))
            for name in sorted(lay.buffers):
                out.append((f"layer{i}.{name}", lay.buffers[name], "buffer"))
        return out

    # -- forward ------------------------------------------------------

    def _forward(self, x, training):
        caches = []
        h = x
        if self.config.kind == "cnn1d":
            h = h[:, None, :]  # (B, 1, L); global pool flattens back to (B, C)
        for lay in self._layers:
            h, cache = lay.forward(h, training)
            caches.append(cache)
        return h, caches

    def _backward(self, dlogits, caches):
        grad = dlogits
        for lay, cache in zip(reversed(self._layers), reversed(caches)):
            grad = lay.backward(grad, cache)
        return grad

    def _eval_forward(self, x):
        """Inference forward pass.

        For the CNN this runs in time-major (B, T, C) layout, where a
        window view flattens directly into im2col column order (the
        weight rows are (channel, tap) C-ordered), so the whole network
        runs without a single transpose.  Same math as the training
        path, different summation order.
        """
        if self.config.kind != "cnn1d":
            logits, _ = self._forward(x, training=False)
            return logits
        layers = self._layers
        h = np.ascontiguousarray(x[:, :, None])  # (B, L, 1)
        i = 0
        while isinstance(layers[i], _Conv1d):
            conv, bn = layers[i], layers[i + 1]
            b, length, _ = h.shape
            t = length - conv.kernel + 1
            patches = sliding_window_view(h, conv.kernel, axis=1)  # (B,T,C,k)
            cols = patches.reshape(b * t, conv.in_ch * conv.kernel)
            y = (cols @ conv.params["w"]).reshape(b, t, conv.out_ch)
            y += conv.params["b"]
            scale = bn.params["gamma"] / np.sqrt(bn.buffers["running_var"] + _BN_EPS)
            scale = scale.astype(h.dtype)
            y = y * scale + (bn.params["beta"] - bn.buffers["running_mean"] * scale)
            np.maximum(y, 0.0, out=y)
            tp = (y.shape[1] // 2) * 2
            h = np.maximum(y[:, 0:tp:2, :], y[:, 1:tp:2, :])
            i += 4  # conv, batch norm, relu, pool
        h = h.max(axis=1)  # global max pool, (B, C)
        for lay in layers[i + 1 :]:
            h, _ = lay.forward(h, training=False)
        return h

    def _eval_logits(self, xs):
        """Fixed-shape batched forward; rows independent of batch content."""
        n = xs.shape[0]
        out = np.empty((n, self.config.class_count), dtype=self.dtype)
        for start in range(0, n, _MICRO_BATCH):
            chunk = xs[start : start + _MICRO_BATCH]
            if chunk.shape[0] < _MICRO_BATCH:
                padded = np.zeros((_MICRO_BATCH, xs.shape[1]), dtype=self.dtype)
                padded[: chunk.shape[0]] = chunk
                chunk = padded
            logits = self._eval_forward(chunk)
            out[start : start + _MICRO_BATCH] = logits[: min(_MICRO_BATCH, n - start)]
        return out

    def predict_logits(self, xs):
        return self._eval_logits(_coerce_batch(xs, self.config.input_length, self.dtype))

    def predict_proba(self, xs):
        return _softmax64(self.predict_logits(xs))

    def predict(self, x):
        return self.predict_proba([x])[0]


def _coerce_batch(xs, input_length, dtype):
    if isinstance(xs, TimeSeries):
        raise InvalidInputError("pass a sequence of signals or a 2-D array")
    if isinstance(xs, np.ndarray) and xs.ndim == 2:
        rows = np.asarray(xs, dtype=dtype)
    else:
        rows = np.stack(
            [
                np.asarray(x.samples if isinstance(x, TimeSeries) else x, dtype=dtype)
                for x in xs
            ]
        )
    if rows.ndim != 2 or rows.shape[1] != input_length:
        raise InvalidInputError(
            f"expected samples of length {input_length}, got shape {rows.shape}"
        )
    return np.ascontiguousarray(rows)


def _softmax64(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def build_model(config: ModelConfig) -> Classifier:
    """Deterministic uniform fan-in initialization from config.seed."""
    rng = np.random.default_rng(config.seed)
    dtype = _DTYPES[config.dtype]
    layers = []
    if config.kind == "cnn1d":
        length = config.input_length
        in_ch = 1
        for bi, out_ch in enumerate(config.layer_widths):
            kernel = config.kernel_size if bi == 0 else min(3, config.kernel_size)
            conv = _Conv1d(in_ch, out_ch, kernel, rng, dtype)
            length = conv.out_length(length)
            layers.extend([conv, _BatchNorm1d(out_ch, dtype), _ReLU()])
            pool = _MaxPool1d()
            length = pool.out_length(length)
            layers.append(pool)
            in_ch = out_ch
        layers.append(_GlobalMaxPool())
        layers.append(_Dense(in_ch, 64, rng, dtype))
        layers.append(_ReLU())
        layers.append(_Dense(64, config.class_count, rng, dtype))
    else:
        fan = config.input_length
        for width in config.layer_widths:
            layers.append(_Dense(fan, width, rng, dtype))
            layers.append(_ReLU())
            fan = width
        layers.append(_Dense(fan, config.class_count, rng, dtype))
    return Classifier(config, layers)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class ArraySplit:
    """Minimal train/test container for ad-hoc arrays."""

    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray


@dataclass(frozen=True)
class TrainReport:
    epoch_losses: tuple
    train_accuracies: tuple
    test_accuracies: tuple
    learning_rates: tuple
    confusion: tuple  # rows: true class, columns: predicted
    hyperparameters: dict
    wall_clock_s: float

    def to_json(self):
        return json.dumps(
            {
                "epoch_losses": list(self.epoch_losses),
                "train_accuracies": list(self.train_accuracies),
                "test_accuracies": list(self.test_accuracies),
                "learning_rates": list(self.learning_rates),
                "confusion": [list(row) for row in self.confusion],
                "hyperparameters": self.hyperparameters,
                "wall_clock_s": self.wall_clock_s,
            },
            indent=2,
        )

    def save_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,loss,train_accuracy,test_accuracy,learning_rate\n")
            for i in range(len(self.epoch_losses)):
                fh.write(
                    f"{i + 1},{self.epoch_losses[i]:.17g},"
                    f"{self.train_accuracies[i]:.17g},"
                    f"{self.test_accuracies[i]:.17g},"
                    f"{self.learning_rates[i]:.17g}\n"
                )


def _cross_entropy(logits, labels):
    p = _softmax64(logits)
    n = logits.shape[0]
    eps = np.finfo(np.float64).tiny
    loss = -np.mean(np.log(p[np.arange(n), labels] + eps))
    dlogits = p
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits


class _Adam:
    def __init__(self, layers, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.state = {}
        for i, lay in enumerate(layers):
            for name, p in lay.params.items():
                self.state[(i, name)] = (
                    np.zeros_like(p, dtype=np.float64),
                    np.zeros_like(p, dtype=np.float64),
                )

    def step(self, layers, lr):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for i, lay in enumerate(layers):
            for name, p in lay.params.items():
                g = lay.grads[name].astype(np.float64)
                m, v = self.state[(i, name)]
                m *= self.beta1
                m += (1 - self.beta1) * g
                v *= self.beta2
                v += (1 - self.beta2) * g * g
                update = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
                p -= update.astype(p.dtype)


def accuracy(model: Classifier, xs, labels):
    pred = model.predict_proba(xs).argmax(axis=1)
    return float(np.mean(pred == np.asarray(labels)))


def confusion_matrix(model: Classifier, xs, labels):
    k = model.config.class_count
    pred = model.predict_proba(xs).argmax(axis=1)
    out = np.zeros((k, k), dtype=np.int64)
    for t, p in zip(np.asarray(labels), pred):
        out[int(t), int(p)] += 1
    return out


def train(
    model: Classifier,
    data,
    *,
    epochs=20,
    batch_size=64,
    learning_rate=1e-3,
    lr_decay=0.99,
    seed=0,
) -> TrainReport:
    """Minibatch Adam on softmax cross-entropy; deterministic per seed."""
    train_x = np.asarray(data.train_x, dtype=model.dtype)
    train_y = np.asarray(data.train_y, dtype=np.int64)
    test_x = np.asarray(data.test_x, dtype=model.dtype)
    test_y = np.asarray(data.test_y, dtype=np.int64)
    k = model.config.class_count
    if train_x.ndim != 2 or train_x.shape[1] != model.config.input_length:
        raise InvalidInputError(
            f"training samples must be (n, {model.config.input_length})"
        )
    if train_x.shape[0] != train_y.shape[0] or test_x.shape[0] != test_y.shape[0]:
        raise InvalidInputError("sample and label counts differ")
    for y in (train_y, test_y):
        if y.size and (y.min() < 0 or y.max() >= k):
            raise InvalidInputError(f"labels must lie in [0, {k})")
    if int(epochs) < 1 or int(batch_size) < 1:
        raise InvalidInputError("epochs and batch_size must be positive")

    rng = np.random.default_rng(seed)
    optimizer = _Adam(model._layers)
    n = train_x.shape[0]
    losses, train_accs, test_accs, lrs = [], [], [], []
    started = time.perf_counter()
    for epoch in range(int(epochs)):
        lr = learning_rate * lr_decay**epoch
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, int(batch_size)):
            idx = order[start : start + int(batch_size)]
            logits, caches = model._forward(train_x[idx], training=True)
            loss, dlogits = _cross_entropy(logits, train_y[idx])
            if not np.isfinite(loss):
                raise TrainingError(
                    f"loss diverged at epoch {epoch + 1}, step {start // int(batch_size) + 1}: "
                    f"loss={loss!r}, lr={lr:g}"
                )
            model._backward(dlogits.astype(model.dtype), caches)
            optimizer.step(model._layers, lr)
            loss_sum += loss * len(idx)
        losses.append(loss_sum / n)
        train_accs.append(accuracy(model, train_x, train_y))
        test_accs.append(accuracy(model, test_x, test_y) if test_x.size else math.nan)
        lrs.append(lr)
    conf = confusion_matrix(model, test_x if test_x.size else train_x,
                            test_y if test_x.size else train_y)
    return TrainReport(
        epoch_losses=tuple(losses),
        train_accuracies=tuple(train_accs),
        test_accuracies=tuple(test_accs),
        learning_rates=tuple(lrs),
        confusion=tuple(tuple(int(v) for v in row) for row in conf),
        hyperparameters={
            "epochs": int(epochs),
            "batch_size": int(batch_size),
            "learning_rate": float(learning_rate),
            "lr_decay": float(lr_decay),
            "seed": int(seed),
        },
        wall_clock_s=time.perf_counter() - started,
    )


def predict_batch(model: Classifier, xs):
    """Probability matrix, row i for xs[i]; equals per-sample calls bitwise."""
    return model.predict_proba(xs)


def finite_difference_gradient_check(model: Classifier, xs, labels, epsilon=1e-3):
    """Compare backprop gradients with central differences of the loss.

    Returns ``{tensor_name: relative_error}`` where the relative error is
    ||g_fd - g_bp|| / max(||g_fd|| + ||g_bp||, 1e-6) per parameter tensor.
    The floor keeps degenerate tensors from tripping the check: a conv
    bias followed by batch norm has an exactly-zero gradient, so both
    sides are rounding noise there.  Meant for small float64 builds;
    float32 models drown in rounding noise.
    """
    xs = _coerce_batch(xs, model.config.input_length, model.dtype)
    labels = np.asarray(labels, dtype=np.int64)

    def loss_at():
        logits, _ = model._forward(xs, training=True)
        return _cross_entropy(logits, labels)[0]

    logits, caches = model._forward(xs, training=True)
    loss, dlogits = _cross_entropy(logits, labels)
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss!r} in gradient check")
    model._backward(dlogits.astype(model.dtype), caches)

    errors = {}
    for i, lay in enumerate(model._layers):
        for name, p in lay.params.items():
            analytic = lay.grads[name].copy()
            fd = np.empty_like(analytic, dtype=np.float64)
            flat = p.reshape(-1)
            for j in range(flat.size):
                keep = flat[j]
                flat[j] = keep + epsilon
                hi = loss_at()
                flat[j] = keep - epsilon
                lo = loss_at()
                flat[j] = keep
                fd.reshape(-1)[j] = (hi - lo) / (2 * epsilon)
            denom = np.linalg.norm(fd) + np.linalg.norm(analytic)
            errors[f"layer{i}.{name}"] = float(
                np.linalg.norm(fd - analytic) / max(denom, 1e-6)
            )
    return errors


# ---------------------------------------------------------------------------
# serialization

_MODEL_MAGIC = b"CSM1"
_MODEL_VERSION = 1
_MODEL_HEADER = struct.Struct("<4sHHI")


def save_model(model: Classifier, path):
    """Header (magic, version, config echo) + little-endian float32 blob."""
    arrays = model.state_arrays()
    meta = {
        "config": {
            "kind": model.config.kind,
            "input_length": model.config.input_length,
            "class_count": model.config.class_count,
            "layer_widths": list(model.config.layer_widths),
            "kernel_size": model.config.kernel_size,
            "seed": model.config.seed,
            "dtype": "float32",
        },
        "arrays": [
            {"name": name, "shape": list(arr.shape), "role": role}
            for name, arr, role in arrays
        ],
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MODEL_HEADER.pack(_MODEL_MAGIC, _MODEL_VERSION, 0, len(blob)))
        fh.write(blob)
        for _, arr, _ in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_model(path) -> Classifier:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _MODEL_HEADER.size:
        raise FormatError("model file too short for header")
    magic, version, _, meta_len = _MODEL_HEADER.unpack_from(raw, 0)
    if magic != _MODEL_MAGIC:
        raise FormatError(f"bad model magic {magic!r}")
    if version != _MODEL_VERSION:
        raise FormatError(f"unsupported model version {version}")
    offset = _MODEL_HEADER.size
    if len(raw) < offset + meta_len:
        raise FormatError("model file truncated inside header")
    try:
        meta = json.loads(raw[offset : offset + meta_len].decode("utf-8"))
        config = ModelConfig(
            kind=meta["config"]["kind"],
            input_length=meta["config"]["input_length"],
            class_count=meta["config"]["class_count"],
            layer_widths=tuple(meta["config"]["layer_widths"]),
            kernel_size=meta["config"]["kernel_size"],
            seed=meta["config"]["seed"],
            dtype="float32",
        )
    except (KeyError, TypeError, ValueError, ConfigurationError) as exc:
        raise FormatError(f"malformed model header: {exc}") from exc
    model = build_model(config)
    arrays = model.state_arrays()
    declared = meta.get("arrays", [])
    if len(declared) != len(arrays):
        raise FormatError("model header does not match rebuilt architecture")
    offset += meta_len
    for (name, arr, _), spec in zip(arrays, declared):
        if spec.get("name") != name or tuple(spec.get("shape", ())) != arr.shape:
            raise FormatError(f"array mismatch at {name}: header says {spec}")
        nbytes = arr.size * 4
        if len(raw) < offset + nbytes:
            raise FormatError(f"model file truncated inside array {name}")
        values = np.frombuffer(raw[offset : offset + nbytes], dtype="<f4")
        arr[...] = values.reshape(arr.shape)
        offset += nbytes
    if offset != len(raw):
        raise FormatError(f"{len(raw) - offset} trailing bytes after parameters")
    return model
