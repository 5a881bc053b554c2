"""MLP, 1-D CNN and stacked LSTM regressors with hand-written backpropagation.

Everything runs in float64. Networks are plain dicts of named arrays plus a
:class:`NetConfig`; :func:`forward` returns predictions and a cache that
:func:`backward` consumes. Sequence models read a flat feature vector as
``(timesteps, n_channels)`` in row-major order.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

logger = logging.getLogger(__name__)

ARCHITECTURES = ("mlp", "cnn", "lstm")


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class NetConfig:
    architecture: str = "mlp"
    hidden: tuple[int, ...] = (256, 128, 64)    # MLP widths
    conv_channels: tuple[int, ...] = (16, 32)
    kernel_size: int = 12
    conv_stride: int = 1
    pool_size: int = 2
    lstm_hidden: int = 64
    lstm_layers: int = 3
    n_channels: int = 1
    activation: str = "relu"
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(ACTIVATIONS)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        if self.architecture == "mlp" and not self.hidden:
            raise ValueError("an MLP needs at least one hidden layer")
        if self.architecture == "cnn" and not self.conv_channels:
            raise ValueError("a CNN needs at least one convolution")
        if self.architecture == "lstm" and self.lstm_layers < 1:
            raise ValueError("an LSTM needs at least one layer")
        if min((*self.hidden, *self.conv_channels, self.lstm_hidden, self.kernel_size,
                self.conv_stride, self.pool_size, self.n_channels)) < 1:
            raise ValueError("layer sizes must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"], d["conv_channels"] = list(self.hidden), list(self.conv_channels)
        return d


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 100
    patience: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("learning_rate, batch_size and max_epochs must be positive")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")


@dataclass
class TrainLog:
    initial_loss: float = math.nan
    train_loss: list[float] = field(default_factory=list)
    val_mae: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# activations

def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z, a):
    return (z > 0).astype(z.dtype)


ACTIVATIONS = {
    "relu": (_relu, _relu_grad),
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "identity": (lambda z: z, lambda z, a: np.ones_like(z)),
}


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# ---------------------------------------------------------------------------
# shapes and initialization

def sequence_length(config: NetConfig, input_dim: int) -> int:
    if input_dim % config.n_channels:
        raise ValueError(f"input of {input_dim} features does not split into {config.n_channels} channels")
    return input_dim // config.n_channels


def conv_output_lengths(config: NetConfig, length: int) -> list[tuple[int, int]]:
    """(conv output length, pooled length) per convolution block."""
    out = []
    for _ in config.conv_channels:
        conv_len = (length - config.kernel_size) // config.conv_stride + 1
        if conv_len < 1:
            raise ValueError("sequence too short for the convolution stack")
        length = conv_len // config.pool_size
        if length < 1:
            raise ValueError("sequence too short for the pooling stack")
        out.append((conv_len, length))
    return out


def _uniform(rng, fan_in, shape, gain):
    limit = math.sqrt(gain / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def net_init(config: NetConfig, input_dim: int, seed: int | None = None) -> dict[str, np.ndarray]:
    """Fan-in scaled uniform initialization; biases start at zero.

    Rectifier layers draw from U(-sqrt(6/fan_in), sqrt(6/fan_in)), everything
    else (including the scalar head and LSTM gates) from U(-sqrt(3/fan_in), ...).
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    gain = 6.0 if config.activation == "relu" else 3.0
    p: dict[str, np.ndarray] = {}
    if config.architecture == "mlp":
        fan = input_dim
        for i, width in enumerate(config.hidden):
            p[f"W{i}"] = _uniform(rng, fan, (fan, width), gain)
            p[f"b{i}"] = np.zeros(width)
            fan = width
    elif config.architecture == "cnn":
        length = sequence_length(config, input_dim)
        lengths = conv_output_lengths(config, length)
        c_in = config.n_channels
        for i, c_out in enumerate(config.conv_channels):
            fan_in = c_in * config.kernel_size
            p[f"K{i}"] = _uniform(rng, fan_in, (fan_in, c_out), gain)
            p[f"kb{i}"] = np.zeros(c_out)
            c_in = c_out
        fan = lengths[-1][1] * c_in
    else:
        sequence_length(config, input_dim)
        c_in, H = config.n_channels, config.lstm_hidden
        for i in range(config.lstm_layers):
            p[f"L{i}"] = _uniform(rng, H, (c_in + H, 4 * H), 3.0)
            p[f"lb{i}"] = np.zeros(4 * H)
            c_in = H
        fan = H
    p["W_out"] = _uniform(rng, fan, (fan, 1), 3.0)
    p["b_out"] = np.zeros(1)
    return p


def parameter_count(params: dict[str, np.ndarray]) -> int:
    return int(sum(v.size for v in params.values()))


# ---------------------------------------------------------------------------
# 1-D convolution helpers

def conv1d_valid(x, kernel, stride: int = 1, bias=None) -> np.ndarray:
    """Valid (unpadded) cross-correlation of a 1-D signal with a 1-D kernel."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    out = sliding_window_view(x, len(kernel))[::stride] @ kernel
    return out if bias is None else out + bias


def _im2col(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """(n, L, C) -> (n, L_out, C*k) with columns ordered (channel, tap)."""
    win = sliding_window_view(x, k, axis=1)[:, ::stride]      # (n, L_out, C, k)
    n, lo, c, _ = win.shape
    return win.reshape(n, lo, c * k)


def _col2im(dcols: np.ndarray, length: int, c: int, k: int, stride: int) -> np.ndarray:
    n, lo, _ = dcols.shape
    d4 = dcols.reshape(n, lo, c, k)
    dx = np.zeros((n, length, c))
    for t in range(k):
        dx[:, t:t + stride * (lo - 1) + 1:stride, :] += d4[:, :, :, t]
    return dx


# ---------------------------------------------------------------------------
# forward / backward

def _dropout(a, rate, training, rng):
    if not training or rate == 0.0:
        return a, None
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return a * mask, mask


def forward(config: NetConfig, params: dict, X, training: bool = False, rng=None):
    """Predictions of shape (n,) and the cache needed by :func:`backward`.

    Dropout is inverted (rescaled during training), so evaluation mode is a
    plain deterministic function of the inputs.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be a 2-D (n, features) array")
    act, _ = ACTIVATIONS[config.activation]
    cache: dict = {"X": X}
    if config.architecture == "mlp":
        a = X
        layers = []
        for i in range(len(config.hidden)):
            W = params[f"W{i}"]
            if a.shape[1] != W.shape[0]:
                raise ValueError(f"expected {W.shape[0]} input features, got {a.shape[1]}")
            z = a @ W + params[f"b{i}"]
            h = act(z)
            h_drop, mask = _dropout(h, config.dropout, training, rng)
            layers.append((a, z, h, mask))
            a = h_drop
        cache["layers"] = layers
    elif config.architecture == "cnn":
        n = X.shape[0]
        x = X.reshape(n, sequence_length(config, X.shape[1]), config.n_channels)
        blocks = []
        for i in range(len(config.conv_channels)):
            K, kb = params[f"K{i}"], params[f"kb{i}"]
            length, c_in = x.shape[1], x.shape[2]
            if c_in * config.kernel_size != K.shape[0]:
                raise ValueError("input channels do not match the convolution kernel")
            cols = _im2col(x, config.kernel_size, config.conv_stride)
            z = cols @ K + kb
            h = act(z)
            lp = h.shape[1] // config.pool_size
            if lp < 1:
                raise ValueError("sequence too short for the pooling stack")
            win = h[:, :lp * config.pool_size].reshape(n, lp, config.pool_size, -1)
            arg = win.argmax(axis=2)
            pooled = np.take_along_axis(win, arg[:, :, None, :], axis=2)[:, :, 0, :]
            blocks.append((length, c_in, cols, z, h, arg))
            x = pooled
        a = x.reshape(n, -1)
        if a.shape[1] != params["W_out"].shape[0]:
            raise ValueError("input length does not match the network")
        a, mask = _dropout(a, config.dropout, training, rng)
        cache["blocks"], cache["head_mask"], cache["flat_shape"] = blocks, mask, x.shape
    else:
        n = X.shape[0]
        x = X.reshape(n, sequence_length(config, X.shape[1]), config.n_channels)
        H = config.lstm_hidden
        layers = []
        for i in range(config.lstm_layers):
            Wl, bl = params[f"L{i}"], params[f"lb{i}"]
            T, c_in = x.shape[1], x.shape[2]
            if c_in + H != Wl.shape[0]:
                raise ValueError("input channels do not match the LSTM layer")
            h = np.zeros((n, H))
            c = np.zeros((n, H))
            steps = []
            hs = np.empty((n, T, H))
            for t in range(T):
                xh = np.concatenate([x[:, t, :], h], axis=1)
                z = xh @ Wl + bl
                ig = _sigmoid(z[:, :H])
                fg = _sigmoid(z[:, H:2 * H])
                og = _sigmoid(z[:, 2 * H:3 * H])
                g = np.tanh(z[:, 3 * H:])
                c_prev = c
                c = fg * c_prev + ig * g
                tc = np.tanh(c)
                h = og * tc
                hs[:, t] = h
                steps.append((xh, ig, fg, og, g, c_prev, tc))
            layers.append((c_in, steps))
            x = hs
        a, mask = _dropout(x[:, -1, :], config.dropout, training, rng)
        cache["layers"], cache["head_mask"] = layers, mask
    cache["head_in"] = a
    pred = (a @ params["W_out"] + params["b_out"])[:, 0]
    return pred, cache


def backward(config: NetConfig, params: dict, cache: dict, dpred) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given its derivative w.r.t. the predictions."""
    _, act_grad = ACTIVATIONS[config.activation]
    dpred = np.asarray(dpred, dtype=np.float64).reshape(-1, 1)
    grads: dict[str, np.ndarray] = {}
    a = cache["head_in"]
    grads["W_out"] = a.T @ dpred
    grads["b_out"] = dpred.sum(axis=0)
    da = dpred @ params["W_out"].T

    if config.architecture == "mlp":
        for i in reversed(range(len(config.hidden))):
            a_prev, z, h, mask = cache["layers"][i]
            if mask is not None:
                da = da * mask
            dz = da * act_grad(z, h)
            grads[f"W{i}"] = a_prev.T @ dz
            grads[f"b{i}"] = dz.sum(axis=0)
            da = dz @ params[f"W{i}"].T
    elif config.architecture == "cnn":
        if cache["head_mask"] is not None:
            da = da * cache["head_mask"]
        dx = da.reshape(cache["flat_shape"])
        for i in reversed(range(len(config.conv_channels))):
            length, c_in, cols, z, h, arg = cache["blocks"][i]
            n, lo, c_out = h.shape
            lp = arg.shape[1]
            dwin = np.zeros((n, lp, config.pool_size, c_out))
            np.put_along_axis(dwin, arg[:, :, None, :], dx[:, :, None, :], axis=2)
            dh = np.zeros_like(h)
            dh[:, :lp * config.pool_size] = dwin.reshape(n, lp * config.pool_size, c_out)
            dz = dh * act_grad(z, h)
            K = params[f"K{i}"]
            grads[f"K{i}"] = cols.reshape(-1, cols.shape[2]).T @ dz.reshape(-1, c_out)
            grads[f"kb{i}"] = dz.sum(axis=(0, 1))
            dx = _col2im(dz @ K.T, length, c_in, config.kernel_size, config.conv_stride)
    else:
        if cache["head_mask"] is not None:
            da = da * cache["head_mask"]
        H = config.lstm_hidden
        top_c_in, top_steps = cache["layers"][-1]
        n, T = da.shape[0], len(top_steps)
        dh_seq = np.zeros((n, T, H))
        dh_seq[:, -1] = da
        for i in reversed(range(config.lstm_layers)):
            c_in, steps = cache["layers"][i]
            Wl = params[f"L{i}"]
            dW = np.zeros_like(Wl)
            db = np.zeros(4 * H)
            dx_seq = np.zeros((n, T, c_in))
            dh_next = np.zeros((n, H))
            dc_next = np.zeros((n, H))
            for t in reversed(range(T)):
                xh, ig, fg, og, g, c_prev, tc = steps[t]
                dh = dh_seq[:, t] + dh_next
                do = dh * tc
                dc = dc_next + dh * og * (1.0 - tc * tc)
                dz = np.concatenate([
                    dc * g * ig * (1.0 - ig),
                    dc * c_prev * fg * (1.0 - fg),
                    do * og * (1.0 - og),
                    dc * ig * (1.0 - g * g),
                ], axis=1)
                dc_next = dc * fg
                dW += xh.T @ dz
                db += dz.sum(axis=0)
                dxh = dz @ Wl.T
                dx_seq[:, t] = dxh[:, :c_in]
                dh_next = dxh[:, c_in:]
            grads[f"L{i}"] = dW
            grads[f"lb{i}"] = db
            dh_seq = dx_seq
    return grads


def mse_loss(pred, y, reduction: str = "mean"):
    """Squared error and its derivative w.r.t. ``pred``."""
    r = np.asarray(pred, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    if reduction == "sum":
        return float(r @ r), 2.0 * r
    if reduction == "mean":
        return float(r @ r) / len(r), 2.0 * r / len(r)
    raise ValueError("reduction must be mean or sum")


def loss_and_grad(config: NetConfig, params: dict, X, y, reduction: str = "mean",
                  training: bool = False, rng=None):
    pred, cache = forward(config, params, X, training=training, rng=rng)
    loss, dpred = mse_loss(pred, y, reduction)
    return loss, backward(config, params, cache, dpred)


def predict(config: NetConfig, params: dict, X, batch_size: int = 1024) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if len(X) == 0:
        return np.zeros(0)
    return np.concatenate([forward(config, params, X[i:i + batch_size])[0]
                           for i in range(0, len(X), batch_size)])


# ---------------------------------------------------------------------------
# training

class Adam:
    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def fit(net_config: NetConfig, train_config: TrainConfig, X, y, X_val=None, y_val=None,
        params: dict | None = None):
    """Mini-batch Adam on MSE with early stopping on validation MAE.

    Batches follow the row order of ``X`` (chronological for windowed
    datasets). Training stops once validation MAE has failed to improve for
    more than ``patience`` consecutive epochs; the parameters of the best
    epoch are returned. Without a validation set the training set is used.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X_val is None or len(X_val) == 0:
        X_val, y_val = X, y
    params = net_init(net_config, X.shape[1]) if params is None else copy.deepcopy(params)
    opt = Adam(params, train_config.learning_rate, train_config.beta1, train_config.beta2, train_config.eps)
    rng = np.random.default_rng(train_config.seed)
    log = TrainLog(initial_loss=mse_loss(predict(net_config, params, X), y)[0])

    best_params, best_mae, wait = copy.deepcopy(params), math.inf, 0
    bs = train_config.batch_size
    for epoch in range(train_config.max_epochs):
        total = 0.0
        for start in range(0, len(X), bs):
            xb, yb = X[start:start + bs], y[start:start + bs]
            loss, grads = loss_and_grad(net_config, params, xb, yb, training=True, rng=rng)
            if not math.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
                raise TrainingDivergedError(
                    f"non-finite loss or gradient at epoch {epoch}, batch starting at row {start}; "
                    f"try a smaller learning rate (currently {train_config.learning_rate})")
            opt.step(params, grads)
            total += loss * len(yb)
        log.train_loss.append(total / len(X))
        val_mae = float(np.mean(np.abs(predict(net_config, params, X_val) - y_val)))
        if not math.isfinite(val_mae):
            raise TrainingDivergedError(f"non-finite validation error at epoch {epoch}")
        log.val_mae.append(val_mae)
        if val_mae < best_mae:
            best_mae, wait, log.best_epoch = val_mae, 0, epoch
            best_params = copy.deepcopy(params)
        else:
            wait += 1
            if wait > train_config.patience:
                break
        logger.debug("epoch %d loss %.5f val_mae %.5f", epoch, log.train_loss[-1], val_mae)
    return best_params, log


# ---------------------------------------------------------------------------
# estimator wrapper

_NET_KEYS = ("hidden", "conv_channels", "kernel_size", "conv_stride", "pool_size", "lstm_hidden",
             "lstm_layers", "n_channels", "activation", "dropout", "seed")
_TRAIN_KEYS = ("learning_rate", "batch_size", "max_epochs", "patience", "seed")


class NeuralRegressor:
    """Shared fit/predict/document surface for the three architectures.

    Keyword arguments are split between :class:`NetConfig` and
    :class:`TrainConfig`; ``seed`` feeds both.
    """

    def __init__(self, architecture: str = "mlp", **kwargs):
        unknown = set(kwargs) - set(_NET_KEYS) - set(_TRAIN_KEYS)
        if unknown:
            raise TypeError(f"unknown parameters {sorted(unknown)}")
        self.net_config = NetConfig(architecture=architecture,
                                    **{k: v for k, v in kwargs.items() if k in _NET_KEYS})
        self.train_config = TrainConfig(**{k: v for k, v in kwargs.items() if k in _TRAIN_KEYS})
        self.params_ = None
        self.log_ = None

    @property
    def family(self) -> str:
        return self.net_config.architecture

    def get_params(self) -> dict:
        net = self.net_config.to_dict()
        net.pop("architecture")
        train = asdict(self.train_config)
        return {**{k: net[k] for k in _NET_KEYS},
                **{k: train[k] for k in _TRAIN_KEYS}}

    def fit(self, X, y, X_val=None, y_val=None):
        self.params_, self.log_ = fit(self.net_config, self.train_config, X, y, X_val, y_val)
        return self

    def predict(self, X):
        return predict(self.net_config, self.params_, X)

    def state_dict(self) -> dict:
        return {"params": {k: {"shape": list(v.shape), "data": v.tolist()} for k, v in self.params_.items()},
                "train_log": self.log_.to_dict() if self.log_ else None}

    def load_state(self, state: dict):
        self.params_ = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
                        for k, v in state["params"].items()}
        if state.get("train_log"):
            self.log_ = TrainLog(**state["train_log"])
        return self
