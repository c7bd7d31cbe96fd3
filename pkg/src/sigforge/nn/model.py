"""CNN -> LSTM -> MLP verifier over a reduced feature vector.

The K reduced features are read as a length-K sequence with one channel:

    conv1(32, k=5) -> bn1 -> relu -> conv2(64, k=3) -> bn2 -> relu
    -> lstm(32, full sequence) -> flatten(K*32) -> fc1(32) -> relu
    -> fc2(32) -> bn3 -> dropout -> dense(1) -> sigmoid
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ShapeMismatch
from . import layers as L

BN_BLOCKS = ("bn1", "bn2", "bn3")


@dataclass(frozen=True)
class ArchConfig:
    input_len: int
    conv1_filters: int = 32
    conv1_kernel: int = 5
    conv2_filters: int = 64
    conv2_kernel: int = 3
    lstm_hidden: int = 32
    fc1_units: int = 32
    fc2_units: int = 32
    dropout_rate: float = 0.5

    def __post_init__(self):
        if self.conv1_kernel % 2 == 0 or self.conv2_kernel % 2 == 0:
            raise ShapeMismatch("kernel sizes must be odd")
        if self.input_len < self.conv1_kernel:
            raise ShapeMismatch(f"input_len {self.input_len} shorter than conv1 kernel")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @property
    def flatten_width(self) -> int:
        return self.input_len * self.lstm_hidden

    def echo(self) -> dict:
        return asdict(self)


def param_shapes(cfg: ArchConfig) -> dict[str, tuple[int, ...]]:
    """Ordered block shapes; ``*.running_*`` entries are state, not trained."""
    H = cfg.lstm_hidden
    c1, c2 = cfg.conv1_filters, cfg.conv2_filters
    return {
        "conv1.W": (c1, 1, cfg.conv1_kernel), "conv1.b": (c1,),
        "bn1.gamma": (c1,), "bn1.beta": (c1,), "bn1.running_mean": (c1,), "bn1.running_var": (c1,),
        "conv2.W": (c2, c1, cfg.conv2_kernel), "conv2.b": (c2,),
        "bn2.gamma": (c2,), "bn2.beta": (c2,), "bn2.running_mean": (c2,), "bn2.running_var": (c2,),
        "lstm.W": (4 * H, c2), "lstm.U": (4 * H, H), "lstm.b": (4 * H,),
        "fc1.W": (cfg.fc1_units, cfg.flatten_width), "fc1.b": (cfg.fc1_units,),
        "fc2.W": (cfg.fc2_units, cfg.fc1_units), "fc2.b": (cfg.fc2_units,),
        "bn3.gamma": (cfg.fc2_units,), "bn3.beta": (cfg.fc2_units,),
        "bn3.running_mean": (cfg.fc2_units,), "bn3.running_var": (cfg.fc2_units,),
        "out.W": (1, cfg.fc2_units), "out.b": (1,),
    }


def is_state(name: str) -> bool:
    return ".running_" in name


@dataclass(eq=False)
class ModelParams:
    """Weights, biases and batch-norm running statistics of one model."""

    config: ArchConfig
    arrays: dict[str, np.ndarray]

    def __post_init__(self):
        shapes = param_shapes(self.config)
        if list(self.arrays) != list(shapes):
            raise ShapeMismatch("parameter blocks do not match the architecture")
        for name, shape in shapes.items():
            if self.arrays[name].shape != shape:
                raise ShapeMismatch(f"{name}: expected {shape}, got {self.arrays[name].shape}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def trainable(self) -> list[str]:
        return [n for n in self.arrays if not is_state(n)]

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def count(self, include_state: bool = False) -> int:
        return sum(v.size for n, v in self.arrays.items() if include_state or not is_state(n))

    def with_state(self, state: dict[str, np.ndarray]) -> "ModelParams":
        arrays = dict(self.arrays)
        arrays.update(state)
        return ModelParams(self.config, arrays)

    def equals(self, other: "ModelParams") -> bool:
        return (self.config == other.config and list(self.arrays) == list(other.arrays)
                and all(np.array_equal(self.arrays[k], other.arrays[k]) for k in self.arrays))


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


def init_params(cfg: ArchConfig, seed: int | np.random.SeedSequence) -> ModelParams:
    """Seeded fan-scaled uniform init; LSTM forget-gate bias starts at +1."""
    rng = np.random.default_rng(seed)
    shapes = param_shapes(cfg)
    arrays: dict[str, np.ndarray] = {}
    H = cfg.lstm_hidden
    for name, shape in shapes.items():
        block, kind = name.split(".")
        if kind == "W" and block.startswith("conv"):
            f, c, k = shape
            arrays[name] = _glorot(rng, shape, c * k, f * k)
        elif kind in ("W", "U"):
            arrays[name] = _glorot(rng, shape, shape[1], shape[0])
        elif kind in ("gamma", "running_var"):
            arrays[name] = np.ones(shape)
        else:
            arrays[name] = np.zeros(shape)
    arrays["lstm.b"][H:2 * H] = 1.0
    return ModelParams(cfg, arrays)


def _forward(params: ModelParams, x: np.ndarray, train: bool, rng: np.random.Generator | None):
    """Returns logits ``(B,)``, layer caches and updated running statistics."""
    cfg = params.config
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != cfg.input_len:
        raise ShapeMismatch(f"model expects (batch, {cfg.input_len}) input, got {x.shape}")
    p = params.arrays
    caches = {}
    state = {}
    h = x[:, :, None]
    for conv, bn in (("conv1", "bn1"), ("conv2", "bn2")):
        h, caches[conv] = L.conv1d_forward(h, p[f"{conv}.W"], p[f"{conv}.b"])
        h, caches[bn], (rm, rv) = L.batchnorm_forward(
            h, p[f"{bn}.gamma"], p[f"{bn}.beta"], p[f"{bn}.running_mean"], p[f"{bn}.running_var"], train)
        state[f"{bn}.running_mean"], state[f"{bn}.running_var"] = rm, rv
        h, caches[f"relu_{conv}"] = L.relu_forward(h)
    h, caches["lstm"] = L.lstm_forward(h, p["lstm.W"], p["lstm.U"], p["lstm.b"])
    B = h.shape[0]
    h = h.reshape(B, -1)
    h, caches["fc1"] = L.dense_forward(h, p["fc1.W"], p["fc1.b"])
    h, caches["relu_fc1"] = L.relu_forward(h)
    h, caches["fc2"] = L.dense_forward(h, p["fc2.W"], p["fc2.b"])
    h, caches["bn3"], (rm, rv) = L.batchnorm_forward(
        h, p["bn3.gamma"], p["bn3.beta"], p["bn3.running_mean"], p["bn3.running_var"], train)
    state["bn3.running_mean"], state["bn3.running_var"] = rm, rv
    h, caches["dropout"] = L.dropout_forward(h, cfg.dropout_rate, train, rng)
    logits, caches["out"] = L.dense_forward(h, p["out.W"], p["out.b"])
    return logits[:, 0], caches, state


def model_logits(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Eval-mode logits; pure (no state is touched)."""
    return _forward(params, x, False, None)[0]


def model_forward(params: ModelParams, x: np.ndarray, train: bool = False,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """Genuine-class probabilities for a batch (or a single vector)."""
    return L.sigmoid(_forward(params, x, train, rng)[0])


def loss_and_grads(params: ModelParams, x: np.ndarray, y: np.ndarray, rng: np.random.Generator | None,
                   train: bool = True):
    """Mean BCE over the batch and its gradient for every trainable block.

    Returns ``(loss, grads, new_state)`` where ``new_state`` holds updated
    batch-norm running statistics.
    """
    logits, caches, state = _forward(params, x, train, rng)
    y = np.asarray(y, dtype=np.float64)
    _, losses, dlogit = L.sigmoid_bce(logits, y)
    B = logits.shape[0]
    p = params.arrays
    g: dict[str, np.ndarray] = {}
    d = (dlogit / B)[:, None]
    d, g["out.W"], g["out.b"] = L.dense_backward(d, caches["out"])
    d = L.dropout_backward(d, caches["dropout"])
    d, g["bn3.gamma"], g["bn3.beta"] = L.batchnorm_backward(d, caches["bn3"])
    d, g["fc2.W"], g["fc2.b"] = L.dense_backward(d, caches["fc2"])
    d = L.relu_backward(d, caches["relu_fc1"])
    d, g["fc1.W"], g["fc1.b"] = L.dense_backward(d, caches["fc1"])
    d = d.reshape(B, params.config.input_len, params.config.lstm_hidden)
    d, g["lstm.W"], g["lstm.U"], g["lstm.b"] = L.lstm_backward(d, caches["lstm"])
    for conv, bn in (("conv2", "bn2"), ("conv1", "bn1")):
        d = L.relu_backward(d, caches[f"relu_{conv}"])
        d, g[f"{bn}.gamma"], g[f"{bn}.beta"] = L.batchnorm_backward(d, caches[bn])
        d, g[f"{conv}.W"], g[f"{conv}.b"] = L.conv1d_backward(d, caches[conv])
    grads = {n: g[n] for n in params.arrays if not is_state(n)}
    assert all(grads[n].shape == p[n].shape for n in grads)
    return float(np.mean(losses)), grads, state
