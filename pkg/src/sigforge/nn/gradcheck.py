"""Central finite-difference checks for every layer and the whole model.

The error for a block is ``||analytic - numeric|| / (||analytic|| +
||numeric||)``. When both norms are below 1e-8 the block's true gradient is
zero (conv biases feeding a training-mode batch norm) and the absolute
difference is reported instead; ``model_eval`` re-checks those biases with
batch norm on running statistics, where their gradient is non-zero.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import layers as L
from .model import ArchConfig, _forward, init_params, loss_and_grads

H_STEP = 1e-5
VANISHING = 1e-8
KINK_MARGIN = 1e-4
MAX_REDRAWS = 50


def numerical_grad(f: Callable[[], float], arr: np.ndarray, h: float = H_STEP,
                   indices: np.ndarray | None = None) -> np.ndarray:
    """Central differences of ``f`` w.r.t. ``arr`` (perturbed in place, then restored)."""
    flat = arr.reshape(-1)
    idx = np.arange(flat.size) if indices is None else indices
    out = np.empty(idx.size)
    for j, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out[j] = (fp - fm) / (2 * h)
    return out


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    scale = np.linalg.norm(a) + np.linalg.norm(n)
    diff = float(np.linalg.norm(a - n))
    return diff if scale < VANISHING else diff / float(scale)


def _check(f, pairs: dict[str, tuple[np.ndarray, np.ndarray]]) -> dict[str, float]:
    return {name: rel_error(grad, numerical_grad(f, arr)) for name, (arr, grad) in pairs.items()}


def check_conv1d(rng: np.random.Generator) -> dict[str, float]:
    x = rng.standard_normal((2, 9, 3))
    w = rng.standard_normal((4, 3, 5))
    b = rng.standard_normal(4)
    r = rng.standard_normal((2, 9, 4))
    f = lambda: float(np.sum(L.conv1d_forward(x, w, b)[0] * r))
    _, cache = L.conv1d_forward(x, w, b)
    dx, dw, db = L.conv1d_backward(r, cache)
    return _check(f, {"x": (x, dx), "W": (w, dw), "b": (b, db)})


def check_batchnorm(rng: np.random.Generator) -> dict[str, float]:
    x = rng.standard_normal((3, 6, 4)) * 2 + 1
    gamma = rng.standard_normal(4)
    beta = rng.standard_normal(4)
    rm, rv = np.zeros(4), np.ones(4)
    r = rng.standard_normal(x.shape)
    f = lambda: float(np.sum(L.batchnorm_forward(x, gamma, beta, rm, rv, True)[0] * r))
    _, cache, _ = L.batchnorm_forward(x, gamma, beta, rm, rv, True)
    dx, dg, db = L.batchnorm_backward(r, cache)
    return _check(f, {"x": (x, dx), "gamma": (gamma, dg), "beta": (beta, db)})


def check_relu(rng: np.random.Generator) -> dict[str, float]:
    x = rng.standard_normal((4, 5))
    x[np.abs(x) < 1e-4] = 0.5
    r = rng.standard_normal(x.shape)
    f = lambda: float(np.sum(L.relu_forward(x)[0] * r))
    _, mask = L.relu_forward(x)
    return _check(f, {"x": (x, L.relu_backward(r, mask))})


def check_lstm(rng: np.random.Generator) -> dict[str, float]:
    T, C, H = 7, 3, 4
    x = rng.standard_normal((2, T, C))
    w = rng.standard_normal((4 * H, C)) * 0.5
    u = rng.standard_normal((4 * H, H)) * 0.5
    b = rng.standard_normal(4 * H) * 0.5
    r = rng.standard_normal((2, T, H))
    f = lambda: float(np.sum(L.lstm_forward(x, w, u, b)[0] * r))
    _, cache = L.lstm_forward(x, w, u, b)
    dx, dw, du, db = L.lstm_backward(r, cache)
    return _check(f, {"x": (x, dx), "W": (w, dw), "U": (u, du), "b": (b, db)})


def check_dense(rng: np.random.Generator) -> dict[str, float]:
    x = rng.standard_normal((3, 5))
    w = rng.standard_normal((4, 5))
    b = rng.standard_normal(4)
    r = rng.standard_normal((3, 4))
    f = lambda: float(np.sum(L.dense_forward(x, w, b)[0] * r))
    _, cache = L.dense_forward(x, w, b)
    dx, dw, db = L.dense_backward(r, cache)
    return _check(f, {"x": (x, dx), "W": (w, dw), "b": (b, db)})


def check_sigmoid_bce(rng: np.random.Generator) -> dict[str, float]:
    z = rng.standard_normal(8) * 3
    y = (rng.random(8) < 0.5).astype(float)
    f = lambda: float(np.sum(L.sigmoid_bce(z, y)[1]))
    return _check(f, {"logit": (z, L.sigmoid_bce(z, y)[2])})


def check_model(rng: np.random.Generator, input_len: int = 12, batch: int = 4,
                max_entries: int = 48, train: bool = True) -> dict[str, float]:
    """Whole-network check with a frozen dropout mask.

    Up to ``max_entries`` seeded coordinates are probed per parameter block.
    In eval mode the running statistics are randomised so that batch norm is
    a non-trivial affine map. The input is redrawn until every ReLU
    pre-activation clears ``KINK_MARGIN``, so no probe straddles a kink.
    """
    cfg = ArchConfig(input_len=input_len)
    params = init_params(cfg, int(rng.integers(2**32)))
    y = np.array([1.0, 0.0] * (batch // 2) + [1.0] * (batch % 2))
    drop_seed = int(rng.integers(2**32))
    if not train:
        for bn in ("bn1", "bn2", "bn3"):
            rm = params.arrays[f"{bn}.running_mean"]
            rm[:] = rng.standard_normal(rm.shape) * 0.1
            rv = params.arrays[f"{bn}.running_var"]
            rv[:] = rng.uniform(0.5, 2.0, rv.shape)
    for _ in range(MAX_REDRAWS):
        x = rng.standard_normal((batch, input_len))
        caches = _forward(params, x, train, np.random.default_rng(drop_seed))[1]
        margin = min(np.min(np.abs(caches[k])) for k in caches if k.startswith("relu_"))
        if margin > KINK_MARGIN:
            break

    def f():
        return loss_and_grads(params, x, y, np.random.default_rng(drop_seed), train)[0]

    _, grads, _ = loss_and_grads(params, x, y, np.random.default_rng(drop_seed), train)
    out = {}
    for name, g in grads.items():
        arr = params.arrays[name]
        idx = np.sort(rng.choice(arr.size, size=min(max_entries, arr.size), replace=False))
        num = numerical_grad(f, arr, indices=idx)
        out[name] = rel_error(g.reshape(-1)[idx], num)
    return out


LAYER_CHECKS = {
    "conv1d": check_conv1d,
    "batchnorm": check_batchnorm,
    "relu": check_relu,
    "lstm": check_lstm,
    "dense": check_dense,
    "sigmoid_bce": check_sigmoid_bce,
    "model": check_model,
    "model_eval": lambda rng: check_model(rng, train=False),
}


def run_gradcheck(seed: int = 0) -> dict[str, dict[str, float]]:
    """Per-layer, per-block relative errors."""
    results = {}
    for name, check in LAYER_CHECKS.items():
        results[name] = check(np.random.default_rng([seed, len(results)]))
    return results
