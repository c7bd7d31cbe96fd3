from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import DegenerateLabels, ShapeMismatch
from .model import ArchConfig, ModelParams, init_params, loss_and_grads, model_logits
from .layers import sigmoid_bce
from .optim import Hyper, TrainState, adam_step


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1


def eval_loss(params: ModelParams, x: np.ndarray, y: np.ndarray) -> float:
    _, losses, _ = sigmoid_bce(model_logits(params, x), y)
    return float(np.mean(losses))


def train_model(x: np.ndarray, y: np.ndarray, arch: ArchConfig, seed: int,
                val: tuple[np.ndarray, np.ndarray] | None = None,
                hyper: Hyper = Hyper()) -> tuple[ModelParams, History]:
    """Mini-batch Adam training of a freshly initialised model.

    Returns the parameters with the lowest validation loss when ``val`` is
    given, otherwise those after the last epoch.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != y.shape[0] or x.shape[1] != arch.input_len:
        raise ShapeMismatch(f"training data x{x.shape} y{y.shape} for input_len {arch.input_len}")
    if np.unique(y).size < 2:
        raise DegenerateLabels("training set needs both genuine and forgery examples")
    init_seq, shuffle_seq, drop_seq = np.random.SeedSequence(seed).spawn(3)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    drop_rng = np.random.default_rng(drop_seq)
    state = TrainState.fresh(init_params(arch, init_seq), hyper, seed)
    hist = History()
    best = None
    best_loss = np.inf
    n = x.shape[0]
    for epoch in range(hyper.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            loss, grads, bn_state = loss_and_grads(state.params, x[idx], y[idx], drop_rng)
            state = adam_step(state, grads)
            state = replace(state, params=state.params.with_state(bn_state))
            total += loss * idx.size
        hist.train_loss.append(total / n)
        if val is not None:
            vl = eval_loss(state.params, *val)
            hist.val_loss.append(vl)
            if vl < best_loss:
                best_loss, best, hist.best_epoch = vl, state.params.copy(), epoch
    if best is None:
        best, hist.best_epoch = state.params, hyper.epochs - 1
    return best, hist
