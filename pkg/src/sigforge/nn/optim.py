"""Adam with bias correction.

Moments are kept as single flat vectors in trainable-block order; the
``adam_m`` / ``adam_v`` dictionaries are shaped views into them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFiniteGradient
from .model import ModelParams


@dataclass(frozen=True)
class Hyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 800


def _views(flat: np.ndarray, params: ModelParams) -> dict[str, np.ndarray]:
    out = {}
    offset = 0
    for name in params.trainable():
        shape = params[name].shape
        size = params[name].size
        out[name] = flat[offset:offset + size].reshape(shape)
        offset += size
    return out


def flatten(arrays: dict[str, np.ndarray], names: list[str]) -> np.ndarray:
    return np.concatenate([arrays[n].reshape(-1) for n in names])


@dataclass(frozen=True, eq=False)
class TrainState:
    params: ModelParams
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    rng_seed: int = 0
    hyper: Hyper = field(default_factory=Hyper)

    @classmethod
    def fresh(cls, params: ModelParams, hyper: Hyper = Hyper(), rng_seed: int = 0) -> "TrainState":
        n = params.count()
        return cls(params, np.zeros(n), np.zeros(n), 0, rng_seed, hyper)

    @property
    def adam_m(self) -> dict[str, np.ndarray]:
        return _views(self.m, self.params)

    @property
    def adam_v(self) -> dict[str, np.ndarray]:
        return _views(self.v, self.params)


def adam_step(state: TrainState, grads: dict[str, np.ndarray]) -> TrainState:
    """One Adam update; returns a new state and leaves ``state`` untouched."""
    names = state.params.trainable()
    g = flatten(grads, names)
    if not np.all(np.isfinite(g)):
        bad = [n for n in names if not np.all(np.isfinite(grads[n]))]
        raise NonFiniteGradient(f"non-finite gradient in {', '.join(bad)}")
    hp = state.hyper
    t = state.step + 1
    bc1 = 1.0 - hp.beta1 ** t
    bc2 = 1.0 - hp.beta2 ** t
    m = hp.beta1 * state.m + (1.0 - hp.beta1) * g
    v = hp.beta2 * state.v + (1.0 - hp.beta2) * (g * g)
    theta = flatten(state.params.arrays, names) - hp.lr * (m / bc1) / (np.sqrt(v / bc2) + hp.eps)
    arrays = dict(state.params.arrays)
    arrays.update(_views(theta, state.params))
    return TrainState(ModelParams(state.params.config, arrays), m, v, t, state.rng_seed, hp)
