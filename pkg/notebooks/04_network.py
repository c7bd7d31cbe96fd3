# 04_network.py
# The CNN -> LSTM -> MLP verifier: gradient checks, parameter count and a toy fit.

# %%
import numpy as np

from sigforge.nn import ArchConfig, Hyper, init_params, model_forward, train_model
from sigforge.nn.gradcheck import run_gradcheck

# %% finite-difference check of every layer and of the whole model
for layer, blocks in run_gradcheck(seed=0).items():
    print(f"{layer:12s} max rel error {max(blocks.values()):.2e}")

# %% parameter budget at K=80
params = init_params(ArchConfig(input_len=80), seed=0)
print("trainable", params.count(), "| with BN running stats", params.count(include_state=True),
      "| flatten width", params.config.flatten_width)

# %% fit a separable toy set (K=12)
rng = np.random.default_rng(0)
y = np.array([1.0, 0.0] * 10)
x = rng.normal(size=(20, 12)) * 0.5 + np.where(y[:, None] > 0, 1.0, -1.0)
model, hist = train_model(x, y, ArchConfig(input_len=12), seed=3, hyper=Hyper(epochs=60))
print("loss epoch 1 %.3f -> epoch 60 %.4f" % (hist.train_loss[0], hist.train_loss[-1]))
print("scores genuine", np.round(model_forward(model, x[y == 1][:3]), 3),
      "forgery", np.round(model_forward(model, x[y == 0][:3]), 3))
