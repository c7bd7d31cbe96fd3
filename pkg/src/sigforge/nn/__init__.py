from .layers import (
    batchnorm_backward,
    batchnorm_forward,
    conv1d_backward,
    conv1d_forward,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    lstm_backward,
    lstm_forward,
    relu_backward,
    relu_forward,
    sigmoid,
    sigmoid_bce,
)
from .model import ArchConfig, ModelParams, init_params, loss_and_grads, model_forward, model_logits, param_shapes
from .optim import Hyper, TrainState, adam_step
from .train import History, train_model
from .io import load_params, save_params
