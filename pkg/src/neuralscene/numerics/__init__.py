from .gradcheck import grad_check, numeric_grad, relative_error
from .nn import (ConfigurationError, LstmParams, LstmSpec, MlpSpec, lstm_cell, lstm_init,
                 mlp_forward, mlp_init)
from .optim import OptimizerState, optimizer_step
from .tensor import (NonFiniteError, Tensor, backward, concat, getitem, layer_norm, linear,
                     matmul, mean, minimum, no_grad, relu, reshape, sigmoid, square, stack,
                     tanh, tsum, zero_grad)

__all__ = [
    "ConfigurationError", "LstmParams", "LstmSpec", "MlpSpec", "NonFiniteError",
    "OptimizerState", "Tensor", "backward", "concat", "getitem", "grad_check", "layer_norm",
    "linear", "lstm_cell", "lstm_init", "matmul", "mean", "minimum", "mlp_forward", "mlp_init",
    "no_grad", "numeric_grad", "optimizer_step", "relative_error", "relu", "reshape", "sigmoid",
    "square", "stack", "tanh", "tsum", "zero_grad",
]
