from .autograd import (PROB_FLOOR, ContractError, Parameter, ShapeError, Tape, Tensor, backward,
                       concat, log, relu, sigmoid, softmax, stop_gradient, using_dtype)
from .layers import MLP, Dense, Module, dense_forward
from .losses import accuracy, cross_entropy_nll, entropy, mse
from .optim import Adam, AdamState, adam_step
from .gradcheck import finite_difference_check, gradcheck

__all__ = [
    "PROB_FLOOR", "ContractError", "Parameter", "ShapeError", "Tape", "Tensor", "backward",
    "concat", "log", "relu", "sigmoid", "softmax", "stop_gradient", "using_dtype",
    "MLP", "Dense", "Module", "dense_forward",
    "accuracy", "cross_entropy_nll", "entropy", "mse",
    "Adam", "AdamState", "adam_step", "finite_difference_check", "gradcheck",
]
