"""Minimal dense/recurrent neural-network stack with exact reverse-mode gradients."""

from .activations import (
    ACTIVATION_NAMES,
    activation_forward,
    activation_vjp,
    sigmoid,
    softmax,
)
from .gradcheck import finite_diff_grad, relative_error
from .layers import (
    DEFAULT_MERGE,
    MERGE_CONVENTIONS,
    Attention,
    AttentionOutput,
    BiGru,
    Dense,
    GruCell,
    GruLayer,
    GruStepState,
    attention,
    bigru_forward,
    dense_forward,
    gru_cell_step,
    gru_layer_forward,
)
from .losses import (
    LossWeights,
    clamp_warnings,
    cross_entropy_loss,
    mse_grad,
    mse_loss,
    multitask_loss,
)
from .optim import Adam
from .params import (
    ModelFormatError,
    Param,
    assign_params,
    glorot_uniform,
    load_params,
    save_params,
)

__all__ = [
    "ACTIVATION_NAMES",
    "Adam",
    "Attention",
    "AttentionOutput",
    "BiGru",
    "DEFAULT_MERGE",
    "Dense",
    "GruCell",
    "GruLayer",
    "GruStepState",
    "LossWeights",
    "MERGE_CONVENTIONS",
    "ModelFormatError",
    "Param",
    "activation_forward",
    "activation_vjp",
    "assign_params",
    "attention",
    "bigru_forward",
    "clamp_warnings",
    "cross_entropy_loss",
    "dense_forward",
    "finite_diff_grad",
    "glorot_uniform",
    "gru_cell_step",
    "gru_layer_forward",
    "load_params",
    "mse_grad",
    "mse_loss",
    "multitask_loss",
    "relative_error",
    "save_params",
    "sigmoid",
    "softmax",
]
