from .checkpoint import load_checkpoint, save_checkpoint
from .layers import (
    ConvLayer,
    DenseStack,
    compile_patterns,
    global_average,
    im2col,
    output_grid,
)
from .optim import Adagrad, AdamW, Optimizer, make_optimizer
from .tensor import (
    NonFiniteError,
    Tensor,
    branch_average_patterns,
    l1_penalty,
    mse_loss,
    patch_matmul,
    set_nan_guard,
    stack_columns,
)

__all__ = [
    "load_checkpoint",
    "save_checkpoint",
    "ConvLayer",
    "compile_patterns",
    "branch_average_patterns",
    "DenseStack",
    "global_average",
    "im2col",
    "output_grid",
    "Adagrad",
    "AdamW",
    "Optimizer",
    "make_optimizer",
    "NonFiniteError",
    "Tensor",
    "l1_penalty",
    "mse_loss",
    "patch_matmul",
    "set_nan_guard",
    "stack_columns",
]
