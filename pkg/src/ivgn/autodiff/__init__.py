from ivgn.autodiff.functional import (
    batch_norm,
    concat,
    conv2d,
    cross_entropy,
    dropout,
    embedding_lookup,
    gather_last,
    layer_norm,
    linear,
    log_softmax,
    matmul,
    softmax,
    stack,
)
from ivgn.autodiff.tensor import (
    Tensor,
    get_default_dtype,
    is_grad_enabled,
    no_grad,
    set_default_dtype,
)

__all__ = [
    "Tensor",
    "batch_norm",
    "concat",
    "conv2d",
    "cross_entropy",
    "dropout",
    "embedding_lookup",
    "gather_last",
    "get_default_dtype",
    "is_grad_enabled",
    "layer_norm",
    "linear",
    "log_softmax",
    "matmul",
    "no_grad",
    "set_default_dtype",
    "softmax",
    "stack",
]
