from .tensor import (
    Tensor,
    add,
    as_tensor,
    concat,
    default_dtype,
    exp,
    getitem,
    grad_enabled,
    log,
    log_softmax,
    matmul,
    maximum,
    mean,
    mul,
    no_grad,
    precision,
    relu,
    reshape,
    sigmoid,
    softmax_array,
    softplus,
    stable_sigmoid,
    sub,
    sum_,
    tensor,
    transpose,
)
from .functional import conv2d, conv_transpose2d, gdn, reflect_pad_to_even
from .nn import GDN, Conv2d, ConvTranspose2d, Linear, Module
from .optim import SGD, Adam, NonFiniteGradientError, OptimizerState, RMSProp, milestone_decay, step_decay
