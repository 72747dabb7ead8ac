from autodiff.tensor import (
    Variable,
    add,
    as_variable,
    clip,
    concat,
    constant,
    elementwise,
    exp,
    is_grad_enabled,
    log,
    matmul,
    max_over_axis,
    mul,
    neg,
    no_grad,
    parameter,
    reduce,
    reduce_max,
    reduce_mean,
    reduce_sum,
    reshape,
    softplus,
    square,
    sub,
    tanh,
)
from autodiff.module import Linear, Module, tile_rows
from autodiff.optim import Adam
from autodiff.gradcheck import check_gradients
