from xmetra.autodiff.tensor import (
    DTYPE,
    Tape,
    Tensor,
    active_tape,
    add,
    as_tensor,
    backward,
    concat,
    embedding,
    log_softmax,
    logsumexp,
    matmul,
    mean,
    mul,
    nll_pick,
    record,
    relu,
    reshape,
    slice_axis,
    sub,
    sum,
    tanh,
    value_and_grad,
)
from xmetra.autodiff.optim import (
    OptimizerKind,
    OptimizerState,
    adam_step,
    clone_state,
    make_state,
    optimizer_step,
    sgd_step,
    state_arrays,
)
from xmetra.autodiff.gradcheck import GradCheckReport, finite_difference_check, relative_error

__all__ = [
    "DTYPE", "Tape", "Tensor", "active_tape", "add", "as_tensor", "backward", "concat",
    "embedding", "log_softmax", "logsumexp", "matmul", "mean", "mul", "nll_pick", "record",
    "relu", "reshape", "slice_axis", "sub", "sum", "tanh", "value_and_grad",
    "OptimizerKind", "OptimizerState", "adam_step", "clone_state", "make_state",
    "optimizer_step", "sgd_step", "state_arrays",
    "GradCheckReport", "finite_difference_check", "relative_error",
]
