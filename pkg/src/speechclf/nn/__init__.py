from .tensor import (
    NonFiniteValue,
    ShapeMismatch,
    Tensor,
    check_finite,
    cross_entropy,
    embedding,
    gelu,
    relu,
    softmax,
    tanh,
)
from .layers import Dense, Dropout, LayerNorm, MultiHeadAttention, layer_norm
from .optim import (
    AdamState,
    LinearSchedule,
    LrRangeResult,
    NoDescentDetected,
    StepOutOfRange,
    TrainConfig,
    adam_step,
    lr_at,
    lr_range_test,
    minibatch_indices,
    schedule_for,
)
from .checkpoint import (
    CheckpointError,
    assign_state,
    load_checkpoint,
    save_checkpoint,
)

__all__ = [
    "Tensor", "ShapeMismatch", "NonFiniteValue", "check_finite",
    "cross_entropy", "embedding", "relu", "gelu", "tanh", "softmax",
    "Dense", "Dropout", "LayerNorm", "MultiHeadAttention", "layer_norm",
    "AdamState", "adam_step", "TrainConfig", "LinearSchedule", "lr_at",
    "schedule_for", "LrRangeResult", "lr_range_test", "minibatch_indices",
    "StepOutOfRange", "NoDescentDetected",
    "CheckpointError", "save_checkpoint", "load_checkpoint", "assign_state",
]
