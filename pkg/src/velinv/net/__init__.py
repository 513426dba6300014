"""From-scratch convolutional encoder-decoder with exact backpropagation."""

from .model import (
    NetworkConfig,
    NetworkWeights,
    backward_batch,
    backward_pass,
    forward_batch,
    forward_pass,
    init_weights,
)
from .ops import sobel_filter
from .training import (
    SOBEL_REG_DEFAULT,
    AdamState,
    TrainConfig,
    TrainHistory,
    TrainingDivergenceError,
    adam_step,
    evaluate_split,
    load_dataset_arrays,
    load_weights,
    loss,
    loss_and_grad,
    predict_many,
    save_history_csv,
    save_weights,
    train,
)

__all__ = [
    "NetworkConfig",
    "NetworkWeights",
    "AdamState",
    "TrainConfig",
    "TrainHistory",
    "TrainingDivergenceError",
    "SOBEL_REG_DEFAULT",
    "adam_step",
    "backward_batch",
    "backward_pass",
    "evaluate_split",
    "forward_batch",
    "forward_pass",
    "init_weights",
    "load_dataset_arrays",
    "load_weights",
    "loss",
    "loss_and_grad",
    "predict_many",
    "save_history_csv",
    "save_weights",
    "sobel_filter",
    "train",
]
