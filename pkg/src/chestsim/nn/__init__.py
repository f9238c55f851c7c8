"""Recurrent channel estimator: LSTM core, grid model, training loop."""

from .lstm import (
    LstmCellParams,
    bidirectional_over_axis,
    init_lstm_params,
    lstm_forward,
)
from .model import (
    AUGMENTED_CHANNELS,
    BASE_CHANNELS,
    ModelFormatError,
    RnnEstimatorModel,
    backward,
    build_input_tensor,
    estimate,
    forward,
    forward_batch,
    head_forward,
    init_model,
    inspect_model,
    load_model,
    loss_and_gradients,
    mse_loss,
    save_model,
)
from .train import (
    TrainingConfig,
    TrainingError,
    draw_batch_params,
    sample_scenario_batch,
    train,
)

__all__ = [
    "AUGMENTED_CHANNELS",
    "BASE_CHANNELS",
    "LstmCellParams",
    "ModelFormatError",
    "RnnEstimatorModel",
    "TrainingConfig",
    "TrainingError",
    "backward",
    "bidirectional_over_axis",
    "build_input_tensor",
    "draw_batch_params",
    "estimate",
    "forward",
    "forward_batch",
    "head_forward",
    "init_lstm_params",
    "init_model",
    "inspect_model",
    "load_model",
    "loss_and_gradients",
    "lstm_forward",
    "mse_loss",
    "sample_scenario_batch",
    "save_model",
    "train",
]
