"""Dynamic gated GRU (D-GRU): top-A sparse recurrent updates for speech enhancement."""

from dgrnn.dgru import (
    SelectGateConfig,
    StepStats,
    dgru_backward,
    dgru_run,
    dgru_step,
    select_threshold,
    select_top_a,
)
from dgrnn.rnn import GruTape, GruWeights, HiddenState, gru_backward, gru_run, gru_step

__version__ = "0.1.0"

__all__ = [
    "GruTape",
    "GruWeights",
    "HiddenState",
    "SelectGateConfig",
    "StepStats",
    "dgru_backward",
    "dgru_run",
    "dgru_step",
    "gru_backward",
    "gru_run",
    "gru_step",
    "select_threshold",
    "select_top_a",
]
