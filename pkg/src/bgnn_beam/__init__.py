"""Size-agnostic bipartite message-passing beamformers for MU-MISO downlinks."""

from .beamcore import BeamFeature, BeamSolution
from .channels import BipartiteChannel, ScenarioConfig
from .errors import (BgnnError, ConfigError, ContractError, ConvergenceError, InfeasibleError,
                     InvalidInstanceError, NumericError, ShapeError, SingularMatrixError)
from .model import BgnnParams, bmp_forward, init_params, load_checkpoint, save_checkpoint
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "BeamFeature", "BeamSolution", "BipartiteChannel", "ScenarioConfig", "BgnnParams",
    "bmp_forward", "init_params", "load_checkpoint", "save_checkpoint", "TrainConfig", "train",
    "BgnnError", "ConfigError", "ContractError", "ConvergenceError", "InfeasibleError",
    "InvalidInstanceError", "NumericError", "ShapeError", "SingularMatrixError",
]
