from .model import LOSSES, NetConfig, Network, ShapeError, count_parameters, l1_loss, l2_loss
from .optim import SGD, NonFiniteGradientError, sgd_step
from .weights import ConfigMismatchError, TruncatedWeightsError, WeightFileError, load_weights, save_weights

__all__ = [
    "LOSSES",
    "NetConfig",
    "Network",
    "ShapeError",
    "count_parameters",
    "l1_loss",
    "l2_loss",
    "SGD",
    "NonFiniteGradientError",
    "sgd_step",
    "ConfigMismatchError",
    "TruncatedWeightsError",
    "WeightFileError",
    "load_weights",
    "save_weights",
]
