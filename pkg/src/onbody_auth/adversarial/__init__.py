from .equilibrium import (TabularJoint, builtin_joints, gradient_training_vs_oracle,
                          tabular_equilibrium_check)
from .model import DEFAULT_ARCH, AdversarialModel, Architecture, predict_label
from .training import TrainConfig, TrainResult, losses, train

__all__ = [
    "AdversarialModel", "Architecture", "DEFAULT_ARCH", "TabularJoint", "TrainConfig",
    "TrainResult", "builtin_joints", "gradient_training_vs_oracle", "losses", "predict_label",
    "tabular_equilibrium_check", "train",
]
