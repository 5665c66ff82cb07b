from .layers import (
    BatchNorm2d,
    Conv2d,
    GlobalAvgPool,
    Linear,
    MaxPool2x2,
    Param,
    ReLU,
    softmax_cross_entropy,
)
from .network import (
    BasicBlock,
    NetworkPlan,
    WeightSet,
    backward,
    build_network,
    count_parameters,
    forward,
)
from .training import GradCheckResult, evaluate, gradient_check, lr_at, train_step

__all__ = [
    "BasicBlock",
    "BatchNorm2d",
    "Conv2d",
    "GlobalAvgPool",
    "GradCheckResult",
    "Linear",
    "MaxPool2x2",
    "NetworkPlan",
    "Param",
    "ReLU",
    "WeightSet",
    "backward",
    "build_network",
    "count_parameters",
    "evaluate",
    "forward",
    "gradient_check",
    "lr_at",
    "softmax_cross_entropy",
    "train_step",
]
