"""Branch network with coarse-to-fine heads and hand-written backprop."""
from cvtnet.vtnet.layers import LayerSpec
from cvtnet.vtnet.losses import coarse_loss, fine_loss, prob_average
from cvtnet.vtnet.net import BranchOutputs, VTNet, VTNetConfig, conv_config, mlp_config
from cvtnet.vtnet.train import TrainPhase, default_phases, evaluate, train

__all__ = [
    "BranchOutputs",
    "LayerSpec",
    "TrainPhase",
    "VTNet",
    "VTNetConfig",
    "coarse_loss",
    "conv_config",
    "default_phases",
    "evaluate",
    "fine_loss",
    "mlp_config",
    "prob_average",
    "train",
]
