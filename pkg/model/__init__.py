from model.ingnn import INGNN, IngnnConfig, ModelParams, fusion_weights, importance_scores
from model.layers import Adam, AdamState, BatchNorm, Dropout, Linear, Parameter, ReLU, adam_step, softmax_cross_entropy
from model.mlp import MLP

__all__ = [
    "Adam",
    "AdamState",
    "BatchNorm",
    "Dropout",
    "INGNN",
    "IngnnConfig",
    "Linear",
    "MLP",
    "ModelParams",
    "Parameter",
    "ReLU",
    "adam_step",
    "fusion_weights",
    "importance_scores",
    "softmax_cross_entropy",
]
