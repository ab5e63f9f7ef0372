"""Feature-only control model: Dropout -> Linear -> ReLU -> Linear."""

from typing import Dict, List, Tuple

import numpy as np

from graph.graph_core import Graph
from model.ingnn import ForwardCache, preprocess_features
from model.layers import Dropout, Linear, Parameter, ReLU


class MLP:
    def __init__(self, num_features: int, hidden: int, num_classes: int, dropout: float,
                 init_rng: np.random.Generator, dropout_rng: np.random.Generator,
                 row_normalize_features: bool = False):
        self.hidden_layer = Linear(num_features, hidden, init_rng, name="mlp_hidden")
        self.output_layer = Linear(hidden, num_classes, init_rng, name="mlp_out")
        self.dropout = Dropout(dropout, dropout_rng)
        self.relu = ReLU()
        self.row_normalize_features = row_normalize_features
        self._token = 0

    def weight_parameters(self) -> List[Parameter]:
        return [self.hidden_layer.weight, self.output_layer.weight]

    def fusion_parameters(self) -> List[Parameter]:
        return []

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.weight_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for p in self.weight_parameters():
            p.value[...] = state[p.name]

    def set_mode(self, mode: str) -> None:
        self.dropout.mode = mode

    def forward(self, graph: Graph, x: np.ndarray, mode: str = "eval") -> Tuple[np.ndarray, ForwardCache]:
        # graph is accepted for interface parity with INGNN and ignored
        self.set_mode(mode)
        x = preprocess_features(x, self.row_normalize_features)
        h = self.relu.forward(self.hidden_layer.forward(self.dropout.forward(x)))
        logits = self.output_layer.forward(h)
        self._token += 1
        empty = np.zeros((0, 0))
        cache = ForwardCache(token=self._token, mode=mode, pi=np.zeros(3), h_ego=h, h_agg=empty,
                             h_strc=empty, fused=h, logits=logits)
        return logits, cache

    def backward(self, cache: ForwardCache, grad_logits: np.ndarray, wrt: str = "weights") -> None:
        if cache.token != self._token:
            raise RuntimeError("backward called with a stale forward cache")
        if wrt == "fusion":
            return
        dh = self.relu.backward(self.output_layer.backward(grad_logits))
        self.hidden_layer.backward(dh, input_grad=False)
