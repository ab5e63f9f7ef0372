"""
INGNN forward/backward computation.

Three feature extractors feed an adaptive fusion step and a linear
prediction head:

    H_ego  = Dropout(X) W_ego
    H_agg  = sum_{i=1..s1} Â^i H_ego
    H_strc = sum_{j=1..s2} S_j,   S_1 = BN_1(A W_strc),  S_j = BN_j(A S_{j-1})
    H      = ReLU(Dropout(pi_1 H_ego + pi_2 H_agg + pi_3 H_strc)),  pi = softmax(p)
    logits = H W_pred

The structure branch right-multiplies by W_strc before the BatchNorm chain so
no N×N product is ever formed; the literal N×N chain is available for small
graphs via strc_mode="literal". Its normalization runs over N columns instead
of d, so the two modes are not numerically equivalent.

With ego disabled, agg projects the input through its own W_agg, so a disabled
branch never receives gradient.

The backward pass is hand-composed for this fixed topology. `wrt` selects the
parameter group that receives gradients: "weights" (W matrices and BatchNorm
affine terms), "fusion" (the three fusion logits) or "all".
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from graph.graph_core import Graph, normalized_adjacency
from graph.linalg import ShapeError, mean_abs, spmm
from model.layers import BatchNorm, Dropout, Linear, Parameter, ReLU, softmax

logger = logging.getLogger(__name__)

# --- Configuration ---
BRANCHES = ("ego", "agg", "strc")
FUSION_MODES = ("adaptive", "equal_sum", "concat")
STRC_MODES = ("factored", "literal")
GRAD_TARGETS = ("weights", "fusion", "all")
LITERAL_STRC_MAX_NODES = 512


@dataclass
class IngnnConfig:
    hidden: int = 64
    prop_steps: int = 2
    adj_powers: int = 1
    dropout: float = 0.5
    row_normalize_features: bool = False
    fusion_mode: str = "adaptive"
    disable: Tuple[str, ...] = ()
    self_loops: bool = False
    strc_mode: str = "factored"

    def __post_init__(self):
        if isinstance(self.disable, str):
            self.disable = tuple(s for s in self.disable.replace(",", " ").split() if s)
        unknown = [b for b in self.disable if b not in BRANCHES]
        if unknown:
            raise ValueError(f"unknown branch(es) {unknown}; expected a subset of {BRANCHES}")
        self.disable = tuple(b for b in BRANCHES if b in self.disable)
        if len(self.disable) == len(BRANCHES):
            raise ValueError("at least one of ego/agg/strc must stay enabled")
        if self.hidden < 1 or self.prop_steps < 1 or self.adj_powers < 1:
            raise ValueError("hidden, prop_steps and adj_powers must all be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"fusion_mode must be one of {FUSION_MODES}, got {self.fusion_mode!r}")
        if self.strc_mode not in STRC_MODES:
            raise ValueError(f"strc_mode must be one of {STRC_MODES}, got {self.strc_mode!r}")

    @property
    def enabled(self) -> Tuple[str, ...]:
        return tuple(b for b in BRANCHES if b not in self.disable)

    @property
    def separate_agg_projection(self) -> bool:
        """agg projects X through its own W_agg when ego is switched off, so W_ego stays untouched."""
        return "ego" in self.disable and "agg" not in self.disable

    def to_dict(self) -> dict:
        d = asdict(self)
        d["disable"] = list(self.disable)
        return d


def preprocess_features(x: np.ndarray, row_normalize: bool) -> np.ndarray:
    """Row-wise L1 normalization when requested; all-zero rows are left as is."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if not row_normalize:
        return x
    norms = np.abs(x).sum(axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return x / norms


def fusion_weights(logits: np.ndarray, enabled: Sequence[str], fusion_mode: str = "adaptive") -> np.ndarray:
    """
    pi over (ego, agg, strc). Disabled branches are left out of the softmax and
    get weight 0; equal_sum and concat use uniform weights over enabled branches.
    """
    mask = np.array([b in enabled for b in BRANCHES])
    pi = np.zeros(len(BRANCHES))
    if fusion_mode == "adaptive":
        pi[mask] = softmax(np.asarray(logits, dtype=np.float64)[mask].reshape(1, -1)).ravel()
    else:
        pi[mask] = 1.0 / mask.sum()
    return pi


def extract_agg(a_hat: sp.csr_array, h_ego: np.ndarray, prop_steps: int) -> np.ndarray:
    """sum_{i=1..s1} Â^i H_ego by repeated sparse-dense products."""
    h = h_ego
    total = np.zeros_like(h_ego)
    for _ in range(prop_steps):
        h = spmm(a_hat, h)
        total += h
    return total


def importance_scores(h_ego: np.ndarray, h_agg: np.ndarray, h_strc: np.ndarray, pi: np.ndarray) -> Tuple[float, float, float]:
    """
    Share of each feature in the fused representation, pi_s <H_s> normalized to
    sum to 1, where <.> is the mean absolute entry. All NaN when every term is 0.
    """
    terms = np.array([pi[0] * mean_abs(h_ego), pi[1] * mean_abs(h_agg), pi[2] * mean_abs(h_strc)])
    total = terms.sum()
    if total == 0:
        warnings.warn("importance scores are undefined: every fused feature is zero", RuntimeWarning)
        return (float("nan"),) * 3
    return tuple(float(t) for t in terms / total)


@dataclass(eq=False)
class ModelParams:
    w_ego: Linear
    w_strc: Linear
    w_pred: Linear
    bn_chain: List[BatchNorm]
    fusion_logits: Parameter
    w_agg: Optional[Linear] = None

    @classmethod
    def initialize(cls, config: IngnnConfig, num_nodes: int, num_features: int, num_classes: int,
                   rng: np.random.Generator) -> "ModelParams":
        d = config.hidden
        bn_width = num_nodes if config.strc_mode == "literal" else d
        pred_in = d * len(config.enabled) if config.fusion_mode == "concat" else d
        return cls(
            w_ego=Linear(num_features, d, rng, name="w_ego"),
            w_strc=Linear(num_nodes, d, rng, name="w_strc"),
            w_pred=Linear(pred_in, num_classes, rng, name="w_pred"),
            bn_chain=[BatchNorm(bn_width, name=f"bn{j}") for j in range(config.adj_powers)],
            fusion_logits=Parameter("fusion_logits", np.zeros(len(BRANCHES))),
            w_agg=Linear(num_features, d, rng, name="w_agg") if config.separate_agg_projection else None,
        )

    def weight_parameters(self) -> List[Parameter]:
        params = [self.w_ego.weight, self.w_strc.weight, self.w_pred.weight]
        if self.w_agg is not None:
            params.append(self.w_agg.weight)
        for bn in self.bn_chain:
            params.extend(bn.parameters())
        return params

    def fusion_parameters(self) -> List[Parameter]:
        return [self.fusion_logits]

    def all_parameters(self) -> List[Parameter]:
        return self.weight_parameters() + self.fusion_parameters()

    def zero_grad(self) -> None:
        for p in self.all_parameters():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {p.name: p.value.copy() for p in self.all_parameters()}
        for j, bn in enumerate(self.bn_chain):
            state[f"bn{j}.running_mean"] = bn.running_mean.copy()
            state[f"bn{j}.running_var"] = bn.running_var.copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for p in self.all_parameters():
            if p.name not in state:
                raise KeyError(f"state is missing parameter {p.name}")
            if state[p.name].shape != p.shape:
                raise ShapeError(f"{p.name}: stored shape {state[p.name].shape} != {p.shape}")
            p.value[...] = state[p.name]
        for j, bn in enumerate(self.bn_chain):
            bn.running_mean = np.array(state[f"bn{j}.running_mean"], dtype=np.float64)
            bn.running_var = np.array(state[f"bn{j}.running_var"], dtype=np.float64)


@dataclass
class ForwardCache:
    token: int
    mode: str
    pi: np.ndarray
    h_ego: np.ndarray
    h_agg: np.ndarray
    h_strc: np.ndarray
    fused: np.ndarray
    logits: np.ndarray
    extras: dict = field(default_factory=dict)


class INGNN:
    """Transductive node classifier; one instance per graph (W_strc is N×d)."""

    def __init__(self, config: IngnnConfig, num_nodes: int, num_features: int, num_classes: int,
                 init_rng: np.random.Generator, dropout_rng: np.random.Generator):
        if config.strc_mode == "literal" and num_nodes > LITERAL_STRC_MAX_NODES:
            raise ValueError(
                f"strc_mode='literal' materializes N×N matrices and is limited to "
                f"{LITERAL_STRC_MAX_NODES} nodes (got {num_nodes})"
            )
        self.config = config
        self.num_nodes = num_nodes
        self.num_features = num_features
        self.num_classes = num_classes
        self.params = ModelParams.initialize(config, num_nodes, num_features, num_classes, init_rng)
        self.input_dropout = Dropout(config.dropout, dropout_rng)
        self.fusion_dropout = Dropout(config.dropout, dropout_rng)
        self.relu = ReLU()
        self._operators: Optional[Tuple[Graph, sp.csr_array, sp.csr_array]] = None
        self._features: Optional[Tuple[np.ndarray, np.ndarray]] = None
        self._token = 0

    # --- parameter groups used by the trainer ---
    def weight_parameters(self) -> List[Parameter]:
        return self.params.weight_parameters()

    def fusion_parameters(self) -> List[Parameter]:
        if self.config.fusion_mode != "adaptive":
            return []
        return self.params.fusion_parameters()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return self.params.state_dict()

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        self.params.load_state_dict(state)

    def set_mode(self, mode: str) -> None:
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        self.input_dropout.mode = mode
        self.fusion_dropout.mode = mode
        for bn in self.params.bn_chain:
            bn.mode = mode

    def fusion_weights(self) -> np.ndarray:
        return fusion_weights(self.params.fusion_logits.value, self.config.enabled, self.config.fusion_mode)

    def _graph_operators(self, graph: Graph) -> Tuple[sp.csr_array, sp.csr_array]:
        if self._operators is None or self._operators[0] is not graph:
            if graph.num_nodes != self.num_nodes:
                raise ShapeError(f"model was built for {self.num_nodes} nodes, graph has {graph.num_nodes}")
            a_hat = normalized_adjacency(graph, self_loops=self.config.self_loops)
            self._operators = (graph, a_hat, graph.adjacency())
        return self._operators[1], self._operators[2]

    def _prepared(self, x: np.ndarray) -> np.ndarray:
        if self._features is None or self._features[0] is not x:
            if x.shape != (self.num_nodes, self.num_features):
                raise ShapeError(f"features must be {self.num_nodes}×{self.num_features}, got {x.shape}")
            self._features = (x, preprocess_features(x, self.config.row_normalize_features))
        return self._features[1]

    # --- extractors ---
    def extract_ego(self, x: np.ndarray) -> np.ndarray:
        return self.params.w_ego.forward(self.input_dropout.forward(x))

    def extract_strc(self, adj: sp.csr_array) -> Tuple[np.ndarray, np.ndarray]:
        """Returns H_strc and the summed BatchNorm outputs (needed by the literal backward)."""
        chain = self.params.bn_chain
        if self.config.strc_mode == "literal":
            u = adj.toarray()
        else:
            u = spmm(adj, self.params.w_strc.weight.value)
        total = None
        for j, bn in enumerate(chain):
            if j > 0:
                u = spmm(adj, s)
            s = bn.forward(u)
            total = s.copy() if total is None else total + s
        if self.config.strc_mode == "literal":
            return self.params.w_strc.forward(total), total
        return total, total

    def fuse(self, h_ego: np.ndarray, h_agg: np.ndarray, h_strc: np.ndarray, pi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        branches = dict(zip(BRANCHES, (h_ego, h_agg, h_strc)))
        enabled = self.config.enabled
        if self.config.fusion_mode == "concat":
            z = np.hstack([branches[b] for b in enabled])
        else:
            z = np.zeros_like(h_ego)
            for i, b in enumerate(BRANCHES):
                if b in enabled:
                    z += pi[i] * branches[b]
        return self.relu.forward(self.fusion_dropout.forward(z)), z

    def forward(self, graph: Graph, x: np.ndarray, mode: str = "eval") -> Tuple[np.ndarray, ForwardCache]:
        self.set_mode(mode)
        a_hat, adj = self._graph_operators(graph)
        x = self._prepared(x)
        enabled = self.config.enabled
        n, d = self.num_nodes, self.config.hidden
        zeros = np.zeros((n, d))

        h_ego = self.extract_ego(x) if "ego" in enabled else zeros
        if "agg" not in enabled:
            h_agg = zeros
        elif self.config.separate_agg_projection:
            h_agg = extract_agg(a_hat, self.params.w_agg.forward(self.input_dropout.forward(x)), self.config.prop_steps)
        else:
            h_agg = extract_agg(a_hat, h_ego, self.config.prop_steps)
        if "strc" in enabled:
            h_strc, strc_sum = self.extract_strc(adj)
        else:
            h_strc, strc_sum = zeros, None

        pi = self.fusion_weights()
        h, z = self.fuse(h_ego, h_agg, h_strc, pi)
        logits = self.params.w_pred.forward(h)

        self._token += 1
        cache = ForwardCache(
            token=self._token, mode=mode, pi=pi, h_ego=h_ego, h_agg=h_agg, h_strc=h_strc,
            fused=h, logits=logits, extras={"z": z, "strc_sum": strc_sum},
        )
        return logits, cache

    def backward(self, cache: ForwardCache, grad_logits: np.ndarray, wrt: str = "all") -> None:
        """Accumulate gradients of the loss into the parameter group(s) selected by `wrt`."""
        if wrt not in GRAD_TARGETS:
            raise ValueError(f"wrt must be one of {GRAD_TARGETS}, got {wrt!r}")
        if cache.token != self._token:
            raise RuntimeError("backward called with a stale forward cache")
        want_w = wrt in ("weights", "all")
        want_p = wrt in ("fusion", "all") and self.config.fusion_mode == "adaptive"
        cfg = self.config
        enabled = cfg.enabled

        dh = self.params.w_pred.backward(grad_logits, accumulate=want_w)
        dz = self.fusion_dropout.backward(self.relu.backward(dh))

        grads = {}
        if cfg.fusion_mode == "concat":
            d = cfg.hidden
            for k, b in enumerate(enabled):
                grads[b] = dz[:, k * d:(k + 1) * d]
        else:
            for i, b in enumerate(BRANCHES):
                if b in enabled:
                    grads[b] = cache.pi[i] * dz

        if want_p:
            pi = cache.pi
            feats = (cache.h_ego, cache.h_agg, cache.h_strc)
            mask = np.array([b in enabled for b in BRANCHES])
            dpi = np.array([float((dz * f).sum()) if m else 0.0 for f, m in zip(feats, mask)])
            dlogits = pi * (dpi - float((pi * dpi).sum()))
            dlogits[~mask] = 0.0
            self.params.fusion_logits.grad += dlogits

        if not want_w:
            return

        a_hat, adj = self._graph_operators_cached()
        if "strc" in grads:
            self._strc_backward(adj, grads["strc"])
        d_ego = grads.get("ego")
        if "agg" in grads:
            d_in = extract_agg(a_hat, grads["agg"], cfg.prop_steps)
            if cfg.separate_agg_projection:
                self.params.w_agg.backward(self.input_dropout.backward(d_in), input_grad=False)
            else:
                d_ego = d_in if d_ego is None else d_ego + d_in
        if d_ego is not None:
            self.params.w_ego.backward(self.input_dropout.backward(d_ego), input_grad=False)

    def _graph_operators_cached(self) -> Tuple[sp.csr_array, sp.csr_array]:
        return self._operators[1], self._operators[2]

    def _strc_backward(self, adj: sp.csr_array, d_strc: np.ndarray) -> None:
        # Â and A are symmetric, so A^T g = A g reuses the forward kernel
        chain = self.params.bn_chain
        if self.config.strc_mode == "literal":
            d_total = self.params.w_strc.backward(d_strc)
        else:
            d_total = d_strc
        upstream = None
        for j in reversed(range(len(chain))):
            d_s = d_total if upstream is None else d_total + upstream
            d_u = chain[j].backward(d_s)
            if j > 0 or self.config.strc_mode == "factored":
                upstream = spmm(adj, d_u)
        if self.config.strc_mode == "factored":
            self.params.w_strc.weight.grad += upstream

    def importance(self, cache: ForwardCache) -> Tuple[float, float, float]:
        return importance_scores(cache.h_ego, cache.h_agg, cache.h_strc, cache.pi)
