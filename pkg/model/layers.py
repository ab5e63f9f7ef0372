"""
Trainable-layer kit with explicit forward/backward passes and the Adam optimizer.

Each layer caches what its backward pass needs during forward; calling
backward without a matching forward raises. Parameter gradients accumulate
into Parameter.grad until zero_grad() is called.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from graph.linalg import ShapeError

logger = logging.getLogger(__name__)

# --- Configuration ---
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
MODES = ("train", "eval")


class BackwardBeforeForwardError(RuntimeError):
    """backward() was called on a layer with no cached forward pass."""


def _check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return mode


@dataclass(eq=False)
class Parameter:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Linear:
    """y = x @ W, W of shape in×out, no bias."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, name: str = "linear"):
        self.weight = Parameter(name, glorot_uniform(in_features, out_features, rng))
        self._input: Optional[np.ndarray] = None

    @property
    def in_features(self) -> int:
        return self.weight.shape[0]

    @property
    def out_features(self) -> int:
        return self.weight.shape[1]

    def parameters(self) -> List[Parameter]:
        return [self.weight]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"{self.weight.name}: expected (*, {self.in_features}) input, got {x.shape}")
        self._input = x
        return x @ self.weight.value

    def backward(self, grad_out: np.ndarray, accumulate: bool = True, input_grad: bool = True) -> Optional[np.ndarray]:
        if self._input is None:
            raise BackwardBeforeForwardError(f"{self.weight.name}: backward called before forward")
        if grad_out.shape != (self._input.shape[0], self.out_features):
            raise ShapeError(f"{self.weight.name}: gradient shape {grad_out.shape} does not match output")
        if accumulate:
            self.weight.grad += self._input.T @ grad_out
        if not input_grad:
            return None
        return grad_out @ self.weight.value.T


class Dropout:
    """Inverted dropout: survivors are scaled by 1/(1-p); eval mode is the identity."""

    def __init__(self, p: float, rng: np.random.Generator):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
        self.p = p
        self.rng = rng
        self.mode = "train"
        self.last_mask: Optional[np.ndarray] = None
        self._seen_forward = False

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._seen_forward = True
        if self.mode == "eval" or self.p == 0.0:
            self.last_mask = None
            return x
        keep = self.rng.random(x.shape) >= self.p
        self.last_mask = keep.astype(np.float64) / (1.0 - self.p)
        return x * self.last_mask

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if not self._seen_forward:
            raise BackwardBeforeForwardError("dropout: backward called before forward")
        if self.last_mask is None:
            return grad_out
        if grad_out.shape != self.last_mask.shape:
            raise ShapeError(f"dropout: gradient shape {grad_out.shape} does not match mask {self.last_mask.shape}")
        return grad_out * self.last_mask


class ReLU:
    def __init__(self):
        self._mask: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._mask is None:
            raise BackwardBeforeForwardError("relu: backward called before forward")
        if grad_out.shape != self._mask.shape:
            raise ShapeError(f"relu: gradient shape {grad_out.shape} does not match input {self._mask.shape}")
        return np.where(self._mask, grad_out, 0.0)


class BatchNorm:
    """
    Column-wise batch normalization over the rows of an (N, F) input.

    Train mode normalizes with batch statistics (biased variance) and updates
    the running estimates with the unbiased variance; eval mode uses the
    running estimates only, which makes it an affine map.
    """

    def __init__(self, num_features: int, eps: float = BN_EPS, momentum: float = BN_MOMENTUM, name: str = "bn"):
        self.num_features = num_features
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(f"{name}.gamma", np.ones(num_features))
        self.beta = Parameter(f"{name}.beta", np.zeros(num_features))
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)
        self.mode = "train"
        self._cache: Optional[tuple] = None

    def parameters(self) -> List[Parameter]:
        return [self.gamma, self.beta]

    def freeze_stats(self, mean: float | np.ndarray = 0.0, var: float | np.ndarray = 1.0) -> None:
        self.running_mean = np.broadcast_to(np.asarray(mean, dtype=np.float64), (self.num_features,)).copy()
        self.running_var = np.broadcast_to(np.asarray(var, dtype=np.float64), (self.num_features,)).copy()

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.num_features:
            raise ShapeError(f"{self.gamma.name}: expected (*, {self.num_features}) input, got {x.shape}")
        if self.mode == "train":
            n = x.shape[0]
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            unbiased = var * n / (n - 1) if n > 1 else var
            self.running_mean = (1.0 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1.0 - self.momentum) * self.running_var + self.momentum * unbiased
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = (x - mean) * inv_std
        self._cache = (self.mode, x_hat, inv_std)
        return self.gamma.value * x_hat + self.beta.value

    def backward(self, grad_out: np.ndarray, accumulate: bool = True) -> np.ndarray:
        if self._cache is None:
            raise BackwardBeforeForwardError(f"{self.gamma.name}: backward called before forward")
        mode, x_hat, inv_std = self._cache
        if grad_out.shape != x_hat.shape:
            raise ShapeError(f"{self.gamma.name}: gradient shape {grad_out.shape} does not match {x_hat.shape}")
        if accumulate:
            self.gamma.grad += (grad_out * x_hat).sum(axis=0)
            self.beta.grad += grad_out.sum(axis=0)
        g = grad_out * self.gamma.value
        if mode == "eval":
            return g * inv_std
        n = grad_out.shape[0]
        return (inv_std / n) * (n * g - g.sum(axis=0) - x_hat * (g * x_hat).sum(axis=0))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Mean negative log-likelihood over the masked rows and its gradient with
    respect to the full logits matrix (zero outside the mask).
    """
    mask = np.asarray(mask, dtype=np.int64)
    if mask.size == 0:
        raise ValueError("softmax_cross_entropy needs a non-empty mask")
    if mask.min() < 0 or mask.max() >= logits.shape[0]:
        raise IndexError(f"mask index out of range [0, {logits.shape[0]})")
    rows = logits[mask]
    target = np.asarray(labels)[mask]
    shifted = rows - rows.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted[np.arange(mask.size), target] - log_z
    loss = float(-log_p.mean())

    probs = np.exp(shifted - log_z[:, None])
    probs[np.arange(mask.size), target] -= 1.0
    grad = np.zeros_like(logits)
    np.add.at(grad, mask, probs / mask.size)
    return loss, grad


@dataclass
class AdamState:
    lr: float
    weight_decay: float = 0.0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: Sequence[Parameter]) -> None:
    """
    One bias-corrected Adam update in place. Weight decay is classic L2:
    grad + weight_decay * param enters the moment estimates.
    """
    state.step += 1
    t = state.step
    for p in params:
        g = p.grad + state.weight_decay * p.value if state.weight_decay else p.grad
        m = state.first_moment.setdefault(p.name, np.zeros_like(p.value))
        v = state.second_moment.setdefault(p.name, np.zeros_like(p.value))
        if m.shape != p.value.shape:
            raise ShapeError(f"adam: moment shape {m.shape} does not match parameter {p.name} {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p.value -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


class Adam:
    """Optimizer wrapper binding an AdamState to a fixed parameter list."""

    def __init__(self, params: Iterable[Parameter], lr: float, weight_decay: float = 0.0):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError(f"adam: duplicate parameter names {names}")
        self.state = AdamState(lr=lr, weight_decay=weight_decay)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        adam_step(self.state, self.params)
