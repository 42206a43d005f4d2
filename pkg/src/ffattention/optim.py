"""Fan-in Gaussian initialisation and the adam update."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import PARAM_NAMES, ModelParams, PoolingMode, param_shapes
from .numeric import NumericError, Rng, gaussian_matrix

# Counter block per weight matrix within the init stream.
_INIT_BLOCKS = {"W_xh": 0, "W_hc": 1, "W_cs": 2, "W_sy": 3}


def init_params(D: int, pooling: PoolingMode, rng: Rng) -> ModelParams:
    """Weights ~ N(0, 1/N) for an M x N matrix, biases zero.

    Each matrix has its own counter block, so both pooling modes start from
    identical shared weights under the same seed.
    """
    if D < 1:
        raise ValueError(f"D must be >= 1, got {D}")
    tensors = {}
    for name, shape in param_shapes(D).items():
        if name in _INIT_BLOCKS:
            rows, cols = shape
            tensors[name] = gaussian_matrix(rng, rows, cols, 1.0 / np.sqrt(cols),
                                            block=_INIT_BLOCKS[name])
        else:
            tensors[name] = np.zeros(shape)
    return ModelParams(**tensors, pooling=pooling)


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")

    @classmethod
    def fresh(cls, params: ModelParams, lr: float, **kw) -> "AdamState":
        state = cls(lr=lr, **kw)
        for name, value in params.tensors().items():
            state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        return state

    def copy(self) -> "AdamState":
        return AdamState(self.lr, self.beta1, self.beta2, self.epsilon, self.t,
                         {k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()})


def adam_step(params: ModelParams, grads: dict, state: AdamState):
    """Return ``(new_params, new_state)``; inputs are left untouched."""
    for name in PARAM_NAMES:
        if not np.all(np.isfinite(grads[name])):
            raise NumericError(f"non-finite gradient in {name}")
    if not state.m:
        state = AdamState.fresh(params, state.lr, beta1=state.beta1,
                                beta2=state.beta2, epsilon=state.epsilon)
    b1, b2 = state.beta1, state.beta2
    t = state.t + 1
    m, v, updated = {}, {}, {}
    for name in PARAM_NAMES:
        g = np.asarray(grads[name], dtype=np.float64)
        theta = getattr(params, name)
        if g.shape != theta.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {theta.shape}")
        m[name] = b1 * state.m[name] + (1 - b1) * g
        v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = m[name] / (1 - b1 ** t)
        v_hat = v[name] / (1 - b2 ** t)
        updated[name] = theta - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = AdamState(state.lr, b1, b2, state.epsilon, t, m, v)
    return params.with_tensors(**updated), new_state
