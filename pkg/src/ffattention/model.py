"""Feed-forward attention regressor with a hand-derived backward pass.

Per time step ``h_t = lrelu(W_xh x_t + b_xh)``. The sequence is pooled into a
context vector ``c`` either by softmax attention over
``e_t = tanh(W_hc h_t + b_hc)`` or by a plain mean over time, then
``s = lrelu(W_cs c + b_cs)`` and ``y = lrelu(W_sy s + b_sy)``.
"""
from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .numeric import ShapeError, lrelu, lrelu_grad

INPUT_WIDTH = 2

PARAM_NAMES = ("W_xh", "b_xh", "W_hc", "b_hc", "W_cs", "b_cs", "W_sy", "b_sy")
ATTENTION_ONLY = ("W_hc", "b_hc")


class PoolingMode(str, enum.Enum):
    ATTENTION = "attention"
    MEAN = "mean"


def param_shapes(D: int) -> dict:
    return {
        "W_xh": (D, INPUT_WIDTH),
        "b_xh": (D,),
        "W_hc": (1, D),
        "b_hc": (),
        "W_cs": (D, D),
        "b_cs": (D,),
        "W_sy": (1, D),
        "b_sy": (),
    }


@dataclass
class ModelParams:
    W_xh: np.ndarray
    b_xh: np.ndarray
    W_hc: np.ndarray
    b_hc: np.ndarray
    W_cs: np.ndarray
    b_cs: np.ndarray
    W_sy: np.ndarray
    b_sy: np.ndarray
    pooling: PoolingMode = PoolingMode.ATTENTION

    def __post_init__(self):
        self.pooling = PoolingMode(self.pooling)
        for name in PARAM_NAMES:
            setattr(self, name, np.array(getattr(self, name), dtype=np.float64))
        expected = param_shapes(self.D)
        for name in PARAM_NAMES:
            got = getattr(self, name).shape
            if got != expected[name]:
                raise ShapeError(f"{name} has shape {got}, expected {expected[name]} for D={self.D}")

    @property
    def D(self) -> int:
        if self.b_xh.ndim != 1:
            raise ShapeError(f"b_xh must be a vector, got shape {self.b_xh.shape}")
        return self.b_xh.shape[0]

    def tensors(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def with_tensors(self, **tensors) -> "ModelParams":
        return replace(self, **tensors)

    def copy(self) -> "ModelParams":
        return replace(self, **{k: v.copy() for k, v in self.tensors().items()})

    @classmethod
    def zeros(cls, D: int, pooling=PoolingMode.ATTENTION) -> "ModelParams":
        return cls(**{k: np.zeros(s) for k, s in param_shapes(D).items()}, pooling=pooling)


@dataclass(frozen=True)
class SequenceBatch:
    """``inputs`` is (B, T, 2): channel 0 holds values, channel 1 markers."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        targets = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        if inputs.ndim != 3 or inputs.shape[2] != INPUT_WIDTH:
            raise ShapeError(f"inputs must be (B, T, {INPUT_WIDTH}), got {inputs.shape}")
        if inputs.shape[0] != targets.shape[0]:
            raise ShapeError(f"{inputs.shape[0]} sequences but {targets.shape[0]} targets")
        if inputs.shape[1] < 1:
            raise ShapeError("sequences need at least one time step")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)

    @property
    def B(self) -> int:
        return self.inputs.shape[0]

    @property
    def T(self) -> int:
        return self.inputs.shape[1]

    def __len__(self):
        return self.B

    def subset(self, idx) -> "SequenceBatch":
        return SequenceBatch(self.inputs[idx], self.targets[idx])

    def permute_time(self, perm) -> "SequenceBatch":
        return SequenceBatch(self.inputs[:, np.asarray(perm)], self.targets)


@dataclass
class ForwardCache:
    H: np.ndarray  # (B, T, D)
    E: np.ndarray  # (B, T)
    Alpha: np.ndarray  # (B, T)
    C: np.ndarray  # (B, D)
    S: np.ndarray  # (B, D)
    Y: np.ndarray  # (B,)
    pooling: PoolingMode = PoolingMode.ATTENTION
    key: tuple = field(default=(), repr=False, compare=False)


Gradients = dict


def _cache_key(params: ModelParams, batch: SequenceBatch) -> tuple:
    return (id(params), params.pooling, id(batch.inputs), batch.inputs.shape)


def _forward_chunk(params: ModelParams, inputs: np.ndarray):
    B, T, _ = inputs.shape
    D = params.D
    H = np.empty((B, T, D))
    E = np.empty((B, T))
    Alpha = np.empty((B, T))
    C = np.empty((B, D))
    attention = params.pooling is PoolingMode.ATTENTION
    _kernels.pool_forward(inputs, params.W_xh, params.b_xh, params.W_hc[0],
                          float(params.b_hc), attention, H, E, Alpha, C)
    S = lrelu(C @ params.W_cs.T + params.b_cs)
    Y = lrelu(S @ params.W_sy[0] + params.b_sy)
    return H, E, Alpha, C, S, Y


def forward(params: ModelParams, batch: SequenceBatch, workers: int = 1) -> ForwardCache:
    """Run the network on every sequence of ``batch``.

    With ``workers > 1`` the batch is split into contiguous chunks evaluated on
    a thread pool and reassembled in batch order.
    """
    if batch.inputs.shape[2] != INPUT_WIDTH:
        raise ShapeError(f"input width {batch.inputs.shape[2]} != {INPUT_WIDTH}")
    if workers > 1 and batch.B > 1:
        chunks = np.array_split(np.arange(batch.B), min(workers, batch.B))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda ix: _forward_chunk(params, batch.inputs[ix]), chunks))
        arrays = [np.concatenate(p, axis=0) for p in zip(*parts)]
    else:
        arrays = _forward_chunk(params, batch.inputs)
    return ForwardCache(*arrays, pooling=params.pooling, key=_cache_key(params, batch))


def predict(params: ModelParams, batch: SequenceBatch, workers: int = 1) -> np.ndarray:
    return forward(params, batch, workers=workers).Y


def loss(cache: ForwardCache, targets) -> float:
    """Mean over the batch of squared errors."""
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if targets.shape != cache.Y.shape:
        raise ShapeError(f"{cache.Y.shape[0]} outputs but {targets.shape[0]} targets")
    return float(np.mean((cache.Y - targets) ** 2))


def _backward_chunk(params, inputs, targets, H, E, Alpha, C, S, Y, scale):
    dz_y = scale * (Y - targets) * lrelu_grad(Y)  # (B,)
    g = {"W_sy": (dz_y @ S)[None, :], "b_sy": np.array(dz_y.sum())}
    dz_s = np.outer(dz_y, params.W_sy[0]) * lrelu_grad(S)  # (B, D)
    g["W_cs"] = dz_s.T @ C
    g["b_cs"] = dz_s.sum(axis=0)
    dC = dz_s @ params.W_cs  # (B, D)

    D = params.D
    g["W_xh"] = np.zeros((D, INPUT_WIDTH))
    g["b_xh"] = np.zeros(D)
    w_hc = np.zeros(D)
    attention = params.pooling is PoolingMode.ATTENTION
    b_hc = _kernels.pool_backward(inputs, H, E, Alpha, dC, params.W_hc[0], attention,
                                  g["W_xh"], g["b_xh"], w_hc)
    g["W_hc"] = w_hc[None, :]
    g["b_hc"] = np.array(b_hc)
    return g


def backward(params: ModelParams, batch: SequenceBatch, cache: ForwardCache,
             workers: int = 1) -> Gradients:
    """Exact gradient of ``loss(cache, batch.targets)`` for every tensor."""
    if cache.key and cache.key != _cache_key(params, batch):
        raise ValueError("cache was not produced by forward() on these params and batch")
    if cache.pooling is not params.pooling or cache.Y.shape[0] != batch.B:
        raise ValueError("cache does not match params/batch")
    scale = 2.0 / batch.B
    arrays = (cache.H, cache.E, cache.Alpha, cache.C, cache.S, cache.Y)
    if workers > 1 and batch.B > 1:
        chunks = np.array_split(np.arange(batch.B), min(workers, batch.B))

        def run(ix):
            return _backward_chunk(params, batch.inputs[ix], batch.targets[ix],
                                   *(a[ix] for a in arrays), scale)

        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, chunks))
        grads = parts[0]
        for part in parts[1:]:
            grads = {k: grads[k] + part[k] for k in PARAM_NAMES}
    else:
        grads = _backward_chunk(params, batch.inputs, batch.targets, *arrays, scale)
    return {k: grads[k] for k in PARAM_NAMES}


def param_count(params: ModelParams) -> int:
    names = PARAM_NAMES
    if params.pooling is PoolingMode.MEAN:
        names = [n for n in names if n not in ATTENTION_ONLY]
    return sum(getattr(params, n).size for n in names)
