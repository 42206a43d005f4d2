"""Independent checks on the model's math: central finite differences,
time-permutation invariance and attention/mean pooling equivalence."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import PARAM_NAMES, ModelParams, PoolingMode, SequenceBatch, forward, loss, backward
from .tasks import order_probe

REL_TOL = 1e-5


def relative_error(a, b, floor: float = 1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def central_difference(f, theta: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Gradient of scalar ``f`` at ``theta`` by central differences."""
    if not h > 0:
        raise ValueError("step must be positive")
    theta = np.array(theta)
    if theta.dtype != np.longdouble:
        theta = theta.astype(np.float64)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        orig = theta.flat[i]
        theta.flat[i] = orig + h
        up = f(theta)
        theta.flat[i] = orig - h
        down = f(theta)
        theta.flat[i] = orig
        grad.flat[i] = (up - down) / (2 * h)
    return grad


def batch_loss(params: ModelParams, batch: SequenceBatch) -> float:
    return loss(forward(params, batch), batch.targets)


def reference_loss(tensors: dict, pooling: PoolingMode, inputs, targets):
    """Straight-line forward pass and loss in extended precision.

    Shares no code with the compiled kernels. The extra precision keeps
    central-difference round-off (about eps * |L| / h) well below the gradient
    entries being checked, including the tiny ones behind leaky units.
    """
    f = np.longdouble
    W = {k: np.asarray(v, dtype=f) for k, v in tensors.items()}
    x = np.asarray(inputs, dtype=f)

    def leaky(z):
        return np.maximum(z, f("0.01") * z)

    H = leaky(x @ W["W_xh"].T + W["b_xh"])
    if PoolingMode(pooling) is PoolingMode.ATTENTION:
        e = np.tanh(H @ W["W_hc"][0] + W["b_hc"])
        a = np.exp(e - e.max(axis=1, keepdims=True))
        a /= a.sum(axis=1, keepdims=True)
        C = (a[:, :, None] * H).sum(axis=1)
    else:
        C = H.sum(axis=1) / H.shape[1]
    S = leaky(C @ W["W_cs"].T + W["b_cs"])
    Y = leaky(S @ W["W_sy"][0] + W["b_sy"])
    return ((Y - np.asarray(targets, dtype=f)) ** 2).mean()


def finite_difference_gradient(params: ModelParams, batch: SequenceBatch, h: float = 1e-6) -> dict:
    """Central differences of the extended-precision loss, one coordinate at a time."""
    base = {k: np.asarray(v, dtype=np.longdouble) for k, v in params.tensors().items()}
    grads = {}
    for name in PARAM_NAMES:
        def f(value, name=name):
            return reference_loss({**base, name: value}, params.pooling,
                                  batch.inputs, batch.targets)
        grads[name] = central_difference(f, base[name], h).astype(np.float64)
    return grads


@dataclass
class GradCheckReport:
    max_rel_error: dict = field(default_factory=dict)
    worst: tuple = ("", -1)
    tolerance: float = REL_TOL

    @property
    def worst_error(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst_error < self.tolerance

    def render(self) -> str:
        lines = ["gradient check", f"  tolerance: {self.tolerance:g}"]
        for name, err in self.max_rel_error.items():
            lines.append(f"  {name:5s} max_rel_error: {err:.3e}")
        lines.append(f"  worst: {self.worst[0]}[{self.worst[1]}] = {self.worst_error:.3e}")
        lines.append(f"  result: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def check_gradients(params: ModelParams, batch: SequenceBatch, h: float = 1e-6,
                    tolerance: float = REL_TOL) -> GradCheckReport:
    analytic = backward(params, batch, forward(params, batch))
    numeric = finite_difference_gradient(params, batch, h)
    report = GradCheckReport(tolerance=tolerance)
    worst = -1.0
    for name in PARAM_NAMES:
        err = relative_error(analytic[name], numeric[name]).reshape(-1)
        report.max_rel_error[name] = float(err.max())
        if err.max() > worst:
            worst = float(err.max())
            report.worst = (name, int(err.argmax()))
    return report


def random_params(D: int, pooling: PoolingMode, rng: np.random.Generator, scale: float = 1.0) -> ModelParams:
    """Dense random parameters with nonzero biases, for probing the math."""
    from .model import param_shapes
    return ModelParams(**{k: scale * rng.standard_normal(s) for k, s in param_shapes(D).items()},
                       pooling=pooling)


def _outputs(params: ModelParams, inputs: np.ndarray) -> np.ndarray:
    return forward(params, SequenceBatch(inputs, np.zeros(inputs.shape[0]))).Y


def check_permutation_invariance(params: ModelParams, inputs: np.ndarray, trials: int = 10,
                                 rng: np.random.Generator | None = None,
                                 atol: float = 1e-10) -> bool:
    """Is the output of a (T, 2) sequence unchanged by shuffling its time steps?

    Also runs the X-then-Y / Y-then-X probe pair at the same length.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    T = inputs.shape[0]
    if T < 2:
        return True
    rng = rng if rng is not None else np.random.default_rng(0)
    perms = [np.arange(T)[::-1]] + [rng.permutation(T) for _ in range(trials)]
    stacked = np.stack([inputs] + [inputs[p] for p in perms])
    y = _outputs(params, stacked)
    xy, yx = order_probe(T)
    probe = _outputs(params, np.stack([xy, yx]))
    return bool(np.all(np.abs(y - y[0]) <= atol) and abs(probe[0] - probe[1]) <= atol)


def check_pooling_equivalence(params: ModelParams, batch: SequenceBatch, atol: float = 1e-12) -> bool:
    """With W_hc zeroed, attention pooling must reproduce mean pooling."""
    flat = params.with_tensors(W_hc=np.zeros_like(params.W_hc))
    att = forward(flat.with_tensors(pooling=PoolingMode.ATTENTION), batch).Y
    mean = forward(flat.with_tensors(pooling=PoolingMode.MEAN), batch).Y
    return bool(np.all(np.abs(att - mean) <= atol))


def pooling_difference(params: ModelParams, batch: SequenceBatch) -> float:
    """Largest output gap between the two pooling modes under ``params`` as-is."""
    att = forward(params.with_tensors(pooling=PoolingMode.ATTENTION), batch).Y
    mean = forward(params.with_tensors(pooling=PoolingMode.MEAN), batch).Y
    return float(np.max(np.abs(att - mean)))
