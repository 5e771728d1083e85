"""Dense-layer primitives for small branching networks.

Everything here is plain float64 numpy: layers, activations, the Gaussian
negative log likelihood, analytic backpropagation through the shared-trunk /
two-branch topology, and a bias-corrected Adam optimizer. All functions are
pure; optimizer state is passed in and returned explicitly, so repeated calls
with identical inputs are bit-identical. Batch reductions use numpy's fixed
summation order, which keeps gradients reproducible run to run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError, NumericError, ShapeError

LOG_2PI = math.log(2.0 * math.pi)

# Above this the linear asymptote of softplus is exact to well below one ulp
# of the result, and exp(x) would start to lose headroom.
_SOFTPLUS_LINEAR_CUTOFF = 30.0


@dataclass
class DenseLayer:
    """One fully connected layer: out = weights @ x + bias.

    weights has shape (d_out, d_in), bias has shape (d_out,).
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError("weights must be 2-D and bias 1-D")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ShapeError(
                f"bias length {self.bias.shape[0]} does not match "
                f"output width {self.weights.shape[0]}"
            )

    @property
    def d_in(self) -> int:
        return self.weights.shape[1]

    @property
    def d_out(self) -> int:
        return self.weights.shape[0]

    @property
    def n_params(self) -> int:
        return self.weights.size + self.bias.size

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.bias.copy())


@dataclass
class ParameterSet:
    """All parameters of a trunk-plus-two-branches network.

    ``trunk`` holds the shared hidden layers. ``mean_branch`` and
    ``std_branch`` each hold that branch's private hidden layers followed by
    its width-1 output head. ``std_floor`` is the softplus shift applied to
    the std head, carried here so that loss and gradient evaluation are
    self-contained.

    Flat layout (for the optimizer and gradient checks): layers in order
    trunk, mean branch, std branch; within a layer the row-major weights
    followed by the bias.
    """

    trunk: list[DenseLayer]
    mean_branch: list[DenseLayer]
    std_branch: list[DenseLayer]
    std_floor: float = 0.001

    def __post_init__(self):
        if not self.trunk:
            raise ShapeError("trunk must contain at least one layer")
        if not self.mean_branch or not self.std_branch:
            raise ShapeError("each branch needs at least its output head")
        for name, branch in (("mean", self.mean_branch), ("std", self.std_branch)):
            if branch[-1].d_out != 1:
                raise ShapeError(f"{name} head must have output width 1")
        trunk_out = self.trunk[-1].d_out
        for branch in (self.mean_branch, self.std_branch):
            if branch[0].d_in != trunk_out:
                raise ShapeError("branch input width does not match trunk output")

    @property
    def layers(self) -> list[DenseLayer]:
        return self.trunk + self.mean_branch + self.std_branch

    @property
    def d_in(self) -> int:
        return self.trunk[0].d_in

    @property
    def flat_len(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    def flatten(self) -> np.ndarray:
        """Serialize all parameters into one float64 vector."""
        parts = []
        for layer in self.layers:
            parts.append(layer.weights.ravel())
            parts.append(layer.bias)
        return np.concatenate(parts)

    def unflatten(self, flat: np.ndarray) -> "ParameterSet":
        """Rebuild a parameter set with this one's layout from a flat vector."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.flat_len,):
            raise ShapeError(f"expected flat vector of length {self.flat_len}, got {flat.shape}")
        offset = 0

        def take(template: list[DenseLayer]) -> list[DenseLayer]:
            nonlocal offset
            out = []
            for layer in template:
                w = flat[offset : offset + layer.weights.size].reshape(layer.weights.shape)
                offset += layer.weights.size
                b = flat[offset : offset + layer.bias.size].copy()
                offset += layer.bias.size
                out.append(DenseLayer(w.copy(), b))
            return out

        return ParameterSet(
            take(self.trunk), take(self.mean_branch), take(self.std_branch), self.std_floor
        )

    def copy(self) -> "ParameterSet":
        return ParameterSet(
            [l.copy() for l in self.trunk],
            [l.copy() for l in self.mean_branch],
            [l.copy() for l in self.std_branch],
            self.std_floor,
        )


@dataclass
class AdamState:
    """Optimizer state for one parameter vector."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def initial(cls, flat_len: int, learning_rate: float = 0.001, **kwargs) -> "AdamState":
        return cls(
            first_moment=np.zeros(flat_len),
            second_moment=np.zeros(flat_len),
            step_count=0,
            learning_rate=learning_rate,
            **kwargs,
        )


def linear_forward(x: np.ndarray, layer: DenseLayer) -> np.ndarray:
    """Affine map of a single input vector through one layer."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (layer.d_in,):
        raise ShapeError(f"input has shape {x.shape}, layer expects ({layer.d_in},)")
    return layer.weights @ x + layer.bias


def relu(x):
    """Elementwise max(0, x)."""
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def softplus(x, shift: float = 0.0):
    """log(1 + exp(x)) + shift, overflow-safe, scalar or elementwise.

    Output is strictly greater than ``shift`` for all finite x.
    """
    x = np.asarray(x, dtype=np.float64)
    big = x > _SOFTPLUS_LINEAR_CUTOFF
    # evaluate each branch only where it is safe
    out = np.where(
        big,
        x + np.log1p(np.exp(np.where(big, -x, 0.0))),
        np.log1p(np.exp(np.where(big, 0.0, x))),
    )
    out = out + shift
    return float(out) if out.ndim == 0 else out


def sigmoid(x):
    """Numerically stable logistic function (derivative of softplus)."""
    x = np.asarray(x, dtype=np.float64)
    pos = x >= 0
    out = np.empty_like(x)
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return float(out) if out.ndim == 0 else out


def nll_gaussian(y: float, mu: float, sigma: float) -> float:
    """Negative log density of N(mu, sigma^2) at y."""
    if sigma <= 0.0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    z = (y - mu) / sigma
    return 0.5 * LOG_2PI + math.log(sigma) + 0.5 * z * z


@dataclass
class ForwardCache:
    """Intermediate activations kept for the backward pass."""

    x: np.ndarray  # (n, d_in)
    trunk_inputs: list[np.ndarray] = field(default_factory=list)
    trunk_preacts: list[np.ndarray] = field(default_factory=list)
    mean_inputs: list[np.ndarray] = field(default_factory=list)
    mean_preacts: list[np.ndarray] = field(default_factory=list)  # hidden only
    std_inputs: list[np.ndarray] = field(default_factory=list)
    std_preacts: list[np.ndarray] = field(default_factory=list)
    mu: np.ndarray | None = None  # (n,)
    std_raw: np.ndarray | None = None  # (n,) head output before softplus
    sigma: np.ndarray | None = None  # (n,)


def _check_finite(arr: np.ndarray, where: str):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite value in {where}")


def forward_batch(
    params: ParameterSet, X: np.ndarray, check: bool = False
) -> tuple[np.ndarray, np.ndarray, ForwardCache]:
    """Run a batch through trunk and both branches.

    Returns (mu, sigma, cache) where mu and sigma have shape (n,) and sigma
    already includes the softplus floor.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != params.d_in:
        raise ShapeError(f"input width {X.shape[1]}, network expects {params.d_in}")
    cache = ForwardCache(x=X)

    h = X
    for i, layer in enumerate(params.trunk):
        cache.trunk_inputs.append(h)
        z = h @ layer.weights.T + layer.bias
        if check:
            _check_finite(z, f"trunk layer {i}")
        cache.trunk_preacts.append(z)
        h = np.maximum(z, 0.0)

    def run_branch(branch, inputs, preacts, name):
        a = h
        for j, layer in enumerate(branch[:-1]):
            inputs.append(a)
            z = a @ layer.weights.T + layer.bias
            if check:
                _check_finite(z, f"{name} branch layer {j}")
            preacts.append(z)
            a = np.maximum(z, 0.0)
        inputs.append(a)
        head = branch[-1]
        out = a @ head.weights.T + head.bias
        if check:
            _check_finite(out, f"{name} head")
        return out[:, 0]

    cache.mu = run_branch(params.mean_branch, cache.mean_inputs, cache.mean_preacts, "mean")
    cache.std_raw = run_branch(params.std_branch, cache.std_inputs, cache.std_preacts, "std")
    cache.sigma = softplus(cache.std_raw, params.std_floor)
    return cache.mu, cache.sigma, cache


def batch_nll_from_arrays(mu: np.ndarray, sigma: np.ndarray, y: np.ndarray) -> float:
    """Sum of Gaussian negative log likelihoods over a batch."""
    z = (y - mu) / sigma
    return float(np.sum(0.5 * LOG_2PI + np.log(sigma) + 0.5 * z * z))


def _as_xy(batch) -> tuple[np.ndarray, np.ndarray]:
    """Accept either an (X, y) array pair or a sequence of (x, y) rows."""
    if isinstance(batch, tuple) and len(batch) == 2 and np.ndim(batch[0]) == 2:
        X = np.asarray(batch[0], dtype=np.float64)
        y = np.asarray(batch[1], dtype=np.float64)
    else:
        xs, ys = zip(*batch)
        X = np.asarray(xs, dtype=np.float64)
        y = np.asarray(ys, dtype=np.float64)
    if len(X) == 0:
        raise ShapeError("batch must be non-empty")
    if X.shape[0] != y.shape[0]:
        raise ShapeError("feature and target counts differ")
    return X, y


def backward(params: ParameterSet, batch) -> np.ndarray:
    """Gradient of the summed Gaussian NLL with respect to every parameter.

    Returns a flat vector matching ``params.flatten()``. Deterministic given
    params and batch.
    """
    return loss_and_grad(params, batch)[1]


def loss_and_grad(params: ParameterSet, batch) -> tuple[float, np.ndarray]:
    """Summed NLL and its gradient from a single forward/backward pass."""
    X, y = _as_xy(batch)
    mu, sigma, cache = forward_batch(params, X, check=True)

    resid = y - mu
    # d nll / d mu and d nll / d sigma, per sample
    dmu = (-resid / sigma**2)[:, None]  # (n, 1)
    dsigma = 1.0 / sigma - resid**2 / sigma**3
    dstd_raw = (dsigma * sigmoid(cache.std_raw))[:, None]  # (n, 1)

    grads: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def backprop_branch(branch, inputs, preacts, upstream):
        """Walk one branch backwards; return gradient w.r.t. its input."""
        g = upstream
        for j in range(len(branch) - 1, -1, -1):
            layer = branch[j]
            grads[id(layer)] = (g.T @ inputs[j], g.sum(axis=0))
            g = g @ layer.weights
            if j > 0:  # entering the relu below
                g = g * (preacts[j - 1] > 0.0)
        return g

    d_trunk_out = backprop_branch(params.mean_branch, cache.mean_inputs, cache.mean_preacts, dmu)
    d_trunk_out = d_trunk_out + backprop_branch(
        params.std_branch, cache.std_inputs, cache.std_preacts, dstd_raw
    )

    g = d_trunk_out * (cache.trunk_preacts[-1] > 0.0)
    for i in range(len(params.trunk) - 1, -1, -1):
        layer = params.trunk[i]
        grads[id(layer)] = (g.T @ cache.trunk_inputs[i], g.sum(axis=0))
        if i > 0:
            g = (g @ layer.weights) * (cache.trunk_preacts[i - 1] > 0.0)

    parts = []
    for layer in params.layers:
        gw, gb = grads[id(layer)]
        parts.append(gw.ravel())
        parts.append(gb)
    flat = np.concatenate(parts)
    if not np.all(np.isfinite(flat)):
        raise NumericError("non-finite gradient")
    return batch_nll_from_arrays(mu, sigma, y), flat


def adam_step(
    params: ParameterSet, grads: np.ndarray, state: AdamState
) -> tuple[ParameterSet, AdamState]:
    """One bias-corrected Adam update. Returns new params and new state."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != (params.flat_len,):
        raise ShapeError(f"gradient length {grads.shape} != flat_len {params.flat_len}")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads**2
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    theta = params.flatten() - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_params = params.unflatten(theta)
    new_state = replace(state, first_moment=m, second_moment=v, step_count=t)
    return new_params, new_state
