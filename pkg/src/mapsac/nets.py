"""Feature network: a fixed MLP (tanh, tanh, sigmoid outputs) with hand-coded
reverse-mode gradients, plus the affine input rescaling it expects.

The architecture is deliberately frozen (two hidden layers, sigmoid output
cells) so the chain rule can be written out once and verified against finite
differences; no autodiff dependency is involved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit


@dataclass
class MlpParams:
    """Weights and biases of the feature MLP.

    ``weights[i]`` has shape (fan_in, fan_out); biases match fan_out. The flat
    vector view exists for optimizers and must round-trip exactly.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[1]

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, flat: np.ndarray, layer_sizes: list[int]) -> "MlpParams":
        flat = np.asarray(flat, dtype=float)
        weights, biases = [], []
        pos = 0
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            weights.append(flat[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out).copy())
            pos += fan_in * fan_out
            biases.append(flat[pos : pos + fan_out].copy())
            pos += fan_out
        if pos != flat.size:
            raise ValueError("flat vector length does not match layer sizes")
        return cls(weights, biases)

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def init_mlp(n_in: int, n_out: int, rng: np.random.Generator,
             hidden: tuple[int, ...] = (256, 256)) -> MlpParams:
    """Initialize weights uniformly on +-sqrt(3)/sqrt(fan_in) (unit-variance
    scaling, hard |w| bound), biases at zero."""
    if n_in < 1 or n_out < 1:
        raise ValueError("layer sizes must be positive")
    sizes = [n_in, *hidden, n_out]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(3.0) / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def _as_rows(x: np.ndarray, n_in: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != n_in:
            raise ValueError(f"expected input of length {n_in}, got {x.shape[0]}")
        return x[None, :], True
    if x.ndim != 2 or x.shape[1] != n_in:
        raise ValueError(f"expected (n, {n_in}) inputs, got shape {x.shape}")
    return x, False


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Feature values for a single input or a batch of rows; outputs in (0, 1)."""
    phi, _ = mlp_forward_cached(params, x)
    return phi


def mlp_forward_cached(params: MlpParams, x: np.ndarray):
    """Forward pass keeping the per-layer activations needed for backprop."""
    rows, single = _as_rows(x, params.n_in)
    w1, w2, w3 = params.weights
    b1, b2, b3 = params.biases
    h1 = np.tanh(rows @ w1 + b1)
    h2 = np.tanh(h1 @ w2 + b2)
    phi = expit(h2 @ w3 + b3)
    cache = (rows, h1, h2, phi)
    return (phi[0] if single else phi), cache


def mlp_backward(params: MlpParams, x: np.ndarray, upstream: np.ndarray,
                 cache=None) -> MlpParams:
    """Gradient of sum_i upstream_i . phi(x_i) with respect to the parameters.

    ``upstream`` has the same leading shape as the forward output. Returns
    gradients in MlpParams layout.
    """
    if cache is None:
        _, cache = mlp_forward_cached(params, x)
    rows, h1, h2, phi = cache
    up = np.asarray(upstream, dtype=float)
    if up.ndim == 1:
        up = up[None, :]
    w2, w3 = params.weights[1], params.weights[2]

    d3 = up * phi * (1.0 - phi)           # sigmoid'
    gw3 = h2.T @ d3
    gb3 = d3.sum(axis=0)
    d2 = (d3 @ w3.T) * (1.0 - h2 * h2)    # tanh'
    gw2 = h1.T @ d2
    gb2 = d2.sum(axis=0)
    d1 = (d2 @ w2.T) * (1.0 - h1 * h1)
    gw1 = rows.T @ d1
    gb1 = d1.sum(axis=0)
    return MlpParams([gw1, gw2, gw3], [gb1, gb2, gb3])


@dataclass(frozen=True)
class InputScaler:
    """Affine map taking the box [lo, hi] onto [-1, 1] per coordinate."""

    lo: np.ndarray
    hi: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        return 2.0 * (x - lo) / (hi - lo) - 1.0

    @property
    def gain(self) -> np.ndarray:
        return 2.0 / (np.asarray(self.hi, dtype=float) - np.asarray(self.lo, dtype=float))


@dataclass
class FeatureMap:
    """Input scaling followed by the feature MLP."""

    net: MlpParams
    scaler: InputScaler

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return mlp_forward(self.net, self.scaler.transform(x))

    @property
    def n_features(self) -> int:
        return self.net.n_out

    def lipschitz_bound(self) -> float:
        """Upper bound on ||phi(x) - phi(x')|| / ||x - x'|| from layer norms.

        Activation slopes are at most 1 (tanh) and 1/4 (sigmoid), so the
        product of spectral norms times the scaler gain bounds the Jacobian.
        """
        norm = 1.0
        for w in self.net.weights:
            norm *= float(np.linalg.norm(w, 2))
        return 0.25 * norm * float(np.max(self.scaler.gain))
