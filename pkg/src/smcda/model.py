"""Network definition, categorical likelihood with hand-written backprop, Gaussian prior.

Every likelihood routine works on a whole particle ensemble at once: parameters
arrive as a ``(J, D)`` matrix and the first (widest) layer is evaluated for all
particles with a single GEMM against the data matrix. The single-particle
functions are thin wrappers over the ensemble path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _core
from .numerics import STREAM_PRIOR, DomainError, RngStream

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class NetSpec:
    layer_sizes: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise DomainError("a network needs at least an input and an output layer")
        if any(s < 1 for s in sizes):
            raise DomainError(f"layer sizes must be >= 1, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise DomainError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def n_params(self) -> int:
        return param_count(self)

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    def layer_slices(self):
        """Yield ``(fan_in, fan_out, weight_slice, bias_slice)`` into the flat vector."""
        off = 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = slice(off, off + fan_in * fan_out)
            off += fan_in * fan_out
            b = slice(off, off + fan_out)
            off += fan_out
            yield fan_in, fan_out, w, b

    def unpack(self, thetas: np.ndarray):
        """Views ``[(W (J, in, out), b (J, out)), ...]`` of an ensemble matrix."""
        J = thetas.shape[0]
        return [
            (thetas[:, w].reshape(J, fi, fo), thetas[:, b])
            for fi, fo, w, b in self.layer_slices()
        ]

    # likelihood interface shared with LinearGaussian

    def logits(self, thetas: np.ndarray, X: np.ndarray) -> np.ndarray:
        return _forward(self, thetas, X)[0]

    def loglik_and_grad(self, thetas, X, y, weights=None, grad=True):
        return _mlp_loglik_and_grad(self, thetas, X, y, weights, grad)

    def predict_proba(self, thetas, X) -> np.ndarray:
        z = self.logits(thetas, X)
        z = z - z.max(axis=-1, keepdims=True)
        np.exp(z, out=z)
        z /= z.sum(axis=-1, keepdims=True)
        return z


def param_count(spec: NetSpec) -> int:
    return sum(fi * fo + fo for fi, fo in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]))


def _check_thetas(thetas, n_params):
    thetas = np.asarray(thetas, dtype=np.float64)
    if thetas.ndim != 2 or thetas.shape[1] != n_params:
        raise DomainError(f"expected parameters of shape (J, {n_params}), got {thetas.shape}")
    return thetas


def _first_layer(X, W, b):
    # one GEMM for every particle: (M, in) @ (in, J*out) -> (J, M, out)
    J, fi, fo = W.shape
    Wcat = W.transpose(1, 0, 2).reshape(fi, J * fo)
    A = (X @ Wcat).reshape(X.shape[0], J, fo).transpose(1, 0, 2)
    return A + b[:, None, :]


def _forward(spec, thetas, X):
    thetas = _check_thetas(thetas, spec.n_params)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.layer_sizes[0]:
        raise DomainError(f"features must have shape (M, {spec.layer_sizes[0]}), got {X.shape}")
    layers = spec.unpack(thetas)
    acts = []  # post-activation outputs of the hidden layers
    h = None
    for i, (W, b) in enumerate(layers):
        z = _first_layer(X, W, b) if i == 0 else np.matmul(h, W) + b[:, None, :]
        if i == len(layers) - 1:
            return z, acts, layers
        h = np.maximum(z, 0.0) if spec.activation == "relu" else np.tanh(z)
        acts.append(h)


def _mlp_loglik_and_grad(spec, thetas, X, y, weights, grad, generic=False):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise DomainError("empty batch")
    if y.shape != (X.shape[0],):
        raise DomainError("features and labels must have the same count")
    if y.min() < 0 or y.max() >= spec.n_classes:
        raise DomainError(f"label out of range [0, {spec.n_classes})")
    if len(spec.layer_sizes) == 3 and not generic:
        return _mlp1_loglik_and_grad(spec, thetas, X, y, weights, grad)
    z, acts, layers = _forward(spec, thetas, X)
    J, M, _ = z.shape
    zmax = z.max(axis=2, keepdims=True)
    shifted = z - zmax
    lse = np.log(np.exp(shifted).sum(axis=2))
    rows = np.arange(M)
    point_ll = shifted[:, rows, y] - lse  # (J, M)
    if weights is None:
        total = point_ll.sum(axis=1)
    else:
        weights = np.asarray(weights, dtype=np.float64)
        total = point_ll @ weights
    if not grad:
        return total, None

    # d/dz of sum_i c_i log softmax(z_i)[y_i] = c_i (onehot_i - softmax_i)
    delta = -np.exp(shifted - lse[:, :, None])
    delta[:, rows, y] += 1.0
    if weights is not None:
        delta *= weights[None, :, None]
    g = np.empty((J, spec.n_params))
    slices = list(spec.layer_slices())
    for i in range(len(layers) - 1, -1, -1):
        fi, fo, ws, bs = slices[i]
        W = layers[i][0]
        g[:, bs] = delta.sum(axis=1)
        if i == 0:
            dcat = delta.transpose(1, 0, 2).reshape(M, J * fo)
            gw = (X.T @ dcat).reshape(fi, J, fo).transpose(1, 0, 2)
            g[:, ws] = gw.reshape(J, fi * fo)
            break
        h = acts[i - 1]
        g[:, ws] = np.matmul(h.transpose(0, 2, 1), delta).reshape(J, fi * fo)
        delta = np.matmul(delta, W.transpose(0, 2, 1))
        if spec.activation == "relu":
            delta *= h > 0
        else:
            delta *= 1.0 - h * h
    return total, g


def _mlp1_loglik_and_grad(spec, thetas, X, y, weights, grad, fused=None):
    # one hidden layer: GEMM, fused middle section, GEMM
    thetas = _check_thetas(thetas, spec.n_params)
    if X.shape[1] != spec.layer_sizes[0]:
        raise DomainError(f"features must have shape (M, {spec.layer_sizes[0]}), got {X.shape}")
    fused = fused or _core.mlp1_fused
    (W1, b1), (W2, b2) = spec.unpack(thetas)
    J, fi, H = W1.shape
    M = X.shape[0]
    A = X @ W1.transpose(1, 0, 2).reshape(fi, J * H)
    c = np.ones(M) if weights is None else np.ascontiguousarray(weights, dtype=np.float64)
    total, gW2, gb2, gb1 = fused(A, np.ascontiguousarray(b1), np.ascontiguousarray(W2),
                                 np.ascontiguousarray(b2), np.ascontiguousarray(y, dtype=np.int64),
                                 c, 0 if spec.activation == "relu" else 1, grad)
    if not grad:
        return total, None
    (_, _, w1s, b1s), (_, _, w2s, b2s) = spec.layer_slices()
    g = np.empty((J, spec.n_params))
    g[:, w1s] = (X.T @ A).reshape(fi, J, H).transpose(1, 0, 2).reshape(J, fi * H)
    g[:, b1s] = gb1
    g[:, w2s] = gW2.reshape(J, -1)
    g[:, b2s] = gb2
    return total, g


# single-particle convenience API


def forward(spec: NetSpec, theta, x) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (spec.n_params,):
        raise DomainError(f"parameter vector must have length {spec.n_params}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (spec.layer_sizes[0],):
        raise DomainError(f"feature vector must have length {spec.layer_sizes[0]}")
    return spec.logits(theta[None, :], x[None, :])[0, 0]


def loglik_point(spec: NetSpec, theta, x, label: int) -> float:
    if not 0 <= int(label) < spec.n_classes:
        raise DomainError(f"label {label} out of range [0, {spec.n_classes})")
    z = forward(spec, theta, x)
    m = z.max()
    return float(z[label] - m - np.log(np.exp(z - m).sum()))


def loglik_and_grad_batch(spec: NetSpec, theta, xs, labels):
    """Summed log-likelihood of a batch and its gradient for one parameter vector."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (spec.n_params,):
        raise DomainError(f"parameter vector must have length {spec.n_params}")
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    total, g = spec.loglik_and_grad(theta[None, :], xs, labels)
    return float(total[0]), g[0]


@dataclass(frozen=True)
class LinearGaussian:
    """Linear regression ``y = x . theta + noise`` with known noise scale.

    Used as the conjugate test model: with the Gaussian prior its posterior is
    available in closed form (see :func:`smcda.data.make_synthetic`).
    """

    dim: int
    noise_sd: float = 1.0

    def __post_init__(self):
        if self.dim < 1 or not self.noise_sd > 0:
            raise DomainError("LinearGaussian needs dim >= 1 and noise_sd > 0")

    @property
    def n_params(self) -> int:
        return self.dim

    def loglik_and_grad(self, thetas, X, y, weights=None, grad=True):
        thetas = _check_thetas(thetas, self.dim)
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.shape[0] == 0:
            raise DomainError("empty batch")
        s2 = self.noise_sd**2
        resid = y[None, :] - thetas @ X.T  # (J, M)
        point_ll = -0.5 * math.log(2 * math.pi * s2) - resid * resid / (2 * s2)
        c = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
        total = point_ll @ c
        if not grad:
            return total, None
        return total, (resid * c[None, :]) @ X / s2


@dataclass(frozen=True)
class PriorSpec:
    sigma: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise DomainError(f"prior sigma must be positive, got {self.sigma}")


def prior_logpdf_and_grad(prior: PriorSpec, theta):
    """Isotropic Gaussian log-density and gradient; accepts ``(D,)`` or ``(J, D)``."""
    theta = np.asarray(theta, dtype=np.float64)
    s2 = prior.sigma**2
    D = theta.shape[-1]
    logpdf = -0.5 * D * math.log(2 * math.pi * s2) - 0.5 * np.sum(theta * theta, axis=-1) / s2
    if theta.ndim == 1:
        logpdf = float(logpdf)
    return logpdf, -theta / s2


def sample_prior(prior: PriorSpec, spec, r: RngStream) -> np.ndarray:
    if not isinstance(prior, PriorSpec):
        raise DomainError("prior must be a PriorSpec")
    return prior.sigma * r.normal(spec.n_params)


def sample_prior_ensemble(prior: PriorSpec, spec, J: int, r: RngStream) -> np.ndarray:
    return np.stack([sample_prior(prior, spec, r.child(STREAM_PRIOR, j)) for j in range(J)])
