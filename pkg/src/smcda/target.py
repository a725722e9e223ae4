"""Log-posterior and gradient for one iteration's data subset."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, SubsetWindow
from .model import PriorSpec, prior_logpdf_and_grad
from .numerics import DomainError

MODES = ("scaled", "sda")


@dataclass(frozen=True, eq=False)
class TargetContext:
    """Everything needed to evaluate ``log pi_k`` and its gradient.

    ``mode="scaled"`` uses the first ``window.block_end`` points scaled by
    ``total_n / block_end``; ``mode="sda"`` uses the prefix untempered and
    the newest block raised to ``beta``. ``batch_indices`` (scaled mode only)
    replaces the prefix by an explicit set of rows of the ordered data.
    """

    data: Dataset
    window: SubsetWindow
    model: object
    prior: PriorSpec
    mode: str = "scaled"
    beta: float = 1.0
    batch_indices: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise DomainError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "sda" and not 0.0 < self.beta <= 1.0:
            raise DomainError(f"sda mode needs 0 < beta <= 1, got {self.beta}")
        if self.window.block_end > self.data.n:
            raise DomainError(f"window end {self.window.block_end} exceeds dataset size {self.data.n}")
        if self.batch_indices is not None and self.mode != "scaled":
            raise DomainError("explicit batch indices are only valid in scaled mode")

    def key(self):
        """Identity of the target density; equal keys mean equal densities."""
        idx = None if self.batch_indices is None else self.batch_indices.tobytes()
        beta = self.beta if self.mode == "sda" else None
        return (id(self.data), id(self.model), self.prior, self.window, self.mode, beta, idx)

    def subset(self):
        """Rows and per-point likelihood weights of the active subset."""
        w = self.window
        X, y = self.data.ordered_features, self.data.ordered_labels
        if self.batch_indices is not None:
            m = len(self.batch_indices)
            if m == 0:
                raise DomainError("empty batch")
            return X[self.batch_indices], y[self.batch_indices], np.full(m, w.total_n / m)
        if w.block_end < 1:
            raise DomainError("empty subset window")
        if self.mode == "scaled":
            return X[: w.block_end], y[: w.block_end], np.full(w.block_end, w.total_n / w.block_end)
        c = np.ones(w.block_end)
        c[w.prefix_end :] = self.beta
        return X[: w.block_end], y[: w.block_end], c


def evaluate(ctx: TargetContext, thetas: np.ndarray, grad: bool = True):
    """Ensemble log-target ``(J,)`` and, if requested, gradient ``(J, D)``."""
    X, y, c = ctx.subset()
    ll, g = ctx.model.loglik_and_grad(thetas, X, y, weights=c, grad=grad)
    lp, gp = prior_logpdf_and_grad(ctx.prior, thetas)
    if not grad:
        return ll + lp, None
    return ll + lp, g + gp


def log_target(ctx: TargetContext, theta) -> float:
    theta = np.asarray(theta, dtype=np.float64)
    return float(evaluate(ctx, theta[None, :], grad=False)[0][0])


def grad_log_target(ctx: TargetContext, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    return evaluate(ctx, theta[None, :])[1][0]


def loglik_parts(ctx: TargetContext, thetas):
    """Unscaled, untempered summed log-likelihood over prefix and block, each ``(J,)``."""
    w = ctx.window
    X, y = ctx.data.ordered_features, ctx.data.ordered_labels
    J = thetas.shape[0]
    out = []
    for lo, hi in ((0, w.prefix_end), (w.prefix_end, w.block_end)):
        if hi > lo:
            out.append(ctx.model.loglik_and_grad(thetas, X[lo:hi], y[lo:hi], grad=False)[0])
        else:
            out.append(np.zeros(J))
    return out[0], out[1]
