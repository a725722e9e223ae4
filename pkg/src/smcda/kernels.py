"""Leapfrog HMC / Langevin proposals and the momentum-ratio incremental weight.

There is no accept-reject step: the proposal is a deterministic map of the
freshly drawn momentum, and the L-kernel is the same map run on the negated
final momentum. The volume terms of the two cancel, so the weight update
only needs the target ratio and the ratio of Gaussian momentum densities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import DomainError, RngStream
from .target import TargetContext, evaluate

KINDS = ("hmc", "langevin")


class DivergenceError(ArithmeticError):
    def __init__(self, step: int):
        super().__init__(f"leapfrog produced non-finite values at step {step}")
        self.step = step


@dataclass(frozen=True)
class KernelConfig:
    step_size: float
    leapfrog_steps: int = 1
    kind: str = "hmc"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"kernel kind must be one of {KINDS}, got {self.kind!r}")
        if not self.step_size > 0:
            raise DomainError(f"step size must be positive, got {self.step_size}")
        if self.leapfrog_steps < 1:
            raise DomainError("leapfrog_steps must be >= 1")
        if self.kind == "langevin" and self.leapfrog_steps != 1:
            raise DomainError("langevin dynamics is a single leapfrog step; leapfrog_steps must be 1")


@dataclass
class ProposalResult:
    theta_new: np.ndarray
    p_initial: np.ndarray
    p_final: np.ndarray
    log_target_new: float
    log_target_old: float = np.nan
    divergent: bool = False


@dataclass
class EnsembleTrajectory:
    thetas: np.ndarray      # (J, D) final positions; start position where divergent
    p_final: np.ndarray     # (J, D)
    log_target: np.ndarray  # (J,) at the final positions
    grad: np.ndarray        # (J, D) at the final positions
    divergent: np.ndarray   # (J,) bool
    diverged_at: np.ndarray  # (J,) step index, -1 if finite throughout


def leapfrog_ensemble(ctx: TargetContext, thetas, p0, cfg: KernelConfig, start=None) -> EnsembleTrajectory:
    """Integrate every particle for ``cfg.leapfrog_steps`` steps with identity mass.

    ``start`` optionally supplies ``(log_target, grad)`` at ``thetas`` so the
    first gradient is not recomputed. Particles that hit a non-finite value
    are frozen at their starting state and flagged.
    """
    h = cfg.step_size
    theta0 = np.asarray(thetas, dtype=np.float64)
    lt, g = evaluate(ctx, theta0) if start is None else start
    theta = theta0.copy()
    p = np.array(p0, dtype=np.float64, copy=True)
    J = theta.shape[0]
    bad = np.zeros(J, dtype=bool)
    at = np.full(J, -1)
    for s in range(cfg.leapfrog_steps):
        with np.errstate(over="ignore", invalid="ignore"):
            p += 0.5 * h * g
            theta += h * p
            lt, g = evaluate(ctx, theta)
            p += 0.5 * h * g
            fresh = ~bad & ~(np.isfinite(lt) & np.isfinite(theta).all(1) & np.isfinite(p).all(1) & np.isfinite(g).all(1))
        if fresh.any():
            at[fresh] = s
            bad |= fresh
        if bad.any():
            # park divergent particles at their start so they cannot poison later steps
            theta[bad] = theta0[bad]
            p[bad] = 0.0
            g[bad] = 0.0
            lt[bad] = -np.inf
    return EnsembleTrajectory(theta, p, lt, g, bad, at)


def leapfrog(ctx: TargetContext, theta, p0, cfg: KernelConfig):
    """Single-particle leapfrog; raises :class:`DivergenceError` on non-finite state."""
    tr = leapfrog_ensemble(ctx, np.asarray(theta, dtype=np.float64)[None, :], np.asarray(p0)[None, :], cfg)
    if tr.divergent[0]:
        raise DivergenceError(int(tr.diverged_at[0]))
    return tr.thetas[0], tr.p_final[0]


def draw_momenta(r: RngStream, J: int, D: int) -> np.ndarray:
    return np.stack([r.child(j).normal(D) for j in range(J)])


def propose(ctx: TargetContext, theta, cfg: KernelConfig, r: RngStream) -> ProposalResult:
    theta = np.asarray(theta, dtype=np.float64)
    p0 = r.normal(theta.shape[0])
    lt_old, g_old = evaluate(ctx, theta[None, :])
    tr = leapfrog_ensemble(ctx, theta[None, :], p0[None, :], cfg, start=(lt_old, g_old))
    if tr.divergent[0]:
        raise DivergenceError(int(tr.diverged_at[0]))
    return ProposalResult(tr.thetas[0], p0, tr.p_final[0], float(tr.log_target[0]), float(lt_old[0]))


def incremental_log_weight(log_target_new, log_target_old, p0, pS):
    """``log pi(new) - log pi(old) + log N(-pS) - log N(p0)`` with identity mass.

    Works elementwise over a leading particle axis; non-finite results map to
    ``-inf`` so the particle is dropped at the next resampling.
    """
    p0 = np.asarray(p0, dtype=np.float64)
    pS = np.asarray(pS, dtype=np.float64)
    with np.errstate(invalid="ignore", over="ignore"):
        w = (np.asarray(log_target_new, dtype=np.float64) - log_target_old
             + 0.5 * (np.sum(p0 * p0, axis=-1) - np.sum(pS * pS, axis=-1)))
    w = np.where(np.isfinite(w), w, -np.inf)
    return float(w) if w.ndim == 0 else w
