"""Batch-size schedules and the smooth data-annealing (SDA) controller."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import SubsetWindow
from .numerics import DomainError, weighted_cov, weighted_var, WeightedSample
from .target import TargetContext, loglik_parts

KINDS = ("constant", "full_batch", "ctr", "linear", "automated", "sda")
SDA_BETA_RESET = 0.1


@dataclass(frozen=True)
class ScheduleConfig:
    kind: str
    C: int
    kappa: int
    K: int
    N: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"schedule kind must be one of {KINDS}, got {self.kind!r}")
        if not 1 <= self.C <= self.N:
            raise DomainError(f"need 1 <= C <= N, got C={self.C}, N={self.N}")
        if not 1 <= self.kappa <= self.N:
            raise DomainError(f"need 1 <= kappa <= N, got kappa={self.kappa}, N={self.N}")
        if self.K < 1:
            raise DomainError("K must be >= 1")

    def in_first_phase(self, k: int) -> bool:
        # k < 0.9 K without floating point
        return 10 * k < 9 * self.K


def round_to_multiple(x: int, m: int) -> int:
    """Nearest multiple of ``m``; ties go up."""
    return ((2 * x + m) // (2 * m)) * m


def batch_size(cfg: ScheduleConfig, k: int) -> int:
    """Number of datapoints ``M_k`` used at iteration ``k`` (0-based)."""
    if cfg.kind == "sda":
        raise DomainError("sda batch sizes come from the SDA controller, not a schedule")
    if not 0 <= k < cfg.K:
        raise DomainError(f"iteration {k} outside [0, {cfg.K})")
    C, N, kappa = cfg.C, cfg.N, cfg.kappa
    if cfg.kind == "constant":
        return C
    if cfg.kind == "full_batch" or not cfg.in_first_phase(k):
        return N
    if cfg.kind == "ctr":
        return C
    if cfg.kind == "linear":
        return min(kappa * k + C, N)
    # automated: floor((N - C) / (0.9 K)) == floor(10 (N - C) / (9 K))
    step = (10 * (N - C)) // (9 * cfg.K)
    return min(max(round_to_multiple(C + step * k, kappa), C), N)


# SDA


@dataclass(frozen=True)
class SdaState:
    beta: float
    delta_S: float
    window: SubsetWindow
    stage: str = "initial"  # "initial" | "annealed" | "terminal"

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise DomainError(f"beta must lie in (0, 1], got {self.beta}")

    @classmethod
    def start(cls, C: int, N: int, delta_S: float = 1.0, beta0: float = SDA_BETA_RESET) -> SdaState:
        # the first C points are tempered as a whole; nothing is annealed in yet
        return cls(beta0, delta_S, SubsetWindow(0, C, N), "initial")

    @property
    def terminal(self) -> bool:
        return self.stage == "terminal"


def _beta_step(beta: float, delta_S: float, denom: float):
    """Returns ``(beta_next, delta_S_next)``; the sign of delta_S flips when beta would not increase."""
    if denom == 0.0 or not np.isfinite(denom):
        return 1.0, delta_S
    cand = beta - delta_S / denom
    if cand <= beta:
        delta_S = -delta_S
        cand = beta - delta_S / denom
    return min(cand, 1.0), delta_S


def sda_beta_update_initial(beta: float, delta_S: float, var_new: float) -> float:
    if var_new < 0:
        raise DomainError("variance must be non-negative")
    return _beta_step(beta, delta_S, var_new)[0]


def sda_beta_update_annealed(beta: float, delta_S: float, var_new: float, cov_prefix_new: float) -> float:
    return _beta_step(beta, delta_S, var_new + cov_prefix_new)[0]


def sda_moments_from_values(prefix_ll, block_ll, normweights):
    """Weighted ``Var(Omega_hat)`` and ``Cov(Omega, Omega_hat)`` from per-particle log-likelihood sums.

    ``Omega``/``Omega_hat`` are the negated prefix/block sums. With an empty
    prefix every ``Omega`` is 0 and so is the covariance.
    """
    omega_hat = -np.asarray(block_ll, dtype=np.float64)
    omega = -np.asarray(prefix_ll, dtype=np.float64)
    w = np.asarray(normweights, dtype=np.float64)
    var_new = weighted_var(WeightedSample(omega_hat, w))
    return var_new, weighted_cov(omega, omega_hat, w)


def sda_moments(e, ctx: TargetContext, window: SubsetWindow | None = None):
    window = window or ctx.window
    if window.block_end <= window.prefix_end:
        raise DomainError("SDA moments need a non-empty newest block")
    live = np.isfinite(e.log_weights)
    c = replace(ctx, window=window) if window is not ctx.window else ctx
    prefix_ll, block_ll = loglik_parts(c, e.thetas[live] if not live.all() else e.thetas)
    w = e.normweights[live]
    return sda_moments_from_values(prefix_ll, block_ll, w / w.sum())


def sda_advance(state: SdaState, e, ctx: TargetContext, kappa: int) -> SdaState:
    """One controller update after an SMC iteration targeting ``state``."""
    w = state.window
    if state.terminal or w.prefix_end >= w.total_n:
        return replace(state, beta=1.0, stage="terminal")
    var_new, cov = sda_moments(e, ctx, w)
    if state.stage == "initial":
        beta, dS = _beta_step(state.beta, state.delta_S, var_new)
    else:
        beta, dS = _beta_step(state.beta, state.delta_S, var_new + cov)
    if beta < 1.0:
        return replace(state, beta=beta, delta_S=dS)
    return absorb_block(replace(state, delta_S=dS), kappa)


def absorb_block(state: SdaState, kappa: int) -> SdaState:
    """Merge the newest block into the prefix and open the next one with beta reset."""
    w = state.window
    prefix = w.block_end
    if prefix >= w.total_n:
        return SdaState(1.0, state.delta_S, SubsetWindow(w.total_n, w.total_n, w.total_n), "terminal")
    block_end = min(prefix + kappa, w.total_n)
    return SdaState(SDA_BETA_RESET, state.delta_S, SubsetWindow(prefix, block_end, w.total_n), "annealed")
