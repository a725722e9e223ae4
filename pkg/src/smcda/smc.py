"""SMC sampler loop: prior initialization, reweighting, ESS-triggered multinomial resampling."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .kernels import KernelConfig, draw_momenta, incremental_log_weight, leapfrog_ensemble
from .model import PriorSpec, prior_logpdf_and_grad, sample_prior_ensemble
from .numerics import STREAM_MOMENTUM, STREAM_RESAMPLE, DomainError, RngStream, logsumexp, sample_categorical
from .target import TargetContext, evaluate


class SamplerError(RuntimeError):
    """Unrecoverable sampler state, e.g. every particle has zero weight."""


@dataclass
class ParticleEnsemble:
    thetas: np.ndarray
    log_weights: np.ndarray
    k: int = 0
    # log-target and gradient at ``thetas`` under the target with key ``cache_key``
    cache_key: object = field(default=None, repr=False)
    cache: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        self.thetas = np.asarray(self.thetas, dtype=np.float64)
        self.log_weights = np.asarray(self.log_weights, dtype=np.float64)
        if self.thetas.ndim != 2 or self.thetas.shape[0] < 2:
            raise DomainError("an ensemble needs J >= 2 particles")
        if self.log_weights.shape != (self.thetas.shape[0],):
            raise DomainError("one log-weight per particle required")

    @property
    def J(self) -> int:
        return self.thetas.shape[0]

    @property
    def normweights(self) -> np.ndarray:
        return normalize(self.log_weights)


@dataclass
class IterRecord:
    k: int
    M_k: int
    beta: float
    ess: float
    resampled: bool
    mean_log_target: float
    log_z_increment: float
    n_divergent: int = 0
    prefix_end: int = 0
    sampler_ms: float = 0.0
    wall_time_ms: float = 0.0
    test_loss: float | None = None
    test_accuracy: float | None = None


def init_ensemble(J: int, ctx0: TargetContext, prior: PriorSpec, model, r: RngStream) -> ParticleEnsemble:
    """Draw from the prior and weight by ``log pi - log q0`` (the scaled log-likelihood)."""
    if J < 2:
        raise DomainError("J must be >= 2")
    thetas = sample_prior_ensemble(prior, model, J, r)
    lt, g = evaluate(ctx0, thetas)
    lq, _ = prior_logpdf_and_grad(prior, thetas)
    e = ParticleEnsemble(thetas, lt - lq, 0)
    e.cache_key, e.cache = ctx0.key(), (lt, g)
    return e


def normalize(log_weights) -> np.ndarray:
    lw = np.asarray(log_weights, dtype=np.float64)
    if np.isnan(lw).any() or not np.isfinite(lw).any():
        raise SamplerError("all particles have zero weight")
    w = np.exp(lw - logsumexp(lw))
    return w / w.sum()


def ess(normweights) -> float:
    w = np.asarray(normweights, dtype=np.float64)
    return float(1.0 / np.dot(w, w))


def resample_multinomial(e: ParticleEnsemble, r: RngStream) -> ParticleEnsemble:
    J = e.J
    idx = sample_categorical(r, normalize(e.log_weights), J)
    out = ParticleEnsemble(e.thetas[idx], np.full(J, -np.log(J)), e.k)
    if e.cache is not None:
        out.cache_key = e.cache_key
        out.cache = tuple(c[idx] for c in e.cache)
    return out


def estimate(e: ParticleEnsemble, f) -> float:
    w = normalize(e.log_weights)
    return float(sum(wj * f(t) for wj, t in zip(w, e.thetas) if wj > 0))


def smc_step(e: ParticleEnsemble, ctx: TargetContext, cfg: KernelConfig, r: RngStream,
             resample_threshold: float = 0.5):
    """Propagate, reweight, normalize and (if ESS < threshold * J) resample.

    ``r`` is the run-level stream; per-particle momentum streams and the
    resampling stream are derived from it and the iteration index ``e.k``.
    The returned record carries ``k = e.k``; the returned ensemble has ``k + 1``.
    """
    t0 = time.perf_counter()
    k = e.k
    J, D = e.thetas.shape
    key = ctx.key()
    if e.cache is not None and e.cache_key == key:
        lt_old, g_old = e.cache
    else:
        lt_old, g_old = evaluate(ctx, e.thetas)
    p0 = draw_momenta(r.child(STREAM_MOMENTUM, k), J, D)
    tr = leapfrog_ensemble(ctx, e.thetas, p0, cfg, start=(lt_old, g_old))

    inc = incremental_log_weight(tr.log_target, lt_old, p0, tr.p_final)
    inc[tr.divergent] = -np.inf
    if not np.isfinite(inc).any():
        raise SamplerError(f"every particle diverged at iteration {k}")
    lw = e.log_weights + inc
    log_z = logsumexp(lw) - logsumexp(e.log_weights)
    w = normalize(lw)
    n_eff = ess(w)
    lt_new = np.where(tr.divergent, lt_old, tr.log_target)
    g_new = np.where(tr.divergent[:, None], g_old, tr.grad)
    live = w > 0
    mean_lt = float(np.dot(w[live], lt_new[live]))

    new = ParticleEnsemble(tr.thetas, lw, k + 1)
    new.cache_key, new.cache = key, (lt_new, g_new)
    resampled = n_eff < resample_threshold * J
    if resampled:
        new = resample_multinomial(new, r.child(STREAM_RESAMPLE, k))
    rec = IterRecord(
        k=k, M_k=ctx.window.block_end if ctx.batch_indices is None else len(ctx.batch_indices),
        beta=ctx.beta if ctx.mode == "sda" else 1.0, ess=n_eff, resampled=bool(resampled),
        mean_log_target=mean_lt, log_z_increment=float(log_z),
        n_divergent=int(tr.divergent.sum()),
        sampler_ms=(time.perf_counter() - t0) * 1e3,
    )
    return new, rec
