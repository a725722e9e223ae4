"""Seeded randomness and log-domain / weighted-moment reductions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DomainError(ValueError):
    """Raised when an input violates an operation's precondition."""


# spawn-key tags so that different consumers never share a sub-stream
STREAM_PRIOR = 1
STREAM_MOMENTUM = 2
STREAM_RESAMPLE = 3
STREAM_PERMUTE = 4
STREAM_DATA = 5
STREAM_BATCH = 6


@dataclass(frozen=True)
class RngStream:
    """Counter-based, splittable random stream.

    A stream is identified by ``(seed, path)``; the generator behind it is a
    Philox bit generator keyed through :class:`numpy.random.SeedSequence`.
    Children are addressed by integer keys, so the stream for
    ``(iteration k, particle j)`` is the same no matter in which order
    particles are visited.
    """

    seed: int
    path: tuple[int, ...] = ()
    _gen: np.random.Generator | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        ss = np.random.SeedSequence(int(self.seed), spawn_key=self.path)
        object.__setattr__(self, "_gen", np.random.Generator(np.random.Philox(ss)))

    def child(self, *keys: int) -> RngStream:
        return RngStream(self.seed, self.path + tuple(int(k) for k in keys))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self, size=None):
        return self._gen.random(size)

    def normal(self, size=None):
        return self._gen.standard_normal(size)


@dataclass
class WeightedSample:
    values: np.ndarray
    normweights: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.normweights = np.asarray(self.normweights, dtype=np.float64)
        _check_weights(self.normweights, len(self.values))


def _check_weights(w: np.ndarray, n: int | None = None, tol: float = 1e-12) -> None:
    if w.ndim != 1 or w.size == 0:
        raise DomainError("weights must be a non-empty vector")
    if n is not None and w.size != n:
        raise DomainError(f"length mismatch: {n} values, {w.size} weights")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise DomainError("weights must be finite and non-negative")
    if abs(w.sum() - 1.0) > tol:
        raise DomainError(f"weights sum to {w.sum()!r}, not 1")


def logsumexp(v, axis=None):
    """``log(sum(exp(v)))`` shifted by the maximum.

    Entries may be ``-inf``; an empty input, NaN entries or an all ``-inf``
    input raise :class:`DomainError`.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise DomainError("logsumexp of an empty vector")
    if np.isnan(v).any():
        raise DomainError("logsumexp input contains NaN")
    m = np.max(v, axis=axis, keepdims=True)
    if np.any(m == -np.inf):
        raise DomainError("logsumexp of an all -inf vector")
    if np.any(m == np.inf):
        return np.squeeze(m, axis=axis) if axis is not None else float(m.item())
    out = np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out.item())
    return np.squeeze(out, axis=axis)


def weighted_mean(s: WeightedSample) -> float:
    return float(np.dot(s.normweights, s.values))


def weighted_var(s: WeightedSample) -> float:
    # clamped: roundoff can leave a tiny negative that would poison a division
    mean = weighted_mean(s)
    return max(float(np.dot(s.normweights, s.values * s.values)) - mean * mean, 0.0)


def weighted_cov(x, y, normweights) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(normweights, dtype=np.float64)
    if x.shape != y.shape:
        raise DomainError(f"length mismatch: {x.size} vs {y.size}")
    _check_weights(w, x.size)
    return float(np.dot(w, x * y) - np.dot(w, x) * np.dot(w, y))


def sample_categorical(r: RngStream, normweights, count: int) -> np.ndarray:
    """Draw ``count`` i.i.d. indices by inverse-CDF lookup of uniforms."""
    w = np.asarray(normweights, dtype=np.float64)
    _check_weights(w, tol=1e-9)
    if count < 1:
        raise DomainError("count must be >= 1")
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    u = r.uniform(count)
    idx = np.searchsorted(cdf, u, side="right")
    # never land on a zero-weight tail entry through roundoff
    return np.minimum(idx, np.flatnonzero(w > 0)[-1]).astype(np.int64)


def sample_std_normal(r: RngStream, dim: int) -> np.ndarray:
    if dim < 1:
        raise DomainError("dim must be >= 1")
    return r.normal(int(dim))
