"""Unbiased randomized operator evaluations with reproducible streams.

Randomness comes from counter-based Philox generators keyed by a
(seed, stream id) pair; substreams derive by mixing indices into the stream id
with the SplitMix64 finalizer, so any (run, iteration) owns its own stream and
replays are bit-identical across platforms.

Gaussian draws use a fixed inverse-transform realization: u = (r + 0.5) * 2^-53
for a 53-bit integer r (so u is strictly inside (0, 1)), then z = ndtri(u).

Minibatch means are sampled through exact sufficient statistics rather than
per-sample loops, which keeps polynomially growing batch sizes runnable:

* iid Gaussian: the mean of k perturbations is Gaussian with std e/sqrt(k);
* the resistant coordinate: the mean of k iid (xi_i/p) * t values is
  t * Binomial(k, p) / (k p); the unveiling event {Binomial > 0} keeps exactly
  its probability 1 - (1-p)^k.

Both collapses are equalities in distribution, not approximations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .linalg import as_vector, last_nonzero_index, norm, L2
from .operators import Operator, ShiftProjection

__all__ = [
    "RngStream",
    "standard_normal",
    "NoNoise",
    "AdditiveGaussianIID",
    "ResistantBernoulli",
    "OracleDescriptor",
    "query",
    "minibatch",
    "empirical_moments",
]

_MASK64 = (1 << 64) - 1


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class RngStream:
    """A named position in the Philox key space: (seed, stream id)."""

    seed: int
    stream: int = 0

    def __post_init__(self):
        if not 0 <= self.seed <= _MASK64 or not 0 <= self.stream <= _MASK64:
            raise ValueError("seed and stream must be unsigned 64-bit integers")

    def substream(self, *indices: int) -> "RngStream":
        """Derive a child stream; distinct index tuples give distinct streams."""
        s = self.stream
        for ix in indices:
            s = _splitmix64((s ^ (int(ix) & _MASK64)) & _MASK64)
        return RngStream(self.seed, s)

    def generator(self) -> np.random.Generator:
        """A fresh generator at this stream's origin (same draws on every call)."""
        return np.random.Generator(np.random.Philox(key=[self.seed, self.stream]))


def _uniform_open(gen: np.random.Generator, size) -> np.ndarray:
    r = gen.integers(0, 1 << 53, size=size, dtype=np.uint64)
    return (r.astype(np.float64) + 0.5) * (2.0 ** -53)


def standard_normal(gen: np.random.Generator, size) -> np.ndarray:
    """Inverse-transform standard normals (fixed realization, see module doc)."""
    return ndtri(_uniform_open(gen, size))


@dataclass(frozen=True)
class NoNoise:
    pass


@dataclass(frozen=True)
class AdditiveGaussianIID:
    """Zero-mean iid Gaussian perturbation with per-coordinate std e."""

    e: float

    def __post_init__(self):
        if not self.e >= 0:
            raise ValueError("per-coordinate std e must be >= 0")


@dataclass(frozen=True)
class ResistantBernoulli:
    """Reveal-the-next-coordinate noise for the shift-projection operator.

    The coordinate one past the last nonzero coordinate of the query point is
    scaled by xi/p with xi ~ Bernoulli(p); all other coordinates are exact.
    """

    p: float

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError("success probability p must lie in (0, 1)")


NoiseModel = NoNoise | AdditiveGaussianIID | ResistantBernoulli


class OracleDescriptor:
    """An operator plus a noise model; query results are unbiased for apply()."""

    def __init__(self, base: Operator, noise: NoiseModel):
        if isinstance(noise, ResistantBernoulli) and not isinstance(base, ShiftProjection):
            raise ValueError("resistant noise attaches only to a shift-projection operator")
        self.base = base
        self.noise = noise

    @property
    def dim(self) -> int:
        return self.base.dim


def query(o: OracleDescriptor, x, rng: RngStream) -> np.ndarray:
    """One randomized evaluation; mean over the draw equals the exact operator value."""
    x = as_vector(x)
    tx = o.base.apply(x)
    noise = o.noise
    if isinstance(noise, NoNoise):
        return tx
    if isinstance(noise, AdditiveGaussianIID):
        if noise.e == 0.0:
            return tx
        return tx + noise.e * standard_normal(rng.generator(), x.shape[0])
    # resistant: randomize the coordinate after the current progress index
    j = last_nonzero_index(x)
    if j >= o.base.dim:
        return tx
    out = tx.copy()
    xi = float(_uniform_open(rng.generator(), ()) < noise.p)
    out[j] = (xi / noise.p) * tx[j]
    return out


def minibatch(o: OracleDescriptor, x, k: int, rng: RngStream) -> np.ndarray:
    """Arithmetic mean of k independent queries (sampled via exact sufficient statistics)."""
    if k < 1:
        raise ValueError("minibatch size k must be >= 1")
    x = as_vector(x)
    tx = o.base.apply(x)
    noise = o.noise
    if isinstance(noise, NoNoise):
        return tx
    if isinstance(noise, AdditiveGaussianIID):
        if noise.e == 0.0:
            return tx
        scale = noise.e / np.sqrt(float(k))
        return tx + scale * standard_normal(rng.generator(), x.shape[0])
    j = last_nonzero_index(x)
    if j >= o.base.dim:
        return tx
    out = tx.copy()
    successes = int(rng.generator().binomial(int(k), noise.p))
    out[j] = (successes / (k * noise.p)) * tx[j]
    return out


def empirical_moments(o: OracleDescriptor, x, m: int, rng: RngStream):
    """Sample mean of m queries and mean squared L2 error against the exact value.

    Returns (mean vector, scalar second moment E||query - Tx||_2^2 estimate).
    The m repetitions draw vectorized from this stream's generator, so results
    are deterministic in (stream, x, m).
    """
    if m < 2:
        raise ValueError("need m >= 2 repetitions")
    x = as_vector(x)
    tx = o.base.apply(x)
    d = x.shape[0]
    noise = o.noise
    if isinstance(noise, NoNoise):
        return tx.copy(), 0.0
    if isinstance(noise, AdditiveGaussianIID):
        draws = noise.e * standard_normal(rng.generator(), (m, d))
        mean = tx + draws.mean(axis=0)
        second = float((draws ** 2).sum(axis=1).mean())
        return mean, second
    j = last_nonzero_index(x)
    if j >= o.base.dim:
        return tx.copy(), 0.0
    xi = (_uniform_open(rng.generator(), m) < noise.p).astype(np.float64)
    vals = (xi / noise.p) * tx[j]
    mean = tx.copy()
    mean[j] = vals.mean()
    second = float(((vals - tx[j]) ** 2).mean())
    return mean, second


def realized_noise_norm(o: OracleDescriptor, x, batch_value, kind=L2) -> float:
    """Norm of the realized estimation error batch_value - Tx."""
    return norm(as_vector(batch_value) - o.base.apply(x), kind)
