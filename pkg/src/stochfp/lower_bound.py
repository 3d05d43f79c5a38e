"""Adversarial query-complexity lab for span-constrained algorithms.

The hard instance is the shift-projection operator on (R^d, ||.||_1) paired
with an oracle that reveals the next coordinate only on a Bernoulli(p) success.
Algorithms whose iterates are linear combinations of past iterates and oracle
outputs cannot push the L1 residual below lam/2 in expectation until they have
spent on the order of d/(2p) queries, which yields the cubic blow-up of the
query budget as the tolerance shrinks.

Instance derivation from (epsilon, kappa_bar, sigma):
  lam = 2 epsilon, d = floor(kappa_bar / lam), p = lam^2 / sigma^2,
  and the budget N with N < d/(2p) <= N + 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .engine import BatchSchedule, StepSchedule
from .linalg import L1, as_vector, last_nonzero_index, norm
from .operators import ShiftProjection, project_box
from .oracles import OracleDescriptor, ResistantBernoulli, RngStream, minibatch

__all__ = [
    "AdversarialInstance",
    "SpanAlgorithm",
    "AdversarialTrace",
    "build_instance",
    "prog",
    "phi",
    "run_adversarial",
]

# denormal dust below this magnitude is flushed to exact zero so prog stays well defined
_FLUSH = 1e-300


def prog(x) -> int:
    """Progress of x: the largest 1-based index with |x_i| > 0, or 0 at the origin."""
    return last_nonzero_index(x)


@dataclass(frozen=True)
class AdversarialInstance:
    epsilon: float
    kappa_bar: float
    sigma: float
    lam: float
    d: int
    p: float
    n_budget: int

    def operator(self) -> ShiftProjection:
        return ShiftProjection(self.lam, self.d)

    def oracle(self) -> OracleDescriptor:
        return OracleDescriptor(self.operator(), ResistantBernoulli(self.p))


def build_instance(epsilon: float, kappa_bar: float, sigma: float) -> AdversarialInstance:
    """Derive the hard instance; requires 0 < epsilon < sigma/2 and kappa_bar >= 2 epsilon."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not epsilon < sigma / 2.0:
        raise ValueError("epsilon must be strictly below sigma / 2")
    lam = 2.0 * epsilon
    if kappa_bar < lam:
        raise ValueError("kappa_bar must be at least 2 * epsilon")
    # epsilon guards absorb float rounding of the quotients (e.g. 2/0.2, d/(2p))
    d = int(math.floor(kappa_bar / lam + 1e-9))
    p = lam * lam / (sigma * sigma)
    if not 0.0 < p < 1.0:
        raise ValueError("derived success probability p must lie in (0, 1)")
    q = d / (2.0 * p)
    n_budget = int(math.ceil(q - 1e-9)) - 1
    if not (n_budget < q <= n_budget + 1 + 1e-6):
        raise AssertionError("budget derivation violated N < d/(2p) <= N + 1")
    return AdversarialInstance(
        epsilon=float(epsilon),
        kappa_bar=float(kappa_bar),
        sigma=float(sigma),
        lam=lam,
        d=d,
        p=p,
        n_budget=n_budget,
    )


def phi(x, n: int, lam: float) -> float:
    """Residual witness |lam - x_1| + sum_{i=2}^{n} |clamp(x_{i-1}) - x_i| + clamp(x_n).

    Always >= lam, and equal to the exact L1 residual ||x - Tx||_1 whenever
    1 <= prog(x) = n < d.
    """
    x = as_vector(x)
    if not 1 <= n <= x.shape[0]:
        raise ValueError("n must satisfy 1 <= n <= dim(x)")
    if not lam > 0:
        raise ValueError("lam must be positive")
    clamped = project_box(x[: n], lam)
    total = abs(lam - x[0])
    if n > 1:
        total += float(np.abs(clamped[:-1] - x[1:n]).sum())
    return float(total + clamped[-1])


@dataclass(frozen=True)
class SpanAlgorithm:
    """An update rule whose iterates stay in the span of past data.

    kinds: 'halpern-classic' (anchored at x^0 = 0), 'km-constant' (averaged,
    weight alpha), or 'custom' with rule(n, x0, x_prev, batch_mean) -> next x.
    """

    kind: str
    batches: BatchSchedule
    alpha: float = 0.0
    custom_rule: Callable[[int, np.ndarray, np.ndarray, np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.kind not in ("halpern-classic", "km-constant", "custom"):
            raise ValueError(f"unknown span algorithm kind {self.kind!r}")
        if self.kind == "km-constant" and not 0.0 < self.alpha < 1.0:
            raise ValueError("km weight alpha must lie in (0, 1)")
        if self.kind == "custom" and self.custom_rule is None:
            raise ValueError("custom span algorithm needs a rule")

    def steps(self) -> StepSchedule | None:
        if self.kind == "halpern-classic":
            return StepSchedule.halpern_classic()
        if self.kind == "km-constant":
            return StepSchedule.km_constant(self.alpha)
        return None


@dataclass
class AdversarialTrace:
    """Per-step trace starting at n = 0 (the initial point x^0 = 0)."""

    n: np.ndarray
    prog: np.ndarray
    cum_queries: np.ndarray
    residual: np.ndarray  # exact L1 residual
    weight: np.ndarray  # step weight used (0 at n = 0)
    batch: np.ndarray  # k_n (0 at n = 0)
    noise_norm: np.ndarray  # realized L1 noise (0 at n = 0)
    dist_to_fp: np.ndarray  # L1 distance to (lam/2, ..., lam/2)
    final_x: np.ndarray

    def steps(self) -> int:
        return int(self.n.shape[0]) - 1


def run_adversarial(
    inst: AdversarialInstance, algo: SpanAlgorithm, rng: RngStream
) -> AdversarialTrace:
    """Run one seeded trajectory from x^0 = 0 until the query budget is exhausted.

    Steps whose batch would push cumulative queries past the budget are not
    taken; every recorded step is budget-feasible.
    """
    op = inst.operator()
    oracle = inst.oracle()
    x_star = np.full(inst.d, inst.lam / 2.0)
    x0 = np.zeros(inst.d)
    x = x0.copy()
    schedule = algo.steps()

    ns = [0]
    progs = [0]
    cums = [0]
    residuals = [norm(x - op.apply(x), L1)]
    weights = [0.0]
    batches = [0]
    noises = [0.0]
    dists = [norm(x - x_star, L1)]

    cum = 0
    n = 0
    while True:
        n += 1
        k = algo.batches.size(n)
        if cum + k > inst.n_budget:
            break
        cum += k
        mb = minibatch(oracle, x, k, rng.substream(n))
        noise = norm(mb - op.apply(x), L1)
        if algo.kind == "halpern-classic":
            w = schedule.weight(n)
            x = (1.0 - w) * x0 + w * mb
        elif algo.kind == "km-constant":
            w = schedule.weight(n)
            x = (1.0 - w) * x + w * mb
        else:
            w = math.nan
            x = as_vector(algo.custom_rule(n, x0, x, mb)).copy()
        x[np.abs(x) < _FLUSH] = 0.0
        ns.append(n)
        progs.append(prog(x))
        cums.append(cum)
        residuals.append(norm(x - op.apply(x), L1))
        weights.append(w)
        batches.append(k)
        noises.append(noise)
        dists.append(norm(x - x_star, L1))

    return AdversarialTrace(
        n=np.array(ns, dtype=np.int64),
        prog=np.array(progs, dtype=np.int64),
        cum_queries=np.array(cums, dtype=np.int64),
        residual=np.array(residuals),
        weight=np.array(weights),
        batch=np.array(batches, dtype=np.int64),
        noise_norm=np.array(noises),
        dist_to_fp=np.array(dists),
        final_x=x.copy(),
    )
