"""Anchored (Halpern) and averaged (Krasnoselskii-Mann) stochastic iterations.

The anchored scheme is x^n = (1 - beta_n) x^0 + beta_n * minibatch(x^{n-1})
with the anchor fixed at the initial point and beta_0 = 0. The averaged
baseline is x^n = (1 - alpha_n) x^{n-1} + alpha_n * query(x^{n-1}), one oracle
query per step, no variance reduction.

Residuals and distances in traces are measured with the exact operator, not
estimated from oracle output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import NormKind, as_vector, norm
from .oracles import OracleDescriptor, RngStream, minibatch, query

__all__ = [
    "StepSchedule",
    "BatchSchedule",
    "RunRecord",
    "halpern_run",
    "km_run",
    "bound_nonexpansive",
    "bound_contractive",
    "kappa_bar_bounded_range",
    "batch_exponent_h",
]


@dataclass(frozen=True)
class StepSchedule:
    """Step weights: anchored kinds emit beta_n, averaged kinds emit alpha_n."""

    kind: str
    alpha: float = 0.0  # km-constant
    a: float = 0.0  # km-polynomial exponent

    _KINDS = ("halpern-classic", "halpern-shifted", "km-constant", "km-polynomial")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown step schedule kind {self.kind!r}")
        if self.kind == "km-constant" and not 0.0 < self.alpha < 1.0:
            raise ValueError("constant step alpha must lie in (0, 1)")
        if self.kind == "km-polynomial" and not 0.0 < self.a <= 1.0:
            raise ValueError("polynomial step exponent must lie in (0, 1]")

    @classmethod
    def halpern_classic(cls) -> "StepSchedule":
        """beta_n = n / (n + 1); beta_0 = 0."""
        return cls("halpern-classic")

    @classmethod
    def halpern_shifted(cls) -> "StepSchedule":
        """beta_n = n / (n + 2)."""
        return cls("halpern-shifted")

    @classmethod
    def km_constant(cls, alpha: float) -> "StepSchedule":
        return cls("km-constant", alpha=float(alpha))

    @classmethod
    def km_polynomial(cls, a: float) -> "StepSchedule":
        """alpha_n = (n + 1)^(-a) with a in (0, 1]."""
        return cls("km-polynomial", a=float(a))

    @property
    def is_halpern(self) -> bool:
        return self.kind.startswith("halpern")

    def weight(self, n: int) -> float:
        if n < 0:
            raise ValueError("step index must be >= 0")
        if self.kind == "halpern-classic":
            return n / (n + 1.0)
        if self.kind == "halpern-shifted":
            return n / (n + 2.0)
        if self.kind == "km-constant":
            return self.alpha
        return (n + 1.0) ** (-self.a)


@dataclass(frozen=True)
class BatchSchedule:
    """Minibatch sizes k_n >= 1 per iteration."""

    kind: str
    k: int = 1  # constant
    a: float = 0.0  # power exponent
    gamma: float = 0.0  # geometric-taper factor
    horizon: int = 0  # geometric-taper horizon

    _KINDS = ("constant", "power", "contractive-geometric", "power-six")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown batch schedule kind {self.kind!r}")
        if self.kind == "constant" and self.k < 1:
            raise ValueError("constant batch size must be >= 1")
        if self.kind == "power" and not self.a >= 0.0:
            raise ValueError("power batch exponent must be >= 0")
        if self.kind == "contractive-geometric":
            if not 0.0 < self.gamma < 1.0:
                raise ValueError("geometric batch factor must lie in (0, 1)")
            if self.horizon < 1:
                raise ValueError("geometric batch schedule needs a horizon N >= 1")

    @classmethod
    def constant(cls, k: int) -> "BatchSchedule":
        return cls("constant", k=int(k))

    @classmethod
    def power(cls, a: float) -> "BatchSchedule":
        """k_n = ceil(n^a)."""
        return cls("power", a=float(a))

    @classmethod
    def contractive_geometric(cls, gamma: float, horizon: int) -> "BatchSchedule":
        """k_n = ceil(n^2 gamma^(N - n)) for a fixed horizon N (clamped to >= 1)."""
        return cls("contractive-geometric", gamma=float(gamma), horizon=int(horizon))

    @classmethod
    def power_six(cls) -> "BatchSchedule":
        """k_n = n^6."""
        return cls("power-six")

    def size(self, n: int) -> int:
        if n < 1:
            raise ValueError("batch sizes are defined for n >= 1")
        if self.kind == "constant":
            return self.k
        if self.kind == "power-six":
            return int(n) ** 6
        if self.kind == "power":
            if float(self.a).is_integer():
                return max(1, int(n) ** int(self.a))
            return max(1, math.ceil(float(n) ** self.a))
        val = float(n) * float(n) * self.gamma ** (self.horizon - n)
        return max(1, math.ceil(val))


@dataclass
class RunRecord:
    """Per-iteration trace of one run (rows for n = 1..steps) plus the final iterate."""

    n: np.ndarray
    weight: np.ndarray  # beta_n or alpha_n actually used
    batch: np.ndarray  # k_n
    cum_queries: np.ndarray
    residual: np.ndarray  # exact ||x^n - T x^n|| under the run's norm
    dist_to_fp: np.ndarray | None  # exact ||x^n - x*||, absent without a known x*
    noise_norm: np.ndarray  # realized ||U_n||
    final_x: np.ndarray
    aborted: bool = False
    abort_reason: str | None = None

    def steps(self) -> int:
        return int(self.n.shape[0])


class _TraceBuilder:
    def __init__(self, with_dist: bool):
        self.rows_n: list[int] = []
        self.weight: list[float] = []
        self.batch: list[int] = []
        self.cum: list[int] = []
        self.residual: list[float] = []
        self.dist: list[float] | None = [] if with_dist else None
        self.noise: list[float] = []

    def add(self, n, w, k, cum, res, dist, noise):
        self.rows_n.append(n)
        self.weight.append(w)
        self.batch.append(k)
        self.cum.append(cum)
        self.residual.append(res)
        if self.dist is not None:
            self.dist.append(dist)
        self.noise.append(noise)

    def record(self, final_x, aborted=False, reason=None) -> RunRecord:
        return RunRecord(
            n=np.array(self.rows_n, dtype=np.int64),
            weight=np.array(self.weight),
            batch=np.array(self.batch, dtype=np.int64),
            cum_queries=np.array(self.cum, dtype=np.int64),
            residual=np.array(self.residual),
            dist_to_fp=None if self.dist is None else np.array(self.dist),
            noise_norm=np.array(self.noise),
            final_x=np.array(final_x, dtype=np.float64),
            aborted=aborted,
            abort_reason=reason,
        )


def _fixed_point_target(o: OracleDescriptor):
    info = o.base.fixed_point_info()
    return info.point


def halpern_run(
    o: OracleDescriptor,
    x0,
    steps: StepSchedule,
    batches: BatchSchedule,
    N: int,
    norm_kind: NormKind,
    rng: RngStream,
) -> RunRecord:
    """Run the anchored iteration for N steps, tracing exact residuals.

    Iteration n consumes k_n = batches.size(n) oracle queries on the substream
    rng.substream(n). On a non-finite iterate the run aborts and returns the
    partial trace flagged as aborted.
    """
    if not steps.is_halpern:
        raise ValueError("halpern_run needs an anchored (halpern) step schedule")
    if N < 1:
        raise ValueError("N must be >= 1")
    anchor = as_vector(x0).copy()
    if anchor.shape[0] != o.dim:
        raise ValueError("x0 dimension does not match the operator")
    target = _fixed_point_target(o)
    tb = _TraceBuilder(with_dist=target is not None)
    x = anchor.copy()
    cum = 0
    for n in range(1, N + 1):
        beta = steps.weight(n)
        k = batches.size(n)
        cum += k
        mb = minibatch(o, x, k, rng.substream(n))
        x_new = (1.0 - beta) * anchor + beta * mb
        if not (np.isfinite(mb).all() and np.isfinite(x_new).all()):
            return tb.record(x, aborted=True, reason=f"non-finite iterate at step {n}")
        noise = norm(mb - o.base.apply(x), norm_kind)
        res = norm(x_new - o.base.apply(x_new), norm_kind)
        dist = norm(x_new - target, norm_kind) if target is not None else 0.0
        tb.add(n, beta, k, cum, res, dist, noise)
        x = x_new
    return tb.record(x)


def km_run(
    o: OracleDescriptor,
    x0,
    steps: StepSchedule,
    N: int,
    norm_kind: NormKind,
    rng: RngStream,
) -> RunRecord:
    """Run the averaged baseline for N steps (single query per step)."""
    if steps.is_halpern:
        raise ValueError("km_run needs an averaged (km) step schedule")
    if N < 1:
        raise ValueError("N must be >= 1")
    x = as_vector(x0).copy()
    if x.shape[0] != o.dim:
        raise ValueError("x0 dimension does not match the operator")
    target = _fixed_point_target(o)
    tb = _TraceBuilder(with_dist=target is not None)
    cum = 0
    for n in range(1, N + 1):
        alpha = steps.weight(n)
        cum += 1
        q = query(o, x, rng.substream(n))
        x_new = (1.0 - alpha) * x + alpha * q
        if not (np.isfinite(q).all() and np.isfinite(x_new).all()):
            return tb.record(x, aborted=True, reason=f"non-finite iterate at step {n}")
        noise = norm(q - o.base.apply(x), norm_kind)
        res = norm(x_new - o.base.apply(x_new), norm_kind)
        dist = norm(x_new - target, norm_kind) if target is not None else 0.0
        tb.add(n, alpha, 1, cum, res, dist, noise)
        x = x_new
    return tb.record(x)


def bound_nonexpansive(kappa_bar: float, sigma_seq, N: int) -> float:
    """Expected-residual curve for the anchored iteration on nonexpansive maps:

    (kappa + kappa * sum_{n=1}^{N} 1/(n+1) + 2 * sum_{n=1}^{N} n * sigma_n) / (N + 1).
    """
    if kappa_bar < 0:
        raise ValueError("kappa_bar must be >= 0")
    if N < 1:
        raise ValueError("N must be >= 1")
    sig = np.asarray(sigma_seq, dtype=np.float64)
    if sig.shape[0] < N:
        raise ValueError(f"sigma sequence has {sig.shape[0]} entries, need >= {N}")
    if (sig < 0).any():
        raise ValueError("sigma entries must be >= 0")
    ns = np.arange(1, N + 1, dtype=np.float64)
    harm = float((1.0 / (ns + 1.0)).sum())
    weighted = float((ns * sig[:N]).sum())
    return (kappa_bar + kappa_bar * harm + 2.0 * weighted) / (N + 1.0)


def bound_contractive(dist0: float, sigma: float, gamma: float, N: int) -> float:
    """Final-iterate distance bound for contractions with geometric-taper batches:

    (dist0 + 2 sigma) / ((1 - gamma)(N + 1)).
    """
    if dist0 < 0 or sigma < 0:
        raise ValueError("dist0 and sigma must be >= 0")
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if N < 1:
        raise ValueError("N must be >= 1")
    return (dist0 + 2.0 * sigma) / ((1.0 - gamma) * (N + 1.0))


def kappa_bar_bounded_range(M: float, x0, norm_kind: NormKind) -> float:
    """Residual-curve constant for bounded-range operators: M + ||x0||."""
    if M < 0:
        raise ValueError("range bound M must be >= 0")
    return M + norm(as_vector(x0), norm_kind)


def batch_exponent_h(a: float) -> float:
    """Oracle-complexity exponent of the power batch schedule k_n = ceil(n^a):

    h(a) = 2(a + 1)/(a - 2) on (2, 4], h(a) = 1 + a on [4, inf); minimized at a = 4.
    """
    if not a > 2.0:
        raise ValueError("the exponent is defined for a > 2")
    if a <= 4.0:
        return 2.0 * (a + 1.0) / (a - 2.0)
    return 1.0 + a
