"""Tabular MDPs: generative sampling, exact solvers, and synchronous Q-learning.

Average-reward fixed points solve Q = r + P max Q - v* (nonexpansive in the
sup norm under the unichain assumption); discounted fixed points solve
Q = r + gamma P max Q (a gamma-contraction). The anchored learning algorithms
mirror the engine's Halpern scheme on Q-tables with per-pair generative
minibatches.

Sampling order is fixed: within an iteration, (s, a) pairs are visited in
row-major order and the batch for a pair is drawn before moving on. Batches
are realized through the exact multinomial sufficient statistic: k iid
next-state draws per (s, a) collapse to one multinomial count vector, and the
batch mean of max_a' Q(s', a') is counts . max-vector / k. Coupled replays
(same seed and stream) therefore consume identical counts sample-for-sample.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .engine import RunRecord
from .oracles import RngStream

__all__ = [
    "TabularMDP",
    "AnchorFunction",
    "AverageSolution",
    "mdp_from_dict",
    "load_mdp",
    "bellman_discounted",
    "bellman_average",
    "solve_discounted_exact",
    "solve_average_exact",
    "check_unichain",
    "generative_sample",
    "greedy_policy",
    "halpern_q_average",
    "benchmark_q_average",
    "halpern_q_discounted",
    "rvi_q_learning",
    "vanilla_q_discounted",
    "discounted_iteration_count",
]

_ROW_TOL = 1e-12
_POLICY_ENUM_CAP = 10 ** 6


class MDPValidationError(ValueError):
    """Raised when an MDP description violates the model invariants."""


@dataclass(frozen=True)
class TabularMDP:
    """Finite MDP: transitions (S, A, S) row-stochastic, rewards (S, A) in [0, 1]."""

    transitions: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.transitions, dtype=np.float64)
        r = np.asarray(self.rewards, dtype=np.float64)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise MDPValidationError(
                f"transitions must have shape (S, A, S), got {p.shape}"
            )
        if r.shape != p.shape[:2]:
            raise MDPValidationError(
                f"rewards shape {r.shape} does not match transitions {p.shape[:2]}"
            )
        if not np.isfinite(p).all():
            raise MDPValidationError("transitions contain non-finite entries")
        if not np.isfinite(r).all():
            raise MDPValidationError("rewards contain non-finite entries")
        s_bad, a_bad = np.where(p.min(axis=2) < 0)
        if s_bad.size:
            raise MDPValidationError(
                f"transitions[{s_bad[0]}][{a_bad[0]}] has a negative probability"
            )
        sums = p.sum(axis=2)
        s_bad, a_bad = np.where(np.abs(sums - 1.0) > _ROW_TOL)
        if s_bad.size:
            raise MDPValidationError(
                f"transitions[{s_bad[0]}][{a_bad[0]}] sums to {float(sums[s_bad[0], a_bad[0]])!r}, not 1"
            )
        if (r < 0).any() or (r > 1).any():
            s_bad, a_bad = np.where((r < 0) | (r > 1))
            raise MDPValidationError(
                f"rewards[{s_bad[0]}][{a_bad[0]}] = {r[s_bad[0], a_bad[0]]!r} lies outside [0, 1]"
            )
        p = p.copy()
        r = r.copy()
        p.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "transitions", p)
        object.__setattr__(self, "rewards", r)

    @property
    def num_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def r_max(self) -> float:
        return float(self.rewards.max())

    def transition_cdf(self) -> np.ndarray:
        """Per-(s, a) cumulative distribution over next states (fixed state order)."""
        return np.cumsum(self.transitions, axis=2)

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "transitions": self.transitions.tolist(),
            "rewards": self.rewards.tolist(),
        }


def mdp_from_dict(doc: dict) -> TabularMDP:
    """Build a TabularMDP from the JSON document structure, with field-path errors."""
    if not isinstance(doc, dict):
        raise MDPValidationError("MDP document must be a JSON object")
    required = {"num_states", "num_actions", "transitions", "rewards"}
    unknown = set(doc) - required
    if unknown:
        raise MDPValidationError(f"unknown MDP field {sorted(unknown)[0]!r}")
    missing = required - set(doc)
    if missing:
        raise MDPValidationError(f"missing MDP field {sorted(missing)[0]!r}")
    ns, na = doc["num_states"], doc["num_actions"]
    if not isinstance(ns, int) or ns < 1:
        raise MDPValidationError(f"num_states must be a positive integer, got {ns!r}")
    if not isinstance(na, int) or na < 1:
        raise MDPValidationError(f"num_actions must be a positive integer, got {na!r}")
    try:
        p = np.array(doc["transitions"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise MDPValidationError(f"transitions is not a numeric S x A x S array: {exc}")
    try:
        r = np.array(doc["rewards"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise MDPValidationError(f"rewards is not a numeric S x A array: {exc}")
    if p.shape != (ns, na, ns):
        raise MDPValidationError(
            f"transitions shape {p.shape} does not match (num_states, num_actions, num_states) = {(ns, na, ns)}"
        )
    if r.shape != (ns, na):
        raise MDPValidationError(
            f"rewards shape {r.shape} does not match (num_states, num_actions) = {(ns, na)}"
        )
    return TabularMDP(p, r)


def load_mdp(path) -> TabularMDP:
    """Load and validate an MDP JSON file (num_states, num_actions, transitions, rewards)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MDPValidationError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}")
    try:
        return mdp_from_dict(doc)
    except MDPValidationError as exc:
        raise MDPValidationError(f"{path}: {exc}")


@dataclass(frozen=True)
class AnchorFunction:
    """A shift-equivariant table functional: f(Q + c) = f(Q) + c.

    kinds: 'max', 'min', 'mean', 'coordinate' (value at a fixed (s, a)).
    """

    kind: str
    s: int = 0
    a: int = 0

    def __post_init__(self):
        if self.kind not in ("max", "min", "mean", "coordinate"):
            raise ValueError(f"unknown anchor kind {self.kind!r}")
        if self.kind == "coordinate" and (self.s < 0 or self.a < 0):
            raise ValueError("coordinate anchor indices must be >= 0")

    def value(self, q: np.ndarray) -> float:
        if self.kind == "max":
            return float(q.max())
        if self.kind == "min":
            return float(q.min())
        if self.kind == "mean":
            return float(q.mean())
        return float(q[self.s, self.a])


@dataclass(frozen=True)
class AverageSolution:
    """Optimal average reward and a Max-normalized solution table."""

    v_star: float
    q_star: np.ndarray
    iterations: int


def _check_table(m: TabularMDP, q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (m.num_states, m.num_actions):
        raise ValueError(
            f"Q-table shape {q.shape} does not match the model {(m.num_states, m.num_actions)}"
        )
    return q


def _flat_transitions(m: TabularMDP) -> np.ndarray:
    return m.transitions.reshape(m.num_states * m.num_actions, m.num_states)


def _lookahead(m: TabularMDP, q: np.ndarray) -> np.ndarray:
    """r(s,a) + sum_s' p(s'|s,a) max_a' Q(s',a') as an (S, A) table."""
    maxv = q.max(axis=1)
    return m.rewards + (_flat_transitions(m) @ maxv).reshape(q.shape)


def bellman_discounted(m: TabularMDP, q, gamma: float) -> np.ndarray:
    """(TQ)(s,a) = r(s,a) + gamma * E max_a' Q(s',a'); a gamma-contraction in sup norm."""
    q = _check_table(m, q)
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    maxv = q.max(axis=1)
    return m.rewards + gamma * (_flat_transitions(m) @ maxv).reshape(q.shape)


def bellman_average(m: TabularMDP, q, v_star: float) -> np.ndarray:
    """(HQ)(s,a) = r(s,a) + E max_a' Q(s',a') - v*; nonexpansive in sup norm."""
    q = _check_table(m, q)
    return _lookahead(m, q) - float(v_star)


def solve_discounted_exact(m: TabularMDP, gamma: float, tol: float = 1e-10) -> np.ndarray:
    """Value iteration to ||Q - Q*||_inf <= tol (stopping rule tol (1-gamma)/(2 gamma))."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if not tol > 0:
        raise ValueError("tol must be positive")
    stop = tol * (1.0 - gamma) / (2.0 * gamma)
    q = np.zeros((m.num_states, m.num_actions))
    while True:
        nxt = bellman_discounted(m, q, gamma)
        if np.abs(nxt - q).max() <= stop:
            q = nxt
            break
        q = nxt
    cap = m.r_max / (1.0 - gamma)
    if np.abs(q).max() > cap + 1e-9 + tol:
        raise RuntimeError("solved table exceeds the r_max/(1-gamma) magnitude cap")
    return q


def solve_average_exact(
    m: TabularMDP, tol: float = 1e-10, max_iter: int = 10 ** 6
) -> AverageSolution:
    """Damped relative value iteration for the optimal average reward.

    Sweeps Q <- (Q + L Q)/2 with L Q = r + P max Q, renormalizing to Max = 0,
    until the span of L Q - Q is <= tol. The damping is an aperiodicity
    transform: undamped sweeps oscillate on periodic chains (e.g. deterministic
    cycles). v* is the midpoint of the final difference range (error <= tol/2)
    and the returned table satisfies the fixed-point identity within tol.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    q = np.zeros((m.num_states, m.num_actions))
    for it in range(max_iter):
        lq = _lookahead(m, q)
        diff = lq - q
        span = float(diff.max() - diff.min())
        if span <= tol:
            v_star = float((diff.max() + diff.min()) / 2.0)
            q_star = q - q.max()
            q_star.setflags(write=False)
            return AverageSolution(v_star, q_star, it)
        q = 0.5 * q + 0.5 * lq
        q -= q.max()
    raise RuntimeError(
        f"relative value iteration did not reach span {tol:g} within {max_iter} sweeps; "
        "the model likely violates the unichain assumption"
    )


def check_unichain(m: TabularMDP) -> bool:
    """True iff every deterministic stationary policy induces a single recurrent class.

    Enumerates all A^S policies; refuses instances with S * A^S > 10^6.
    """
    import networkx as nx

    s_count, a_count = m.num_states, m.num_actions
    work = s_count * a_count ** s_count
    if work > _POLICY_ENUM_CAP:
        raise ValueError(
            f"policy enumeration needs S * A^S = {work} > {_POLICY_ENUM_CAP}; instance too large"
        )
    support = m.transitions > 0.0
    for policy in product(range(a_count), repeat=s_count):
        g = nx.DiGraph()
        g.add_nodes_from(range(s_count))
        for s in range(s_count):
            for s2 in np.flatnonzero(support[s, policy[s]]):
                g.add_edge(s, int(s2))
        cond = nx.condensation(g)
        recurrent = sum(1 for node in cond.nodes if cond.out_degree(node) == 0)
        if recurrent != 1:
            return False
    return True


def generative_sample(m: TabularMDP, s: int, a: int, rng: RngStream) -> int:
    """One next-state draw from p(.|s,a) by inverse CDF over the fixed state order."""
    if not (0 <= s < m.num_states and 0 <= a < m.num_actions):
        raise ValueError(f"state-action ({s}, {a}) out of range")
    u = rng.generator().random()
    cdf = m.transition_cdf()[s, a]
    return int(min(np.searchsorted(cdf, u, side="right"), m.num_states - 1))


def greedy_policy(q: np.ndarray) -> np.ndarray:
    """Greedy action per state; ties go to the lowest action index."""
    return np.argmax(q, axis=1)


def _batch_mean_max(m: TabularMDP, maxv: np.ndarray, k: int, gen: np.random.Generator) -> np.ndarray:
    """(1/k) sum over k generative draws of max_a' Q(s',a'), per (s, a), row-major.

    Realized via one multinomial count vector per pair (exact sufficient
    statistic for the batch mean).
    """
    s_count, a_count = m.num_states, m.num_actions
    out = np.empty((s_count, a_count))
    p = m.transitions
    for s in range(s_count):
        for a in range(a_count):
            counts = gen.multinomial(k, p[s, a])
            out[s, a] = (counts @ maxv) / k
    return out


def _single_sample_max(m: TabularMDP, maxv: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """max_a' Q(s',a') at one sampled next state per (s, a), row-major order."""
    s_count, a_count = m.num_states, m.num_actions
    cdf = m.transition_cdf()
    us = gen.random(size=(s_count, a_count))
    out = np.empty((s_count, a_count))
    for s in range(s_count):
        for a in range(a_count):
            idx = min(np.searchsorted(cdf[s, a], us[s, a], side="right"), m.num_states - 1)
            out[s, a] = maxv[idx]
    return out


class _QTrace:
    def __init__(self, with_dist: bool):
        self.n: list[int] = []
        self.weight: list[float] = []
        self.batch: list[int] = []
        self.cum: list[int] = []
        self.residual: list[float] = []
        self.dist: list[float] | None = [] if with_dist else None
        self.noise: list[float] = []

    def add(self, n, w, k, cum, res, dist, noise):
        self.n.append(n)
        self.weight.append(w)
        self.batch.append(k)
        self.cum.append(cum)
        self.residual.append(res)
        if self.dist is not None:
            self.dist.append(dist)
        self.noise.append(noise)

    def record(self, final_q: np.ndarray, aborted=False, reason=None) -> RunRecord:
        return RunRecord(
            n=np.array(self.n, dtype=np.int64),
            weight=np.array(self.weight),
            batch=np.array(self.batch, dtype=np.int64),
            cum_queries=np.array(self.cum, dtype=np.int64),
            residual=np.array(self.residual),
            dist_to_fp=None if self.dist is None else np.array(self.dist),
            noise_norm=np.array(self.noise),
            final_x=final_q.ravel().copy(),
            aborted=aborted,
            abort_reason=reason,
        )


def _expected_max(m: TabularMDP, maxv: np.ndarray) -> np.ndarray:
    return (_flat_transitions(m) @ maxv).reshape(m.num_states, m.num_actions)


def halpern_q_average(
    m: TabularMDP,
    f: AnchorFunction,
    q0,
    N: int,
    rng: RngStream,
    v_star: float | None = None,
):
    """Anchored synchronous Q-learning for average reward (batch size n^6).

    Q^n = (1 - beta_n) Q^0 + beta_n (r + batch-mean max Q^{n-1} - f(Q^{n-1})),
    beta_n = n/(n+1). The residual trace measures ||H Q^n - Q^n||_inf where H
    uses the exact v* (computed here if not supplied); v* enters measurement
    only, never the update.
    """
    q0 = _check_table(m, q0)
    if f.kind == "coordinate" and (f.s >= m.num_states or f.a >= m.num_actions):
        raise ValueError("coordinate anchor out of range for this model")
    if N < 1:
        raise ValueError("N must be >= 1")
    if v_star is None:
        v_star = solve_average_exact(m).v_star
    sa = m.num_states * m.num_actions
    trace = _QTrace(with_dist=False)
    q = q0.copy()
    cum = 0
    for n in range(1, N + 1):
        beta = n / (n + 1.0)
        k = n ** 6
        cum += k * sa
        gen = rng.substream(n).generator()
        maxv = q.max(axis=1)
        batch = _batch_mean_max(m, maxv, k, gen)
        noise = float(np.abs(batch - _expected_max(m, maxv)).max())
        update = m.rewards + batch - f.value(q)
        q_new = (1.0 - beta) * q0 + beta * update
        if not np.isfinite(q_new).all():
            return q, trace.record(q, aborted=True, reason=f"non-finite table at step {n}")
        res = float(np.abs(bellman_average(m, q_new, v_star) - q_new).max())
        trace.add(n, beta, k, cum, res, 0.0, noise)
        q = q_new
    return q, trace.record(q)


def benchmark_q_average(
    m: TabularMDP,
    v_star: float,
    q0,
    N: int,
    rng: RngStream,
):
    """Average-reward anchored Q-learning that subtracts the exact v* each step.

    Identical sampling layout to halpern_q_average, so running both on equal
    (seed, stream) pairs consumes identical draws and the two tables differ by
    a constant table at every step.
    """
    q0 = _check_table(m, q0)
    if N < 1:
        raise ValueError("N must be >= 1")
    sa = m.num_states * m.num_actions
    trace = _QTrace(with_dist=False)
    q = q0.copy()
    cum = 0
    for n in range(1, N + 1):
        beta = n / (n + 1.0)
        k = n ** 6
        cum += k * sa
        gen = rng.substream(n).generator()
        maxv = q.max(axis=1)
        batch = _batch_mean_max(m, maxv, k, gen)
        noise = float(np.abs(batch - _expected_max(m, maxv)).max())
        update = m.rewards + batch - float(v_star)
        q_new = (1.0 - beta) * q0 + beta * update
        if not np.isfinite(q_new).all():
            return q, trace.record(q, aborted=True, reason=f"non-finite table at step {n}")
        res = float(np.abs(bellman_average(m, q_new, v_star) - q_new).max())
        trace.add(n, beta, k, cum, res, 0.0, noise)
        q = q_new
    return q, trace.record(q)


def halpern_q_discounted(
    m: TabularMDP,
    gamma: float,
    q0,
    N: int,
    rng: RngStream,
    q_star: np.ndarray | None = None,
    solver_tol: float = 1e-10,
):
    """Anchored synchronous Q-learning, discounted case (batch n^2 gamma^(N-n)).

    Requires ||Q^0||_inf <= r_max/(1-gamma); iterates then stay within that cap.
    The trace records both the Bellman residual and ||Q^n - Q*||_inf against
    the exact solution.
    """
    q0 = _check_table(m, q0)
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if N < 1:
        raise ValueError("N must be >= 1")
    cap = m.r_max / (1.0 - gamma)
    if np.abs(q0).max() > cap:
        raise ValueError("||Q0||_inf must not exceed r_max / (1 - gamma)")
    if q_star is None:
        q_star = solve_discounted_exact(m, gamma, solver_tol)
    sa = m.num_states * m.num_actions
    trace = _QTrace(with_dist=True)
    q = q0.copy()
    cum = 0
    for n in range(1, N + 1):
        beta = n / (n + 1.0)
        k = max(1, math.ceil(n * n * gamma ** (N - n)))
        cum += k * sa
        gen = rng.substream(n).generator()
        maxv = q.max(axis=1)
        batch = _batch_mean_max(m, maxv, k, gen)
        noise = float(gamma * np.abs(batch - _expected_max(m, maxv)).max())
        update = m.rewards + gamma * batch
        q_new = (1.0 - beta) * q0 + beta * update
        if not np.isfinite(q_new).all():
            return q, trace.record(q, aborted=True, reason=f"non-finite table at step {n}")
        res = float(np.abs(bellman_discounted(m, q_new, gamma) - q_new).max())
        dist = float(np.abs(q_new - q_star).max())
        trace.add(n, beta, k, cum, res, dist, noise)
        q = q_new
    return q, trace.record(q)


def rvi_q_learning(
    m: TabularMDP,
    f: AnchorFunction,
    a_exponent: float,
    q0,
    N: int,
    rng: RngStream,
    v_star: float | None = None,
):
    """Relative-value-iteration Q-learning baseline (single sample per pair per step).

    Q^n(s,a) = (1 - alpha_n) Q^{n-1}(s,a)
             + alpha_n (r(s,a) + max_a' Q^{n-1}(s_n(s,a), a') - f(Q^{n-1})),
    alpha_n = 1/(n+1)^a with a in (4/5, 1].
    """
    q0 = _check_table(m, q0)
    if not 0.8 < a_exponent <= 1.0:
        raise ValueError("step exponent must lie in (4/5, 1]")
    if f.kind == "coordinate" and (f.s >= m.num_states or f.a >= m.num_actions):
        raise ValueError("coordinate anchor out of range for this model")
    if N < 1:
        raise ValueError("N must be >= 1")
    if v_star is None:
        v_star = solve_average_exact(m).v_star
    sa = m.num_states * m.num_actions
    trace = _QTrace(with_dist=False)
    q = q0.copy()
    cum = 0
    for n in range(1, N + 1):
        alpha = (n + 1.0) ** (-a_exponent)
        cum += sa
        gen = rng.substream(n).generator()
        maxv = q.max(axis=1)
        sampled = _single_sample_max(m, maxv, gen)
        noise = float(np.abs(sampled - _expected_max(m, maxv)).max())
        target = m.rewards + sampled - f.value(q)
        q_new = (1.0 - alpha) * q + alpha * target
        if not np.isfinite(q_new).all():
            return q, trace.record(q, aborted=True, reason=f"non-finite table at step {n}")
        res = float(np.abs(bellman_average(m, q_new, v_star) - q_new).max())
        trace.add(n, alpha, 1, cum, res, 0.0, noise)
        q = q_new
    return q, trace.record(q)


def vanilla_q_discounted(
    m: TabularMDP,
    gamma: float,
    alpha_schedule,
    q0,
    N: int,
    rng: RngStream,
    q_star: np.ndarray | None = None,
    solver_tol: float = 1e-10,
):
    """Synchronous Q-learning baseline, one sample per pair per step.

    alpha_schedule is a callable n -> alpha in (0, 1] (alpha = 1 gives exact
    value iteration on deterministic models) or an averaged StepSchedule.
    """
    q0 = _check_table(m, q0)
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if N < 1:
        raise ValueError("N must be >= 1")
    cap = m.r_max / (1.0 - gamma)
    if np.abs(q0).max() > cap:
        raise ValueError("||Q0||_inf must not exceed r_max / (1 - gamma)")
    weight = alpha_schedule.weight if hasattr(alpha_schedule, "weight") else alpha_schedule
    if q_star is None:
        q_star = solve_discounted_exact(m, gamma, solver_tol)
    sa = m.num_states * m.num_actions
    trace = _QTrace(with_dist=True)
    q = q0.copy()
    cum = 0
    for n in range(1, N + 1):
        alpha = float(weight(n))
        if not 0.0 < alpha <= 1.0:
            raise ValueError(f"alpha_{n} = {alpha} outside (0, 1]")
        cum += sa
        gen = rng.substream(n).generator()
        maxv = q.max(axis=1)
        sampled = _single_sample_max(m, maxv, gen)
        noise = float(gamma * np.abs(sampled - _expected_max(m, maxv)).max())
        target = m.rewards + gamma * sampled
        q_new = (1.0 - alpha) * q + alpha * target
        if not np.isfinite(q_new).all():
            return q, trace.record(q, aborted=True, reason=f"non-finite table at step {n}")
        res = float(np.abs(bellman_discounted(m, q_new, gamma) - q_new).max())
        dist = float(np.abs(q_new - q_star).max())
        trace.add(n, alpha, 1, cum, res, dist, noise)
        q = q_new
    return q, trace.record(q)


def discounted_iteration_count(
    m: TabularMDP, gamma: float, epsilon: float, q0_norm: float = 0.0
) -> int:
    """Iteration count N meeting ||Q^N - Q*||_inf <= epsilon in expectation.

    Solves N >= (dist0 + 2 sigma_eff(N)) / (epsilon (1 - gamma)) by fixed-point
    iteration, where dist0 = ||Q0||_inf + r_max/(1-gamma) bounds the initial
    distance a priori and sigma_eff is a Hoeffding estimate of the sup-norm
    noise scale at unit batch size, with the union-bound confidence tied to
    the largest batch of the n^2 gamma^(N-n) schedule (about N^2 at n = N):

      sigma_eff(N) = gamma r_max (sqrt(8 log(2 S A sqrt(N^2 + 1))) + 2) / (1 - gamma).
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if q0_norm < 0:
        raise ValueError("q0_norm must be >= 0")
    rmax = m.r_max
    sa = m.num_states * m.num_actions
    dist0 = q0_norm + rmax / (1.0 - gamma)

    def sigma_eff(n_val: int) -> float:
        k_max = math.sqrt(float(n_val) ** 2 + 1.0)
        return (
            gamma * rmax * (math.sqrt(8.0 * math.log(2.0 * sa * k_max)) + 2.0) / (1.0 - gamma)
        )

    n_iter = 1
    for _ in range(64):
        target = (dist0 + 2.0 * sigma_eff(n_iter)) / (epsilon * (1.0 - gamma))
        new_n = max(1, math.ceil(target))
        if new_n == n_iter:
            break
        n_iter = new_n
    return n_iter
