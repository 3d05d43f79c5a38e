"""Deterministic operators with a declared Lipschitz class.

Every operator carries a dimension, a declared norm, and a Lipschitz constant
gamma in (0, 1]: gamma < 1 declares a contraction, gamma = 1 nonexpansive.
Affine maps are certified at construction; the rest are nonexpansive by
construction. Bellman wrappers adapt the tabular-MDP operators to the same
interface so the iteration engine has a single operator surface.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import L1, L2, LINF, NormKind, as_vector, norm, require_finite

__all__ = [
    "FixedPointInfo",
    "Operator",
    "AffineContraction",
    "PlaneRotation",
    "ShiftProjection",
    "ConstantMap",
    "BellmanDiscountedOp",
    "BellmanAverageOp",
    "project_box",
    "shift_map",
]

_POWER_ITER_TOL = 1e-8
_POWER_ITER_CAP = 10_000


@dataclass(frozen=True)
class FixedPointInfo:
    """A known fixed point, when one is available in closed or solvable form."""

    point: np.ndarray | None
    description: str | None = None


def project_box(x, lam: float) -> np.ndarray:
    """Clamp every coordinate to [0, lam]."""
    if not lam > 0:
        raise ValueError("box edge lam must be positive")
    return np.clip(as_vector(x), 0.0, lam)


def shift_map(y, lam: float) -> np.ndarray:
    """Cyclic shift (y_1, ..., y_d) -> (lam - y_d, y_1, ..., y_{d-1}).

    An L1 isometry: it permutes coordinates and reflects one of them.
    """
    y = as_vector(y)
    out = np.empty_like(y)
    out[0] = lam - y[-1]
    out[1:] = y[:-1]
    return out


class Operator:
    """Base operator: a map R^dim -> R^dim with declared norm and gamma."""

    dim: int
    declared_norm: NormKind
    gamma: float

    def apply(self, x) -> np.ndarray:
        raise NotImplementedError

    def fixed_point_info(self) -> FixedPointInfo:
        return FixedPointInfo(None)

    def _check_dim(self, x: np.ndarray):
        if x.shape[0] != self.dim:
            raise ValueError(
                f"dimension mismatch: operator expects {self.dim}, got {x.shape[0]}"
            )


def _operator_norm_l2_power_iteration(a: np.ndarray) -> float:
    """Largest singular value of a via power iteration on a^T a.

    Deterministic start; converges to tolerance 1e-8 or raises after the
    iteration cap (failure to certify is a construction error).
    """
    d = a.shape[1]
    ata = a.T @ a
    w = np.ones(d) + 1e-3 * np.arange(d)
    w /= np.linalg.norm(w)
    est = 0.0
    for _ in range(_POWER_ITER_CAP):
        w2 = ata @ w
        nw = np.linalg.norm(w2)
        if nw == 0.0:
            return 0.0  # a^T a annihilates w only if a = 0 on its span; zero map
        w = w2 / nw
        new_est = float(np.sqrt(w @ (ata @ w)))
        if abs(new_est - est) <= _POWER_ITER_TOL * max(1.0, new_est):
            return new_est
        est = new_est
    raise ValueError("power iteration failed to certify the L2 operator norm")


class AffineContraction(Operator):
    """x -> A x + b with ||A|| <= gamma under the declared norm.

    The operator norm is validated at construction: exactly for l1 (max
    absolute column sum) and linf (max absolute row sum), via power iteration
    for l2. Other norm kinds are not certifiable here and are rejected.
    """

    def __init__(self, matrix, offset, gamma: float, declared_norm: NormKind = L2):
        a = np.array(matrix, dtype=np.float64)
        b = as_vector(offset).copy()
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("matrix must be square")
        if a.shape[0] != b.shape[0]:
            raise ValueError("matrix and offset dimensions disagree")
        require_finite(a.ravel(), "matrix")
        require_finite(b, "offset")
        if not 0.0 < gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if declared_norm.tag == "l1":
            opnorm = float(np.abs(a).sum(axis=0).max())
        elif declared_norm.tag == "linf":
            opnorm = float(np.abs(a).sum(axis=1).max())
        elif declared_norm.tag == "l2":
            opnorm = _operator_norm_l2_power_iteration(a)
        else:
            raise ValueError(
                f"operator-norm certification unsupported for {declared_norm.label()}"
            )
        slack = 1e-12 if declared_norm.tag in ("l1", "linf") else _POWER_ITER_TOL
        if opnorm > gamma + slack:
            raise ValueError(
                f"matrix norm {opnorm:.12g} exceeds declared gamma {gamma:.12g}"
            )
        a.setflags(write=False)
        b.setflags(write=False)
        self.matrix = a
        self.offset = b
        self.dim = b.shape[0]
        self.declared_norm = declared_norm
        self.gamma = float(gamma)

    def apply(self, x) -> np.ndarray:
        x = as_vector(x)
        self._check_dim(x)
        return self.matrix @ x + self.offset

    def fixed_point_info(self) -> FixedPointInfo:
        eye = np.eye(self.dim)
        try:
            point = np.linalg.solve(eye - self.matrix, self.offset)
        except np.linalg.LinAlgError:
            return FixedPointInfo(None, "singular I - A; fixed point not isolated")
        if not np.isfinite(point).all():
            return FixedPointInfo(None, "ill-conditioned I - A")
        return FixedPointInfo(point, "solution of (I - A) x = b")


class PlaneRotation(Operator):
    """Rotation by a fixed angle in the plane of the first two coordinates."""

    def __init__(self, theta: float, dim: int = 2, declared_norm: NormKind = L2):
        if dim < 2:
            raise ValueError("plane rotation needs dim >= 2")
        self.theta = float(theta)
        self.dim = int(dim)
        self.declared_norm = declared_norm
        self.gamma = 1.0
        c, s = np.cos(self.theta), np.sin(self.theta)
        self._cos, self._sin = c, s

    def apply(self, x) -> np.ndarray:
        x = as_vector(x)
        self._check_dim(x)
        out = x.copy()
        out[0] = self._cos * x[0] - self._sin * x[1]
        out[1] = self._sin * x[0] + self._cos * x[1]
        return out

    def fixed_point_info(self) -> FixedPointInfo:
        return FixedPointInfo(
            np.zeros(self.dim),
            "origin; unique in the rotation plane unless the angle is a multiple of 2*pi",
        )


class ShiftProjection(Operator):
    """Shift composed with the box projection: x -> shift_map(project_box(x)).

    Nonexpansive under L1 (the projection is, and the shift is an isometry),
    with bounded range: every output lies in [0, lam]^d, so its L1 norm is at
    most d * lam. Fixed point (lam/2, ..., lam/2).
    """

    def __init__(self, lam: float, dim: int):
        if not lam > 0:
            raise ValueError("lam must be positive")
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.lam = float(lam)
        self.dim = int(dim)
        self.declared_norm = L1
        self.gamma = 1.0

    def apply(self, x) -> np.ndarray:
        x = as_vector(x)
        self._check_dim(x)
        return shift_map(project_box(x, self.lam), self.lam)

    def range_bound(self) -> float:
        """L1 bound on the operator's range: ||Tx||_1 <= d * lam."""
        return self.dim * self.lam

    def fixed_point_info(self) -> FixedPointInfo:
        return FixedPointInfo(
            np.full(self.dim, self.lam / 2.0), "unique fixed point (lam/2, ..., lam/2)"
        )


class ConstantMap(Operator):
    """x -> target for every x. Lipschitz with any positive constant."""

    def __init__(self, target, gamma: float = 1.0, declared_norm: NormKind = L2):
        t = as_vector(target).copy()
        require_finite(t, "target")
        if not 0.0 < gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        t.setflags(write=False)
        self.target = t
        self.dim = t.shape[0]
        self.declared_norm = declared_norm
        self.gamma = float(gamma)

    def apply(self, x) -> np.ndarray:
        x = as_vector(x)
        self._check_dim(x)
        return self.target.copy()

    def fixed_point_info(self) -> FixedPointInfo:
        return FixedPointInfo(self.target.copy(), "the constant target")


class BellmanDiscountedOp(Operator):
    """Discounted Bellman update on flattened Q-tables; gamma-contraction in sup norm."""

    def __init__(self, model, gamma: float, solver_tol: float = 1e-10):
        from . import mdp as _mdp  # deferred: mdp depends on the engine layer

        self._mdp_mod = _mdp
        self.model = model
        if not 0.0 < gamma < 1.0:
            raise ValueError("discount gamma must lie in (0, 1)")
        self.discount = float(gamma)
        self.solver_tol = float(solver_tol)
        self.dim = model.num_states * model.num_actions
        self.declared_norm = LINF
        self.gamma = float(gamma)

    def _as_table(self, x: np.ndarray) -> np.ndarray:
        return x.reshape(self.model.num_states, self.model.num_actions)

    def apply(self, x) -> np.ndarray:
        x = as_vector(x)
        self._check_dim(x)
        out = self._mdp_mod.bellman_discounted(self.model, self._as_table(x), self.discount)
        return out.ravel()

    def fixed_point_info(self) -> FixedPointInfo:
        q = self._mdp_mod.solve_discounted_exact(self.model, self.discount, self.solver_tol)
        return FixedPointInfo(q.ravel(), f"value iteration solution at tol {self.solver_tol:g}")


class BellmanAverageOp(Operator):
    """Average-reward Bellman update (offset by v*) on flattened Q-tables; nonexpansive in sup norm."""

    def __init__(self, model, v_star: float, solver_tol: float = 1e-10):
        from . import mdp as _mdp

        self._mdp_mod = _mdp
        self.model = model
        self.v_star = float(v_star)
        self.solver_tol = float(solver_tol)
        self.dim = model.num_states * model.num_actions
        self.declared_norm = LINF
        self.gamma = 1.0

    def _as_table(self, x: np.ndarray) -> np.ndarray:
        return x.reshape(self.model.num_states, self.model.num_actions)

    def apply(self, x) -> np.ndarray:
        x = as_vector(x)
        self._check_dim(x)
        out = self._mdp_mod.bellman_average(self.model, self._as_table(x), self.v_star)
        return out.ravel()

    def fixed_point_info(self) -> FixedPointInfo:
        sol = self._mdp_mod.solve_average_exact(self.model, self.solver_tol)
        return FixedPointInfo(
            sol.q_star.ravel(),
            "relative value iteration solution, Max-normalized; unique up to constant tables",
        )


def lipschitz_violation(op: Operator, x, y) -> float:
    """max(0, ||Tx - Ty|| - gamma ||x - y||) under the declared norm; test helper."""
    tx, ty = op.apply(x), op.apply(y)
    lhs = norm(tx - ty, op.declared_norm)
    rhs = op.gamma * norm(as_vector(x) - as_vector(y), op.declared_norm)
    return max(0.0, lhs - rhs)
