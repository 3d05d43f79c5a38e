"""Dense real vectors, norms, and norm-equivalence constants.

Vectors are plain 1-D float64 numpy arrays. Public operations treat them as
immutable values: inputs are never mutated and results are freshly allocated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "NormKind",
    "L1",
    "L2",
    "LINF",
    "lp",
    "as_vector",
    "require_finite",
    "norm",
    "norm_equivalence_mu",
    "last_nonzero_index",
]


@dataclass(frozen=True)
class NormKind:
    """A norm tag: one of l1, l2, linf, or lp with exponent 1 < p < inf."""

    tag: str
    p: float | None = None

    def __post_init__(self):
        if self.tag not in ("l1", "l2", "linf", "lp"):
            raise ValueError(f"unknown norm tag {self.tag!r}")
        if self.tag == "lp":
            if self.p is None or not math.isfinite(self.p) or not self.p > 1.0:
                raise ValueError("lp norm requires a finite exponent p > 1")
        elif self.p is not None:
            raise ValueError(f"{self.tag} norm carries no exponent")

    def label(self) -> str:
        return self.tag if self.p is None else f"lp({self.p:g})"


L1 = NormKind("l1")
L2 = NormKind("l2")
LINF = NormKind("linf")


def lp(p: float) -> NormKind:
    return NormKind("lp", float(p))


def as_vector(x) -> np.ndarray:
    """Coerce to a 1-D float64 array of dimension >= 1 (copying only if needed)."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    if v.size < 1:
        raise ValueError("vectors must have dimension >= 1")
    return v


def require_finite(v: np.ndarray, what: str = "vector"):
    if not np.isfinite(v).all():
        raise ValueError(f"{what} has non-finite entries")


def norm(v, kind: NormKind) -> float:
    """Exact norm of v under the given kind.

    :raises ValueError: on non-finite entries (domain error).
    """
    v = as_vector(v)
    require_finite(v)
    if kind.tag == "l1":
        return float(np.abs(v).sum())
    if kind.tag == "l2":
        return float(np.linalg.norm(v))
    if kind.tag == "linf":
        return float(np.abs(v).max())
    return float(np.linalg.norm(v, ord=kind.p))


def norm_equivalence_mu(kind: NormKind, dim: int) -> float:
    """Tightest mu with ||x||_kind <= mu * ||x||_2 on R^dim.

    1 for l2/linf and for lp with p >= 2; sqrt(dim) for l1;
    dim^(1/p - 1/2) for lp with p < 2.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if kind.tag == "l1":
        return math.sqrt(dim)
    if kind.tag == "lp" and kind.p < 2.0:
        return dim ** (1.0 / kind.p - 0.5)
    return 1.0


def last_nonzero_index(x) -> int:
    """1-based index of the last coordinate with |x_i| > 0; 0 for the zero vector."""
    v = as_vector(x)
    nz = np.flatnonzero(v)
    return 0 if nz.size == 0 else int(nz[-1]) + 1
