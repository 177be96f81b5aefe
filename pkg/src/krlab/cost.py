"""Concave metric transport costs: the bounded-log family and the truncated
linear cost.

Both families are concave, bounded and vanish at zero, so ``d(x, y) =
c(|x - y|)`` is a (bounded) metric.  The bounded-log cost is the workhorse:

    c(z) = log(z/delta + 1)                                  for z <= radius,
    c(z) = log(radius/delta + 1)
           + radius/(radius + delta) * (1 - radius/z)        for z >= radius.

It is C^1 across ``z = radius`` (both one-sided slopes equal
``1/(delta + radius)``), strictly concave, and bounded by
``log(radius/delta + 1) + radius/(radius + delta)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class CostKind(enum.Enum):
    BOUNDED_LOG = "bounded_log"
    TRUNCATED_LINEAR = "truncated_linear"


@dataclass(frozen=True)
class CostSpec:
    """Cost family with its length scales.

    ``delta`` is the short-distance scale of the bounded-log cost (ignored by
    the truncated linear cost), ``radius`` the saturation/truncation scale.
    """

    kind: CostKind
    radius: float
    delta: float | None = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise ValueError(f"radius must be positive, got {self.radius}")
        if self.kind is CostKind.BOUNDED_LOG:
            if self.delta is None or not (math.isfinite(self.delta) and self.delta > 0):
                raise ValueError(f"bounded-log cost needs delta > 0, got {self.delta}")


def bounded_log(delta: float, radius: float) -> CostSpec:
    return CostSpec(CostKind.BOUNDED_LOG, radius=radius, delta=delta)


def truncated_linear(radius: float) -> CostSpec:
    return CostSpec(CostKind.TRUNCATED_LINEAR, radius=radius)


def _validate_arg(z, name: str = "z"):
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError(f"{name} must be finite")
    if np.any(z < 0):
        raise ValueError(f"{name} must be nonnegative")
    return z


def cost_eval(spec: CostSpec, z):
    """Evaluate c(z) elementwise for z >= 0."""
    zs = _validate_arg(z)
    if spec.kind is CostKind.TRUNCATED_LINEAR:
        out = np.minimum(zs, spec.radius)
    else:
        d, r = spec.delta, spec.radius
        # log1p keeps full accuracy for z << delta
        inner = np.log1p(np.minimum(zs, r) / d)
        zsafe = np.maximum(zs, r)
        outer = math.log1p(r / d) + r / (r + d) * (1.0 - r / zsafe)
        out = np.where(zs <= r, inner, outer)
    return out if isinstance(z, np.ndarray) else float(out)


def cost_derivative(spec: CostSpec, z):
    """c'(z) for the bounded-log cost; finite 1/delta at z = 0."""
    if spec.kind is not CostKind.BOUNDED_LOG:
        raise ValueError("cost_derivative is defined for the bounded-log cost only")
    zs = _validate_arg(z)
    d, r = spec.delta, spec.radius
    zsafe = np.maximum(zs, r)
    out = np.where(zs <= r, 1.0 / (d + zs), r * r / ((r + d) * zsafe * zsafe))
    return out if isinstance(z, np.ndarray) else float(out)


def cost_inverse(spec: CostSpec, xi):
    """Inverse of the logarithmic branch: c^{-1}(xi) = delta*(exp(xi) - 1).

    Only defined for the bounded-log cost and xi <= log(radius/delta + 1),
    i.e. while the inverse stays on the first branch.
    """
    if spec.kind is not CostKind.BOUNDED_LOG:
        raise ValueError("cost_inverse is defined for the bounded-log cost only")
    xs = _validate_arg(xi, "xi")
    branch_top = math.log1p(spec.radius / spec.delta)
    if np.any(xs > branch_top * (1 + 1e-12) + 1e-15):
        raise ValueError(f"xi exceeds log(radius/delta + 1) = {branch_top}")
    out = spec.delta * np.expm1(xs)
    return out if isinstance(xi, np.ndarray) else float(out)


def cost_sup(spec: CostSpec) -> float:
    """Supremum of c over [0, inf): the global cost bound."""
    if spec.kind is CostKind.TRUNCATED_LINEAR:
        return spec.radius
    r, d = spec.radius, spec.delta
    return math.log1p(r / d) + r / (r + d)
