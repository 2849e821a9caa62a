"""Convex-analysis kernel for scalar penalty functions.

Provides evaluation, subdifferential intervals, proximal resolvents and the
associated Yosida (Moreau-envelope gradient) approximations for proper convex
lower-semicontinuous functions on the real line, together with Euclidean
projections onto simple convex sets. Catalog entries carry closed-form
resolvents; custom functions fall back to a safeguarded one-dimensional
minimization (golden-section bracketing followed by a bisection polish on the
optimality inclusion).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

__all__ = [
    "ConvexFunction",
    "ResolventError",
    "zero",
    "quadratic",
    "absolute",
    "indicator_interval",
    "indicator_point",
    "custom",
    "catalog_examples",
    "resolvent",
    "yosida_gradient",
    "minimal_subgradient",
    "IntervalDomain",
    "BallDomain",
    "HalfspaceDomain",
    "project_to_convex",
]

_GOLD = (math.sqrt(5.0) - 1.0) / 2.0


class ResolventError(RuntimeError):
    """Raised when the numeric proximal minimization fails to converge."""


@dataclass(frozen=True)
class ConvexFunction:
    """A proper convex lsc function R -> (-inf, +inf].

    Attributes
    ----------
    evaluate : callable
        y -> value; +inf is allowed outside the effective domain. Accepts
        scalars; catalog entries also accept ndarrays.
    subdifferential : callable
        y -> (lo, hi) closed interval of subgradients, or None where the
        subdifferential is empty. Endpoints may be +-inf.
    resolvent : callable
        (x, eps) -> argmin_y  phi(y) + (y - x)^2 / (2 eps). Vectorized over x.
    kind_tag : str
        One of zero, quadratic, abs, indicator_interval, indicator_point,
        custom.
    """

    evaluate: Callable
    subdifferential: Callable
    resolvent: Callable
    kind_tag: str
    label: str = ""

    def __repr__(self):  # pragma: no cover - debugging aid
        return f"ConvexFunction({self.label or self.kind_tag})"

    @property
    def is_zero(self) -> bool:
        return self.kind_tag == "zero"


def resolvent(phi: ConvexFunction, x, eps: float):
    """Proximal map J_eps(x), the unique minimizer of phi(y) + |y-x|^2/(2 eps)."""
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    return phi.resolvent(x, eps)


def yosida_gradient(phi: ConvexFunction, x, eps: float):
    """Yosida approximation (x - J_eps(x)) / eps; 1/eps-Lipschitz and monotone.

    The returned value is a subgradient of phi at J_eps(x).
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    if phi.is_zero:
        # identity resolvent; avoids a needless array round trip
        return np.zeros_like(np.asarray(x, dtype=float)) if np.ndim(x) else 0.0
    j = phi.resolvent(x, eps)
    return (np.asarray(x, dtype=float) - j) / eps


def minimal_subgradient(phi: ConvexFunction, y: float) -> Optional[float]:
    """Minimal-norm element of the subdifferential interval, None if empty."""
    interval = phi.subdifferential(y)
    if interval is None:
        return None
    lo, hi = interval
    if lo <= 0.0 <= hi:
        return 0.0
    return hi if hi < 0.0 else lo


# ---------------------------------------------------------------------------
# catalog


def zero() -> ConvexFunction:
    """phi identically 0; the resolvent is the identity."""
    return ConvexFunction(
        evaluate=lambda y: np.zeros_like(np.asarray(y, dtype=float)) if np.ndim(y) else 0.0,
        subdifferential=lambda y: (0.0, 0.0),
        resolvent=lambda x, eps: np.asarray(x, dtype=float) + 0.0,
        kind_tag="zero",
        label="zero",
    )


def quadratic(c: float) -> ConvexFunction:
    """phi(y) = c y^2 / 2 with c >= 0; resolvent x / (1 + c eps)."""
    if c < 0.0:
        raise ValueError("quadratic coefficient must be nonnegative")
    return ConvexFunction(
        evaluate=lambda y: 0.5 * c * np.asarray(y, dtype=float) ** 2,
        subdifferential=lambda y: (c * y, c * y),
        resolvent=lambda x, eps: np.asarray(x, dtype=float) / (1.0 + c * eps),
        kind_tag="quadratic",
        label=f"quadratic:{c:g}",
    )


def absolute(c: float = 1.0) -> ConvexFunction:
    """phi(y) = c |y|; the resolvent is soft thresholding at level c eps."""
    if c < 0.0:
        raise ValueError("absolute-value weight must be nonnegative")

    def subdiff(y):
        if y > 0.0:
            return (c, c)
        if y < 0.0:
            return (-c, -c)
        return (-c, c)

    def prox(x, eps):
        x = np.asarray(x, dtype=float)
        return np.sign(x) * np.maximum(np.abs(x) - c * eps, 0.0)

    return ConvexFunction(
        evaluate=lambda y: c * np.abs(np.asarray(y, dtype=float)),
        subdifferential=subdiff,
        resolvent=prox,
        kind_tag="abs",
        label=f"abs:{c:g}",
    )


def indicator_interval(lower: float, upper: float) -> ConvexFunction:
    """Indicator of [lower, upper]; the resolvent is the clamp onto the set."""
    if not lower <= upper:
        raise ValueError(f"empty interval [{lower}, {upper}]")

    def ev(y):
        y = np.asarray(y, dtype=float)
        inside = (y >= lower) & (y <= upper)
        out = np.where(inside, 0.0, np.inf)
        return float(out) if out.ndim == 0 else out

    def subdiff(y):
        if y < lower or y > upper:
            return None
        lo = -math.inf if y == lower else 0.0
        hi = math.inf if y == upper else 0.0
        if lower == upper:
            return (-math.inf, math.inf)
        return (lo, hi)

    return ConvexFunction(
        evaluate=ev,
        subdifferential=subdiff,
        resolvent=lambda x, eps: np.clip(np.asarray(x, dtype=float), lower, upper),
        kind_tag="indicator_interval",
        label=f"indicator:[{lower:g},{upper:g}]",
    )


def indicator_point(p: float) -> ConvexFunction:
    """Indicator of the single point {p}; the resolvent is constant p."""

    def ev(y):
        y = np.asarray(y, dtype=float)
        out = np.where(y == p, 0.0, np.inf)
        return float(out) if out.ndim == 0 else out

    return ConvexFunction(
        evaluate=ev,
        subdifferential=lambda y: (-math.inf, math.inf) if y == p else None,
        resolvent=lambda x, eps: np.full_like(np.asarray(x, dtype=float), p),
        kind_tag="indicator_point",
        label=f"indicator_point:{p:g}",
    )


def custom(
    evaluate: Callable,
    subdifferential: Callable,
    domain: Optional[Tuple[float, float]] = None,
    label: str = "custom",
) -> ConvexFunction:
    """Wrap a user-supplied convex function with a numeric resolvent.

    The resolvent minimizes phi(y) + (y - x)^2/(2 eps) by golden-section
    bracketing (tolerance 1e-10 on the argument, budget 200 iterations)
    followed by a bisection polish on the optimality inclusion. ``domain``
    bounds the search; it is required when the effective domain is too thin
    for bracketing to find finite values (e.g. a single point).
    """

    def prox(x, eps):
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            return _numeric_resolvent(evaluate, subdifferential, domain, float(x), eps)
        flat = x.reshape(-1)
        out = np.array(
            [_numeric_resolvent(evaluate, subdifferential, domain, float(v), eps) for v in flat]
        )
        return out.reshape(x.shape)

    return ConvexFunction(
        evaluate=evaluate,
        subdifferential=subdifferential,
        resolvent=prox,
        kind_tag="custom",
        label=label,
    )


def catalog_examples() -> list:
    """Representative (name, ConvexFunction) pairs covering every catalog kind."""
    return [
        ("zero", zero()),
        ("quadratic:1", quadratic(1.0)),
        ("quadratic:2.5", quadratic(2.5)),
        ("abs:1", absolute(1.0)),
        ("abs:0.7", absolute(0.7)),
        ("indicator:[-1,1]", indicator_interval(-1.0, 1.0)),
        ("indicator:[0,inf]", indicator_interval(0.0, math.inf)),
        ("indicator_point:0", indicator_point(0.0)),
        ("indicator_point:1.5", indicator_point(1.5)),
    ]


# ---------------------------------------------------------------------------
# numeric resolvent


def _numeric_resolvent(phi_eval, phi_subdiff, domain, x, eps, budget=200, xtol=1e-10):
    lo_d, hi_d = domain if domain is not None else (-math.inf, math.inf)
    if lo_d > hi_d:
        raise ValueError("domain hint is empty")
    if lo_d == hi_d:
        return lo_d

    def obj(y):
        v = float(phi_eval(y))
        return v + (y - x) * (y - x) / (2.0 * eps)

    scale = max(1.0, abs(x))
    width_tol = xtol * scale
    spent = 0

    # initial bracket around x, clipped to the domain hint
    r = eps + 1.0 + abs(x)
    a = max(x - r, lo_d)
    b = min(x + r, hi_d)

    # grow the bracket while the objective is still decreasing at an edge
    while spent < budget:
        spent += 1
        fa, fb = obj(a), obj(b)
        inner_a = a + (b - a) * 0.25
        inner_b = b - (b - a) * 0.25
        fia, fib = obj(inner_a), obj(inner_b)
        grow_left = fa < fia and a > lo_d
        grow_right = fb < fib and b < hi_d
        if not grow_left and not grow_right:
            break
        if grow_left:
            a = max(a - (b - a), lo_d)
        if grow_right:
            b = min(b + (b - a), hi_d)
        if b - a > 1e12 * scale:
            raise ResolventError("bracket expansion diverged; supply a domain hint")

    c = b - _GOLD * (b - a)
    d = a + _GOLD * (b - a)
    fc, fd = obj(c), obj(d)
    while (b - a) > width_tol and spent < budget:
        spent += 1
        if math.isinf(fc) and math.isinf(fd):
            # both probes outside the effective domain: locate a finite value
            grid = np.linspace(a, b, 65)
            vals = [obj(g) for g in grid]
            finite = [k for k, v in enumerate(vals) if math.isfinite(v)]
            if not finite:
                raise ResolventError(
                    "no finite objective value found; supply a domain hint"
                )
            k0 = min(finite, key=lambda k: vals[k])
            a = grid[max(k0 - 1, 0)]
            b = grid[min(k0 + 1, len(grid) - 1)]
            c = b - _GOLD * (b - a)
            d = a + _GOLD * (b - a)
            fc, fd = obj(c), obj(d)
            continue
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLD * (b - a)
            fc = obj(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLD * (b - a)
            fd = obj(d)

    if (b - a) > 1e6 * width_tol:
        raise ResolventError(f"golden section did not converge (width {b - a:.3e})")

    y = 0.5 * (a + b)

    # polish with bisection on the inclusion 0 in y - x + eps * subdiff(y)
    pa, pb = a, b
    for _ in range(60):
        mid = 0.5 * (pa + pb)
        interval = phi_subdiff(mid)
        if interval is None:
            break
        s_lo = mid - x + eps * interval[0]
        s_hi = mid - x + eps * interval[1]
        if s_lo <= 0.0 <= s_hi:
            return mid
        if s_hi < 0.0:
            pa = mid
        else:
            pb = mid
        y = 0.5 * (pa + pb)
    return y


# ---------------------------------------------------------------------------
# projections onto simple convex sets


@dataclass(frozen=True)
class IntervalDomain:
    """Closed interval [lower, upper] in R; endpoints may be infinite."""

    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ValueError(f"empty interval [{self.lower}, {self.upper}]")

    @property
    def dim(self) -> int:
        return 1

    def ell(self, x):
        """Signed boundary gauge: negative inside, zero on the boundary."""
        v = _first_coord(x)
        return np.maximum(self.lower - v, v - self.upper)

    def project(self, x):
        x = np.asarray(x, dtype=float)
        v = _first_coord(x)
        p = np.clip(v, self.lower, self.upper)
        dist = np.abs(v - p)
        return p.reshape(x.shape), dist


@dataclass(frozen=True)
class BallDomain:
    """Closed Euclidean ball with the given center and radius."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))
        if self.radius < 0.0:
            raise ValueError("radius must be nonnegative")

    @property
    def dim(self) -> int:
        return self.center.size

    def ell(self, x):
        x2 = _as_batch(x, self.dim)
        return np.linalg.norm(x2 - self.center, axis=-1) - self.radius

    def project(self, x):
        x = np.asarray(x, dtype=float)
        x2 = _as_batch(x, self.dim)
        delta = x2 - self.center
        norm = np.linalg.norm(delta, axis=-1)
        outside = norm > self.radius
        safe = np.where(norm > 0.0, norm, 1.0)
        factor = np.where(outside, self.radius / safe, 1.0)
        p = self.center + delta * factor[..., None]
        dist = np.where(outside, norm - self.radius, 0.0)
        return p.reshape(x.shape) if x.shape else p, dist


@dataclass(frozen=True)
class HalfspaceDomain:
    """Halfspace {x : normal . x <= offset} with a nonzero normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        object.__setattr__(self, "normal", np.atleast_1d(np.asarray(self.normal, dtype=float)))
        if not np.linalg.norm(self.normal) > 0.0:
            raise ValueError("halfspace normal must be nonzero")

    @property
    def dim(self) -> int:
        return self.normal.size

    def ell(self, x):
        x2 = _as_batch(x, self.dim)
        return (x2 @ self.normal - self.offset) / np.linalg.norm(self.normal)

    def project(self, x):
        x = np.asarray(x, dtype=float)
        x2 = _as_batch(x, self.dim)
        nn = self.normal @ self.normal
        excess = np.maximum(x2 @ self.normal - self.offset, 0.0)
        p = x2 - excess[..., None] * self.normal / nn
        dist = excess / math.sqrt(nn)
        return p.reshape(x.shape), dist


def _first_coord(x):
    x = np.asarray(x, dtype=float)
    if x.ndim >= 1 and x.shape[-1] == 1:
        return x[..., 0]
    return x


def _as_batch(x, m):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1 and x.size == m:
        return x[None, :]
    return x


def project_to_convex(domain, x):
    """Euclidean projection of a single point; returns (point, distance)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p, dist = domain.project(x[None, :] if x.ndim == 1 else x)
    p = np.asarray(p, dtype=float).reshape(x.shape)
    return p, float(np.asarray(dist).reshape(-1)[0])
