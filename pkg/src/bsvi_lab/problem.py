"""Problem specification, time partitions and scheme parameters.

A problem bundles the forward coefficients, the backward generator(s), the
terminal condition, the convex penalty and optional reflection domain, plus
the declared joint Lipschitz constant used by step-size checks. Coefficient
callables follow the vectorized numpy convention: the leading axis is the
path axis (see the eval_* helpers for the accepted return shapes).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc

from .convex import ConvexFunction, zero

__all__ = [
    "ProblemSpec",
    "Partition",
    "SchemeParams",
    "EstimatorKind",
    "lsmc_poly",
    "binning",
    "tree_exact",
    "ValidationIssue",
    "ValidationReport",
    "make_partition",
    "validate_spec",
]


@dataclass(frozen=True)
class Partition:
    """Uniform grid 0 = t_0 < ... < t_n = T with step h = T / n.

    Only n and T are stored; node times are derived as i * T / n so node
    values never drift by repeated accumulation of h.
    """

    n: int
    T: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("partition needs at least one step")
        if not self.T > 0.0:
            raise ValueError("horizon must be positive")

    @property
    def h(self) -> float:
        return self.T / self.n

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n + 1) * self.T / self.n

    def t(self, i: int) -> float:
        return i * self.T / self.n


def make_partition(T: float, n: int) -> Partition:
    """Uniform partition of [0, T] into n steps."""
    return Partition(n=n, T=T)


@dataclass(frozen=True)
class ProblemSpec:
    """Decoupled forward-backward problem data.

    Callable shapes, with M the path-batch size: drift(t, x[M, m]) -> (M, m);
    diffusion(t, x) -> (M, m, d); generator(t, x, y[M], z[M, d]) -> (M,);
    terminal(x) -> (M,); boundary_generator(t, x, y) -> (M,). Scalar or
    constant-shaped returns are broadcast. The backward component is scalar;
    m and d are free (the exact tree oracle needs d = 1).
    """

    drift: Callable
    diffusion: Callable
    generator: Callable
    terminal: Callable
    penalty: ConvexFunction
    initial_state: np.ndarray
    horizon: float
    lipschitz_const: float
    dim_noise: int = 1
    t0: float = 0.0
    boundary_generator: Optional[Callable] = None
    domain: object = None
    name: str = ""

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.initial_state, dtype=float))
        object.__setattr__(self, "initial_state", x0)
        if not self.horizon > 0.0:
            raise ValueError("horizon must be positive")
        if not 0.0 <= self.t0 < self.horizon:
            raise ValueError("initial time must lie in [0, T)")
        if self.lipschitz_const < 0.0:
            raise ValueError("Lipschitz constant must be nonnegative")
        if self.dim_noise < 1:
            raise ValueError("noise dimension must be at least 1")
        if self.domain is not None:
            ell0 = float(np.asarray(self.domain.ell(x0[None, :])).reshape(-1)[0])
            if ell0 > 1e-12:
                raise ValueError("initial state must lie in the closed domain")

    @property
    def dim_state(self) -> int:
        return self.initial_state.size

    @property
    def reflected(self) -> bool:
        return self.domain is not None

    # -- vectorized coefficient evaluation -------------------------------

    def eval_drift(self, t: float, x: np.ndarray) -> np.ndarray:
        out = np.asarray(self.drift(t, x), dtype=float)
        return _to_shape(out, x.shape, "drift")

    def eval_diffusion(self, t: float, x: np.ndarray) -> np.ndarray:
        m, d = self.dim_state, self.dim_noise
        target = (x.shape[0], m, d)
        out = np.asarray(self.diffusion(t, x), dtype=float)
        if out.shape == target:
            return out
        if out.ndim == 0 or out.shape == (m, d):
            return np.broadcast_to(out, target)
        if out.shape == (x.shape[0],) and m == d == 1:
            return out[:, None, None]
        if out.shape == (x.shape[0], m) and d == 1:
            return out[:, :, None]
        raise ValueError(
            f"diffusion returned shape {out.shape}, cannot broadcast to {target}"
        )

    def eval_generator(self, t: float, x: np.ndarray, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        out = np.asarray(self.generator(t, x, y, z), dtype=float)
        return _to_shape(out, (x.shape[0],), "generator")

    def eval_terminal(self, x: np.ndarray) -> np.ndarray:
        out = np.asarray(self.terminal(x), dtype=float)
        return _to_shape(out, (x.shape[0],), "terminal")

    def eval_boundary_generator(self, t: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        if self.boundary_generator is None:
            return np.zeros(x.shape[0])
        out = np.asarray(self.boundary_generator(t, x, y), dtype=float)
        return _to_shape(out, (x.shape[0],), "boundary generator")


def _to_shape(out: np.ndarray, shape, what: str) -> np.ndarray:
    if out.shape == shape:
        return out
    try:
        return np.broadcast_to(out, shape)
    except ValueError:
        raise ValueError(f"{what} returned shape {out.shape}, expected {shape}") from None


# ---------------------------------------------------------------------------
# estimator and scheme parameters


@dataclass(frozen=True)
class EstimatorKind:
    """Conditional-expectation estimator selector.

    name is one of lsmc_poly, binning, tree_exact. degree applies to
    lsmc_poly, num_bins to binning. clip_to_range optionally truncates
    polynomial predictions to the sample range (off by default; clipping
    changes the backward fixed-point map, so it is strictly opt-in).
    """

    name: str
    degree: int = 3
    num_bins: int = 20
    clip_to_range: bool = False

    def __post_init__(self):
        if self.name not in ("lsmc_poly", "binning", "tree_exact"):
            raise ValueError(f"unknown estimator kind {self.name!r}")
        if self.name == "lsmc_poly" and self.degree < 0:
            raise ValueError("polynomial degree must be nonnegative")
        if self.name == "binning" and self.num_bins < 1:
            raise ValueError("need at least one bin")


def lsmc_poly(degree: int = 3, clip_to_range: bool = False) -> EstimatorKind:
    return EstimatorKind(name="lsmc_poly", degree=degree, clip_to_range=clip_to_range)


def binning(num_bins: int) -> EstimatorKind:
    return EstimatorKind(name="binning", num_bins=num_bins)


def tree_exact() -> EstimatorKind:
    return EstimatorKind(name="tree_exact")


@dataclass(frozen=True)
class SchemeParams:
    """Everything the backward schemes need apart from the problem itself.

    The penalization width is always derived as eps = h ** a_exponent at the
    call site and never stored. tree_exact estimation requires the Rademacher
    law with d = 1 and n <= tree_cap.
    """

    a_exponent: float = 1.0 / 3.0
    num_paths: int = 10_000
    fixed_point_tol: float = 1e-14
    fixed_point_max_iter: int = 500
    estimator: EstimatorKind = field(default_factory=lambda: lsmc_poly(3))
    scheme_variant: str = "implicit"
    rng_seed: int = 0
    increment_law: str = "gaussian"
    tree_cap: int = 20
    generalized_f_term: bool = False

    def __post_init__(self):
        if not 0.0 < self.a_exponent < 0.5:
            raise ValueError("penalization exponent must lie in (0, 1/2)")
        if self.num_paths < 1:
            raise ValueError("need at least one path")
        if self.fixed_point_tol <= 0.0 or self.fixed_point_max_iter < 1:
            raise ValueError("fixed-point tolerance and budget must be positive")
        if self.scheme_variant not in ("implicit", "explicit"):
            raise ValueError(f"unknown scheme variant {self.scheme_variant!r}")
        if self.increment_law not in ("gaussian", "rademacher"):
            raise ValueError(f"unknown increment law {self.increment_law!r}")
        if self.estimator.name == "tree_exact" and self.increment_law != "rademacher":
            raise ValueError("tree_exact estimation requires the rademacher law")

    def eps(self, h: float) -> float:
        return h ** self.a_exponent

    def with_seed(self, seed: int) -> "SchemeParams":
        return replace(self, rng_seed=seed)


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class ValidationIssue:
    kind: str        # non_finite | lipschitz | contraction
    subject: str     # drift | diffusion | generator | terminal | scheme
    detail: str
    ratio: Optional[float] = None


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple

    @property
    def ok(self) -> bool:
        return not self.issues

    def has(self, kind: str) -> bool:
        return any(issue.kind == kind for issue in self.issues)

    def for_subject(self, subject: str) -> tuple:
        return tuple(issue for issue in self.issues if issue.subject == subject)


_PROBE_COUNT = 64
_LIPSCHITZ_SLACK = 1.5


def validate_spec(
    spec: ProblemSpec,
    params: SchemeParams,
    partition: Optional[Partition] = None,
) -> ValidationReport:
    """Probe the coefficients and report violations; never raises.

    Checks, on a fixed 64-point low-discrepancy sample of (t, x, y, z):
    non-finite outputs, empirical Lipschitz ratios exceeding the declared
    constant by more than 50 percent, and (when a partition is supplied)
    the contraction margin h * (K + h^-a) >= 1 under which the implicit
    per-node fixed point may fail to contract. Report-only by design.
    """
    m, d = spec.dim_state, spec.dim_noise
    dim = 1 + m + 1 + d
    sampler = qmc.Halton(d=dim, scramble=False)
    u = sampler.random(_PROBE_COUNT)

    x0 = spec.initial_state
    x_rad = 3.0 * (1.0 + np.abs(x0))
    t_probe = spec.t0 + u[:, 0] * (spec.horizon - spec.t0)
    x_probe = x0 + (2.0 * u[:, 1 : 1 + m] - 1.0) * x_rad
    y_probe = 6.0 * u[:, 1 + m] - 3.0
    z_probe = 6.0 * u[:, 2 + m :] - 3.0

    issues = []

    def check_finite(subject, values):
        values = np.asarray(values, dtype=float)
        if not np.all(np.isfinite(values)):
            bad = int(np.argwhere(~np.isfinite(values.reshape(values.shape[0], -1)).all(axis=1))[0])
            issues.append(
                ValidationIssue(
                    kind="non_finite",
                    subject=subject,
                    detail=f"non-finite output at probe point {bad}",
                )
            )
            return False
        return True

    # evaluate row by row so every probe carries its own time coordinate
    b_vals = np.stack(
        [spec.eval_drift(float(t_probe[k]), x_probe[k : k + 1])[0] for k in range(_PROBE_COUNT)]
    )
    s_vals = np.stack(
        [spec.eval_diffusion(float(t_probe[k]), x_probe[k : k + 1])[0] for k in range(_PROBE_COUNT)]
    )
    g_vals = spec.eval_terminal(x_probe)
    f_vals = np.array(
        [
            spec.eval_generator(
                float(t_probe[k]), x_probe[k : k + 1], y_probe[k : k + 1], z_probe[k : k + 1]
            )[0]
            for k in range(_PROBE_COUNT)
        ]
    )

    ok_b = check_finite("drift", b_vals)
    ok_s = check_finite("diffusion", s_vals)
    ok_g = check_finite("terminal", g_vals)
    ok_f = check_finite("generator", f_vals)

    limit = _LIPSCHITZ_SLACK * spec.lipschitz_const

    def lipschitz_ratio(values, points):
        # max pairwise |f(p) - f(q)| / |p - q| over the probe set
        values = np.asarray(values, dtype=float).reshape(_PROBE_COUNT, -1)
        points = np.asarray(points, dtype=float).reshape(_PROBE_COUNT, -1)
        dv = np.linalg.norm(values[:, None, :] - values[None, :, :], axis=-1)
        dp = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)
        mask = dp > 1e-12
        if not np.any(mask):
            return 0.0
        return float(np.max(dv[mask] / dp[mask]))

    def check_lipschitz(subject, values, points):
        ratio = lipschitz_ratio(values, points)
        if ratio > limit:
            issues.append(
                ValidationIssue(
                    kind="lipschitz",
                    subject=subject,
                    detail=(
                        f"empirical Lipschitz ratio {ratio:.6g} exceeds "
                        f"{_LIPSCHITZ_SLACK} * declared K = {limit:.6g}"
                    ),
                    ratio=ratio,
                )
            )

    if ok_b:
        check_lipschitz("drift", b_vals, x_probe)
    if ok_s:
        check_lipschitz("diffusion", s_vals.reshape(_PROBE_COUNT, -1), x_probe)
    if ok_g:
        check_lipschitz("terminal", g_vals, x_probe)
    if ok_f:
        xi = np.column_stack([t_probe, x_probe, y_probe, z_probe])
        check_lipschitz("generator", f_vals, xi)

    if partition is not None:
        h = partition.h
        margin = h * (spec.lipschitz_const + h ** (-params.a_exponent))
        if margin >= 1.0:
            issues.append(
                ValidationIssue(
                    kind="contraction",
                    subject="scheme",
                    detail=(
                        f"h*(K + h^-a) = {margin:.6g} >= 1; the implicit "
                        "fixed point may not contract, iteration will damp"
                    ),
                    ratio=margin,
                )
            )

    return ValidationReport(issues=tuple(issues))
