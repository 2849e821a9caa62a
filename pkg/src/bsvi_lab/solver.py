"""Backward solvers for the penalized variational-inequality scheme.

``solve_bsvi`` runs the Yosida-penalized backward recursion (implicit or
explicit variant) on a simulated forward ensemble, estimating every per-step
conditional expectation with the configured regression estimator. The
implicit variant solves one scalar fixed-point equation per path and step;
the conditioning value and the regressed martingale integrand are both frozen
before that solve, so no joint iteration is needed.

``solve_generalized`` runs the boundary-measure variant on a reflected
ensemble: the one-step conditional expectations absorb a G * dA correction
and, by construction, the penalty is absent.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .convex import yosida_gradient
from .forward import ForwardEnsemble
from .problem import Partition, ProblemSpec, SchemeParams
from .regression import RegressionError, fit_conditional, fit_z_regression

__all__ = ["BackwardSolution", "FixedPointError", "SolverError", "solve_fixed_point", "solve_bsvi", "solve_generalized", "solution_to_csv"]


class FixedPointError(RuntimeError):
    """Per-node fixed point failed to converge; carries the last residual."""

    def __init__(self, residual: float, iterations: int):
        super().__init__(
            f"fixed point did not converge within {iterations} iterations "
            f"(last residual {residual:.3e})"
        )
        self.residual = residual
        self.iterations = iterations


class SolverError(RuntimeError):
    """Backward pass aborted; carries the failing step index."""

    def __init__(self, step: int, cause: Exception):
        super().__init__(f"backward pass failed at step {step}: {cause}")
        self.step = step
        self.cause = cause


@dataclass(frozen=True)
class BackwardSolution:
    """Per-node arrays of the backward triple on a path ensemble.

    y[path, node] and u[path, node] are scalar per node, z[path, node, k]
    carries the martingale integrand. The terminal layer is y_n = g(X_n),
    z_n = 0, u_n the Yosida gradient at y_n.
    """

    y: np.ndarray
    z: np.ndarray
    u: np.ndarray
    variant: str
    a_exponent: float
    estimator_name: str
    forward: ForwardEnsemble

    def __post_init__(self):
        self.y.setflags(write=False)
        self.z.setflags(write=False)
        self.u.setflags(write=False)

    @property
    def partition(self) -> Partition:
        return self.forward.partition


def _fixed_point_batch(spec, c, x, z, t, h, eps, tol, max_iter):
    """Solve y = c + h * (F(t, x, y, z) - grad_eps(y)) componentwise.

    Plain Picard iteration while h * (K + 1/eps) < 1; otherwise the update is
    damped with theta = 1 / (1 + h * (K + 1/eps)), which keeps the iteration
    map a contraction for monotone penalties. Stops once the undamped
    residual is within tol, or the iterate is bitwise stationary and the
    residual is as small as the float representation allows.
    """
    phi = spec.penalty
    margin = h * (spec.lipschitz_const + 1.0 / eps)
    theta = 1.0 if margin < 1.0 else 1.0 / (1.0 + margin)
    y = np.array(c, dtype=float)
    residual = np.inf
    for _ in range(max_iter):
        mapped = c + h * (spec.eval_generator(t, x, y, z) - yosida_gradient(phi, y, eps))
        residual = float(np.max(np.abs(mapped - y)))
        if residual <= tol:
            return y
        y_next = y + theta * (mapped - y)
        if np.array_equal(y_next, y):
            scale = 1.0 + float(np.max(np.abs(y)))
            if residual <= max(tol, 32.0 * np.finfo(float).eps * scale):
                return y
            raise FixedPointError(residual, max_iter)
        y = y_next
    raise FixedPointError(residual, max_iter)


def solve_fixed_point(
    c: float,
    x_i: np.ndarray,
    z_i: np.ndarray,
    t_i: float,
    spec: ProblemSpec,
    h: float,
    eps: float,
    tol: float = 1e-14,
    max_iter: int = 500,
) -> float:
    """Scalar per-node implicit solve; see _fixed_point_batch for the method."""
    if h <= 0.0 or eps <= 0.0 or tol <= 0.0:
        raise ValueError("h, eps and tol must be positive")
    x = np.atleast_1d(np.asarray(x_i, dtype=float))[None, :]
    z = np.atleast_1d(np.asarray(z_i, dtype=float))[None, :]
    out = _fixed_point_batch(
        spec, np.array([float(c)]), x, z, t_i, h, eps, tol, max_iter
    )
    return float(out[0])


def _check_tree_usable(params, forward):
    if params.estimator.name != "tree_exact":
        return
    if not forward.increments.enumerated:
        raise ValueError("tree_exact estimation requires an enumerated ensemble")
    if forward.increments.dim != 1:
        raise ValueError("tree_exact estimation requires d = 1")
    if forward.partition.n > params.tree_cap:
        raise ValueError("partition exceeds the enumeration cap")


def solve_bsvi(
    spec: ProblemSpec, params: SchemeParams, forward: ForwardEnsemble
) -> BackwardSolution:
    """Backward Yosida-penalized recursion on a simulated forward ensemble.

    With eps = h^a: the terminal layer is y_n = g(X_n), z_n = 0; then for
    i = n-1 .. 0 the conditioning value c = E_i[y_{i+1}] and the integrand
    z_i = E_i[y_{i+1} dW_i] / h are fitted on the step-i states, and y_i is
    either the per-path implicit fixed point (variant "implicit") or
    c + h * E_i[F(t_i, X_i, y_{i+1}, z_i) - grad_eps(y_{i+1})] with the whole
    bracket fitted as one regression (variant "explicit"). The multiplier
    layer is u_i = grad_eps(c).
    """
    _check_tree_usable(params, forward)
    part = forward.partition
    n, h = part.n, part.h
    eps = params.eps(h)
    M = forward.num_paths
    d = forward.increments.dim
    enumerated = forward.increments.enumerated
    kind = params.estimator
    phi = spec.penalty

    y = np.empty((M, n + 1))
    z = np.zeros((M, n + 1, d))
    u = np.empty((M, n + 1))

    y[:, n] = spec.eval_terminal(forward.states[:, n, :])
    u[:, n] = yosida_gradient(phi, y[:, n], eps)

    for i in range(n - 1, -1, -1):
        states = forward.states[:, i, :]
        dw_i = forward.increments.dw[:, i, :]
        t_i = part.t(i)
        try:
            cond = fit_conditional(y[:, i + 1], states, kind, enumerated=enumerated)
            c = cond.predict(states)
            z_est = fit_z_regression(
                y[:, i + 1], dw_i, states, kind, h, enumerated=enumerated
            )
            z[:, i, :] = z_est.predict(states)
            u[:, i] = yosida_gradient(phi, c, eps)
            if params.scheme_variant == "implicit":
                y[:, i] = _fixed_point_batch(
                    spec, c, states, z[:, i, :], t_i, h, eps,
                    params.fixed_point_tol, params.fixed_point_max_iter,
                )
            else:
                bracket = spec.eval_generator(
                    t_i, states, y[:, i + 1], z[:, i, :]
                ) - yosida_gradient(phi, y[:, i + 1], eps)
                best = fit_conditional(bracket, states, kind, enumerated=enumerated)
                y[:, i] = c + h * best.predict(states)
        except (RegressionError, FixedPointError) as exc:
            raise SolverError(step=i, cause=exc) from exc

    return BackwardSolution(
        y=y, z=z, u=u,
        variant=params.scheme_variant,
        a_exponent=params.a_exponent,
        estimator_name=kind.name,
        forward=forward,
    )


def solve_generalized(
    spec: ProblemSpec, params: SchemeParams, forward: ForwardEnsemble
) -> BackwardSolution:
    """Backward recursion with boundary-measure increments on a reflected
    ensemble.

    The one-step value is y_i = E_i[y_{i+1} - G(t_{i+1}, X_{i+1}, y_{i+1})
    dA_i] and the integrand z_i = E_i[(y_{i+1} - G * dA_i) dW_i] / h. The
    penalty must be identically zero; the displayed recursion carries no
    generator term, but ``params.generalized_f_term`` optionally adds an
    implicit h * F(t_i, X_i, y_i, z_i) correction for experimentation.
    """
    if forward.boundary is None:
        raise ValueError("generalized solve needs a reflected ensemble with A")
    if spec.boundary_generator is None:
        raise ValueError("spec has no boundary generator G")
    if not spec.penalty.is_zero:
        raise ValueError("the generalized scheme is defined for zero penalty only")
    _check_tree_usable(params, forward)

    part = forward.partition
    n, h = part.n, part.h
    eps = params.eps(h)
    M = forward.num_paths
    d = forward.increments.dim
    enumerated = forward.increments.enumerated
    kind = params.estimator

    y = np.empty((M, n + 1))
    z = np.zeros((M, n + 1, d))
    u = np.zeros((M, n + 1))

    y[:, n] = spec.eval_terminal(forward.states[:, n, :])

    for i in range(n - 1, -1, -1):
        states = forward.states[:, i, :]
        next_states = forward.states[:, i + 1, :]
        dw_i = forward.increments.dw[:, i, :]
        da_i = forward.boundary[:, i + 1] - forward.boundary[:, i]
        t_i = part.t(i)
        g_term = spec.eval_boundary_generator(part.t(i + 1), next_states, y[:, i + 1])
        corrected = y[:, i + 1] - g_term * da_i
        try:
            cond = fit_conditional(corrected, states, kind, enumerated=enumerated)
            c = cond.predict(states)
            z_est = fit_z_regression(
                corrected, dw_i, states, kind, h, enumerated=enumerated
            )
            z[:, i, :] = z_est.predict(states)
            if params.generalized_f_term:
                y[:, i] = _fixed_point_batch(
                    spec, c, states, z[:, i, :], t_i, h, eps,
                    params.fixed_point_tol, params.fixed_point_max_iter,
                )
            else:
                y[:, i] = c
        except (RegressionError, FixedPointError) as exc:
            raise SolverError(step=i, cause=exc) from exc

    return BackwardSolution(
        y=y, z=z, u=u,
        variant=params.scheme_variant,
        a_exponent=params.a_exponent,
        estimator_name=kind.name,
        forward=forward,
    )


def solution_to_csv(solution: BackwardSolution, path) -> None:
    """Dump (path, step, t, X..., Y, Z..., U[, A]) rows."""
    fwd = solution.forward
    part = fwd.partition
    m = fwd.states.shape[2]
    d = solution.z.shape[2]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = (
            ["path", "step", "t"]
            + [f"X{k}" for k in range(m)]
            + ["Y"]
            + [f"Z{k}" for k in range(d)]
            + ["U"]
        )
        if fwd.reflected:
            header.append("A")
        writer.writerow(header)
        for j in range(fwd.num_paths):
            for i in range(part.n + 1):
                row = [j, i, f"{part.t(i):.17g}"]
                row += [f"{v:.17g}" for v in fwd.states[j, i]]
                row.append(f"{solution.y[j, i]:.17g}")
                row += [f"{v:.17g}" for v in solution.z[j, i]]
                row.append(f"{solution.u[j, i]:.17g}")
                if fwd.reflected:
                    row.append(f"{fwd.boundary[j, i]:.17g}")
                writer.writerow(row)
