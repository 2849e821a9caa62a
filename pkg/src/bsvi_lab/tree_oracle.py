"""Exact dynamic programming on the enumerated two-point tree.

Independent reference for the backward schemes: conditional expectations are
equal-weight averages over the paths sharing a state, computed from sorted
summands so the result is exactly invariant under path reordering, and the
per-node implicit equation is solved by safeguarded bisection rather than the
main solver's Picard iteration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from .convex import yosida_gradient
from .forward import ForwardEnsemble
from .problem import ProblemSpec, SchemeParams

__all__ = ["TreeTable", "OracleError", "oracle_solve"]

_BISECT_TOL = 1e-13


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class TreeTable:
    """Per-level maps from reachable state to exact (y, z, u) values."""

    levels: Tuple[Dict[bytes, Tuple[float, float, float]], ...]

    def value_at(self, level: int, state) -> Tuple[float, float, float]:
        key = _state_key(state)
        return self.levels[level][key]

    def num_states(self, level: int) -> int:
        return len(self.levels[level])


def _state_key(state) -> bytes:
    arr = np.atleast_1d(np.asarray(state, dtype=float)) + 0.0
    return arr.tobytes()


def _exact_mean(values) -> float:
    # sorting makes the float sum a function of the multiset, not the order
    arr = np.sort(np.asarray(values, dtype=float))
    return float(arr.sum() / arr.size)


def _scalar_generator(spec, t, x_state, y, z) -> float:
    x = np.asarray(x_state, dtype=float).reshape(1, -1)
    zz = np.array([[z]])
    return float(spec.eval_generator(t, x, np.array([y]), zz)[0])


def _bisect_node(spec, t, x_state, c, z, h, eps, max_expand=60, iters=200):
    """Root of psi(y) = y - c - h * (F(t, x, y, z) - grad_eps(y)).

    psi is strictly increasing whenever h * K < 1 (the Yosida term only adds
    monotonicity), so an expanding bracket plus bisection is safe.
    """
    phi = spec.penalty

    def psi(y: float) -> float:
        grad = float(yosida_gradient(phi, np.array([y]), eps)[0]) if not phi.is_zero else 0.0
        return y - c - h * (_scalar_generator(spec, t, x_state, y, z) - grad)

    bound = h * (abs(_scalar_generator(spec, t, x_state, c, z)) + abs(
        float(yosida_gradient(phi, np.array([c]), eps)[0]) if not phi.is_zero else 0.0
    ) + 1.0)
    lo, hi = c - bound, c + bound
    for _ in range(max_expand):
        if psi(lo) <= 0.0 <= psi(hi):
            break
        bound *= 2.0
        lo, hi = c - bound, c + bound
    else:
        raise OracleError("could not bracket the implicit node equation")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if hi - lo <= _BISECT_TOL:
            return mid
        if psi(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def oracle_solve(
    spec: ProblemSpec, params: SchemeParams, forward: ForwardEnsemble
) -> TreeTable:
    """Exact backward induction over the enumerated tree.

    Mirrors the configured scheme variant: the implicit per-node equation is
    solved by bisection to 1e-13; the explicit variant averages the generator
    bracket over the children directly. Requires d = 1 and an enumerated
    Rademacher ensemble within the configured cap.
    """
    inc = forward.increments
    if inc.dim != 1:
        raise OracleError("the tree oracle requires d = 1")
    if not inc.enumerated:
        raise OracleError("the tree oracle requires an enumerated ensemble")
    part = forward.partition
    if part.n > params.tree_cap:
        raise OracleError("partition exceeds the enumeration cap")

    n, h = part.n, part.h
    eps = params.eps(h)
    phi = spec.penalty
    states = forward.states  # (M, n+1, m)
    M = states.shape[0]

    levels = [dict() for _ in range(n + 1)]

    # terminal layer
    terminal = spec.eval_terminal(states[:, n, :])
    for j in range(M):
        key = _state_key(states[j, n, :])
        if key not in levels[n]:
            yv = float(terminal[j])
            uv = float(yosida_gradient(phi, np.array([yv]), eps)[0]) if not phi.is_zero else 0.0
            levels[n][key] = (yv, 0.0, uv)

    y_by_path = terminal.astype(float).copy()

    for i in range(n - 1, -1, -1):
        t_i = part.t(i)
        groups: Dict[bytes, list] = {}
        for j in range(M):
            groups.setdefault(_state_key(states[j, i, :]), []).append(j)
        new_y = np.empty(M)
        for key, members in groups.items():
            kids = np.array(members)
            c = _exact_mean(y_by_path[kids])
            zval = _exact_mean(y_by_path[kids] * inc.dw[kids, i, 0]) / h
            x_state = states[members[0], i, :]
            if params.scheme_variant == "implicit":
                yv = _bisect_node(spec, t_i, x_state, c, zval, h, eps)
            else:
                bracket = [
                    _scalar_generator(spec, t_i, x_state, float(y_by_path[j]), zval)
                    - (
                        float(yosida_gradient(phi, np.array([y_by_path[j]]), eps)[0])
                        if not phi.is_zero
                        else 0.0
                    )
                    for j in members
                ]
                yv = c + h * _exact_mean(bracket)
            uv = float(yosida_gradient(phi, np.array([c]), eps)[0]) if not phi.is_zero else 0.0
            levels[i][key] = (yv, zval, uv)
            new_y[kids] = yv
        y_by_path = new_y

    return TreeTable(levels=tuple(levels))
