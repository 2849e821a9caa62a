"""Estimators for the per-step conditional expectations of the backward pass.

Three interchangeable hypothesis classes are provided:

* ``lsmc_poly`` -- ordinary least squares on total-degree polynomial features
  of the current state, solved through a rank-revealing SVD factorization.
  Rank-deficient designs (all states equal, e.g. a deterministic forward)
  degrade gracefully to the sample mean, which is then the exact conditional
  expectation.
* ``binning`` -- equal-count (quantile) bins on the first state coordinate
  with the bin mean as the estimate; one-dimensional states only.
* ``tree_exact`` -- exact equal-weight averages over the paths sharing a
  state, valid on fully enumerated Rademacher ensembles.

Every fitted estimator is a deterministic function of the step-i states
alone, which is the measurability the backward schemes rely on.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .problem import EstimatorKind

__all__ = [
    "RegressionError",
    "ConditionalEstimator",
    "fit_conditional",
    "evaluate_conditional",
    "fit_z_regression",
    "ZEstimator",
]


class RegressionError(RuntimeError):
    """Fitting failed; the message carries the diagnostic."""


class ConditionalEstimator:
    """Common interface: predict(states (M', m)) -> (M',)."""

    kind: str

    def predict(self, states: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError


def _as_states(states) -> np.ndarray:
    s = np.asarray(states, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    if s.ndim != 2:
        raise ValueError("states must have shape (paths, dims)")
    return s


@dataclass(frozen=True)
class PolyEstimator(ConditionalEstimator):
    kind = "lsmc_poly"

    coef: np.ndarray
    powers: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    condition_number: float
    clip: Optional[Tuple[float, float]] = None

    def design(self, states: np.ndarray) -> np.ndarray:
        z = (_as_states(states) - self.center) / self.scale
        # column f is the product over dims of z ** powers[f]
        return np.prod(z[:, None, :] ** self.powers[None, :, :], axis=2)

    def predict(self, states: np.ndarray) -> np.ndarray:
        out = self.design(states) @ self.coef
        if self.clip is not None:
            out = np.clip(out, self.clip[0], self.clip[1])
        return out


@dataclass(frozen=True)
class BinEstimator(ConditionalEstimator):
    kind = "binning"

    edges: np.ndarray
    means: np.ndarray

    def predict(self, states: np.ndarray) -> np.ndarray:
        s = _as_states(states)[:, 0]
        idx = np.searchsorted(self.edges, s, side="right")
        return self.means[idx]


@dataclass(frozen=True)
class TreeEstimator(ConditionalEstimator):
    kind = "tree_exact"

    table: Dict[bytes, float]

    def predict(self, states: np.ndarray) -> np.ndarray:
        s = _as_states(states) + 0.0  # normalizes -0.0 so keys are canonical
        out = np.empty(s.shape[0])
        for row in range(s.shape[0]):
            key = s[row].tobytes()
            try:
                out[row] = self.table[key]
            except KeyError:
                raise RegressionError(
                    "query state is not a node of the fitted tree"
                ) from None
        return out


def _total_degree_powers(m: int, degree: int) -> np.ndarray:
    combos = [
        e
        for e in itertools.product(range(degree + 1), repeat=m)
        if sum(e) <= degree
    ]
    combos.sort(key=lambda e: (sum(e), e))
    return np.array(combos, dtype=int)


def _fit_poly(values, states, degree, clip_to_range) -> PolyEstimator:
    s = _as_states(states)
    M, m = s.shape
    powers = _total_degree_powers(m, degree)
    if M < len(powers):
        raise RegressionError(
            f"underdetermined regression: {M} samples for {len(powers)} basis functions"
        )
    center = s.mean(axis=0)
    spread = s.std(axis=0)
    scale = np.where(spread > 0.0, spread, 1.0)
    z = (s - center) / scale
    design = np.prod(z[:, None, :] ** powers[None, :, :], axis=2)
    if not np.all(np.isfinite(design)):
        raise RegressionError("non-finite design matrix")
    coef, _, rank, sv = np.linalg.lstsq(design, values, rcond=None)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0.0 else np.inf
    clip = (float(np.min(values)), float(np.max(values))) if clip_to_range else None
    return PolyEstimator(
        coef=coef, powers=powers, center=center, scale=scale,
        condition_number=cond, clip=clip,
    )


def _fit_binning(values, states, num_bins) -> BinEstimator:
    s = _as_states(states)
    if s.shape[1] != 1:
        raise RegressionError("binning supports one-dimensional states only")
    v = s[:, 0]
    edges = np.quantile(v, np.linspace(0.0, 1.0, num_bins + 1)[1:-1])
    idx = np.searchsorted(edges, v, side="right")
    counts = np.bincount(idx, minlength=num_bins)
    sums = np.bincount(idx, weights=values, minlength=num_bins)
    overall = float(np.mean(values))
    means = np.where(counts > 0, sums / np.maximum(counts, 1), overall)
    return BinEstimator(edges=edges, means=means)


def _fit_tree(values, states) -> TreeEstimator:
    s = _as_states(states) + 0.0
    uniq, inverse = np.unique(s, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    sums = np.bincount(inverse, weights=values, minlength=len(uniq))
    counts = np.bincount(inverse, minlength=len(uniq))
    means = sums / counts
    table = {uniq[k].tobytes(): float(means[k]) for k in range(len(uniq))}
    return TreeEstimator(table=table)


def fit_conditional(
    values: np.ndarray,
    states: np.ndarray,
    kind: EstimatorKind,
    enumerated: bool = False,
) -> ConditionalEstimator:
    """Least-squares projection of the sampled values onto the chosen
    hypothesis class of functions of the state.

    tree_exact is only meaningful on fully enumerated ensembles; callers must
    assert that via ``enumerated=True``.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 1:
        raise ValueError("values must be a flat per-path array")
    if not np.all(np.isfinite(values)):
        raise RegressionError("non-finite regression targets")
    if kind.name == "lsmc_poly":
        return _fit_poly(values, states, kind.degree, kind.clip_to_range)
    if kind.name == "binning":
        return _fit_binning(values, states, kind.num_bins)
    if kind.name == "tree_exact":
        if not enumerated:
            raise RegressionError("tree_exact requires a fully enumerated ensemble")
        return _fit_tree(values, states)
    raise ValueError(f"unknown estimator kind {kind.name!r}")


def evaluate_conditional(estimator: ConditionalEstimator, states: np.ndarray) -> np.ndarray:
    """Evaluate a fitted estimator at one or many states."""
    return estimator.predict(states)


@dataclass(frozen=True)
class ZEstimator:
    """Componentwise estimators of E^i[value * dW_k] / h."""

    components: tuple

    def predict(self, states: np.ndarray) -> np.ndarray:
        return np.column_stack([est.predict(states) for est in self.components])


def fit_z_regression(
    next_values: np.ndarray,
    increments: np.ndarray,
    states: np.ndarray,
    kind: EstimatorKind,
    h: float,
    enumerated: bool = False,
) -> ZEstimator:
    """Regression estimator of the martingale integrand: conditional
    expectation of next_values * dW, componentwise, scaled by 1 / h."""
    next_values = np.asarray(next_values, dtype=float)
    increments = np.asarray(increments, dtype=float)
    if increments.ndim == 1:
        increments = increments[:, None]
    comps = []
    for k in range(increments.shape[1]):
        target = next_values * increments[:, k] / h
        comps.append(fit_conditional(target, states, kind, enumerated=enumerated))
    return ZEstimator(components=tuple(comps))
