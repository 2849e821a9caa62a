"""Forward simulators: classical Euler and projected Euler with a boundary
process.

The projected variant proposes an unconstrained Euler step, projects it back
onto the closed domain whenever it lands strictly outside, and accumulates
the projection distance in the nondecreasing boundary process A.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .paths import IncrementEnsemble
from .problem import Partition, ProblemSpec

__all__ = ["ForwardEnsemble", "SimulationError", "euler_simulate", "projected_euler_simulate", "forward_to_csv"]

BOUNDARY_TOL = 1e-12


class SimulationError(RuntimeError):
    """A state became non-finite; carries the first offending (path, step)."""

    def __init__(self, path: int, step: int):
        super().__init__(f"non-finite state at path {path}, step {step}")
        self.path = path
        self.step = step


@dataclass(frozen=True)
class ForwardEnsemble:
    """Simulated forward states X[path, node, coord] and, when reflected,
    the cumulative boundary process A[path, node]."""

    states: np.ndarray
    increments: IncrementEnsemble
    boundary: Optional[np.ndarray] = None

    def __post_init__(self):
        self.states.setflags(write=False)
        if self.boundary is not None:
            self.boundary.setflags(write=False)

    @property
    def partition(self) -> Partition:
        return self.increments.partition

    @property
    def num_paths(self) -> int:
        return self.states.shape[0]

    @property
    def reflected(self) -> bool:
        return self.boundary is not None


def _check_finite(x: np.ndarray, step: int) -> None:
    finite = np.isfinite(x).all(axis=1)
    if not finite.all():
        raise SimulationError(path=int(np.argmin(finite)), step=step)


def _euler_proposal(spec, t, x, dw, h):
    drift = spec.eval_drift(t, x)
    diff = spec.eval_diffusion(t, x)
    return x + drift * h + np.einsum("pmd,pd->pm", diff, dw)


def euler_simulate(
    spec: ProblemSpec, partition: Partition, increments: IncrementEnsemble
) -> ForwardEnsemble:
    """Classical Euler scheme X_{i+1} = X_i + b(t_i, X_i) h + sigma(t_i, X_i) dW_i."""
    if spec.domain is not None:
        raise ValueError("spec declares a domain; use projected_euler_simulate")
    _check_compat(spec, partition, increments)
    m = spec.dim_state
    M = increments.num_paths
    h = partition.h
    x = np.empty((M, partition.n + 1, m))
    x[:, 0, :] = spec.initial_state
    for i in range(partition.n):
        x[:, i + 1, :] = _euler_proposal(
            spec, partition.t(i), x[:, i, :], increments.dw[:, i, :], h
        )
        _check_finite(x[:, i + 1, :], i + 1)
    return ForwardEnsemble(states=x, increments=increments)


def projected_euler_simulate(
    spec: ProblemSpec, partition: Partition, increments: IncrementEnsemble
) -> ForwardEnsemble:
    """Projected Euler scheme for the reflected forward equation.

    Each step proposes an unconstrained Euler update; where the proposal
    leaves the closed domain it is replaced by its Euclidean projection and
    the boundary process gains the projection distance.
    """
    if spec.domain is None:
        raise ValueError("spec has no domain to reflect on")
    _check_compat(spec, partition, increments)
    m = spec.dim_state
    M = increments.num_paths
    h = partition.h
    x = np.empty((M, partition.n + 1, m))
    a = np.zeros((M, partition.n + 1))
    x[:, 0, :] = spec.initial_state
    for i in range(partition.n):
        proposal = _euler_proposal(spec, partition.t(i), x[:, i, :], increments.dw[:, i, :], h)
        _check_finite(proposal, i + 1)
        outside = np.asarray(spec.domain.ell(proposal)) > 0.0
        projected, dist = spec.domain.project(proposal)
        x[:, i + 1, :] = np.where(outside[:, None], projected, proposal)
        a[:, i + 1] = a[:, i] + np.where(outside, dist, 0.0)
    return ForwardEnsemble(states=x, increments=increments, boundary=a)


def _check_compat(spec, partition, increments):
    if increments.partition.n != partition.n or increments.partition.T != partition.T:
        raise ValueError("increments were generated on a different partition")
    if increments.dim != spec.dim_noise:
        raise ValueError("increment components do not match the noise dimension")


def forward_to_csv(ensemble: ForwardEnsemble, path) -> None:
    """Dump (path, step, t, X..., A?) rows for external inspection."""
    part = ensemble.partition
    m = ensemble.states.shape[2]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["path", "step", "t"] + [f"X{k}" for k in range(m)]
        if ensemble.reflected:
            header.append("A")
        writer.writerow(header)
        for j in range(ensemble.num_paths):
            for i in range(part.n + 1):
                row = [j, i, f"{part.t(i):.17g}"]
                row += [f"{v:.17g}" for v in ensemble.states[j, i]]
                if ensemble.reflected:
                    row.append(f"{ensemble.boundary[j, i]:.17g}")
                writer.writerow(row)
