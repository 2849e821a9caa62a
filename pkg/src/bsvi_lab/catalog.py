"""Registry of named built-in problems and closed-form references.

Each entry builds a ProblemSpec from keyword parameters (all float-valued)
and may carry a closed-form backward solution evaluated on simulated states,
or a closed-form forward solution built from the same Brownian increments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Dict, Optional

import numpy as np

from . import convex
from .paths import IncrementEnsemble
from .problem import Partition, ProblemSpec

__all__ = [
    "ProblemEntry",
    "AnalyticReference",
    "REGISTRY",
    "ANALYTIC",
    "build_problem",
    "analytic_reference",
    "gbm_exact_paths",
    "parse_phi",
]


@dataclass(frozen=True)
class AnalyticReference:
    """Closed-form (Y, Z) as functions of (t, states)."""

    y: Callable
    z: Callable
    description: str


@dataclass(frozen=True)
class ProblemEntry:
    name: str
    build: Callable
    defaults: Dict[str, float]
    description: str
    analytic: Optional[str] = None  # key into ANALYTIC
    forward_exact: bool = False     # gbm_exact_paths applies


def parse_phi(text: str) -> convex.ConvexFunction:
    """Parse the config syntax zero | quadratic:c | abs:c | indicator:[l,u]
    | indicator_point:p."""
    text = text.strip()
    if text == "zero":
        return convex.zero()
    if text.startswith("quadratic:"):
        return convex.quadratic(float(text.split(":", 1)[1]))
    if text.startswith("abs:"):
        return convex.absolute(float(text.split(":", 1)[1]))
    if text.startswith("indicator_point:"):
        return convex.indicator_point(float(text.split(":", 1)[1]))
    if text.startswith("indicator:"):
        body = text.split(":", 1)[1].strip()
        if not (body.startswith("[") and body.endswith("]")):
            raise ValueError(f"malformed interval in phi spec {text!r}")
        lo_s, hi_s = body[1:-1].split(",")
        return convex.indicator_interval(float(lo_s), float(hi_s))
    raise ValueError(f"unknown phi spec {text!r}")


def _const(value):
    return lambda *args: value


def _build_martingale(x0=0.0, T=1.0, phi=None):
    return ProblemSpec(
        name="martingale",
        drift=_const(0.0),
        diffusion=_const(1.0),
        generator=_const(0.0),
        terminal=lambda x: x[:, 0],
        penalty=phi if phi is not None else convex.zero(),
        initial_state=np.array([x0]),
        horizon=T,
        lipschitz_const=1.0,
    )


def _build_gbm(mu=0.1, sigma=0.4, x0=1.0, T=1.0, phi=None):
    return ProblemSpec(
        name="gbm",
        drift=lambda t, x: mu * x,
        diffusion=lambda t, x: sigma * x[:, :, None],
        generator=_const(0.0),
        terminal=lambda x: x[:, 0],
        penalty=phi if phi is not None else convex.zero(),
        initial_state=np.array([x0]),
        horizon=T,
        lipschitz_const=max(abs(mu), abs(sigma), 1.0),
    )


def _build_linear_decay(r=1.0, x0=0.0, T=1.0, phi=None):
    return ProblemSpec(
        name="linear_decay",
        drift=_const(0.0),
        diffusion=_const(0.0),
        generator=lambda t, x, y, z: -r * y,
        terminal=_const(1.0),
        penalty=phi if phi is not None else convex.zero(),
        initial_state=np.array([x0]),
        horizon=T,
        lipschitz_const=abs(r),
    )


def _build_abs_floor(x0=0.0, T=1.0, phi=None):
    return ProblemSpec(
        name="abs_floor",
        drift=_const(0.0),
        diffusion=_const(1.0),
        generator=_const(0.0),
        terminal=lambda x: np.abs(x[:, 0]),
        penalty=phi if phi is not None else convex.indicator_interval(0.0, math.inf),
        initial_state=np.array([x0]),
        horizon=T,
        lipschitz_const=1.0,
    )


def _build_floor_linear(x0=0.0, T=1.0, phi=None):
    base = _build_martingale(
        x0=x0, T=T, phi=phi if phi is not None else convex.indicator_interval(0.0, math.inf)
    )
    return replace(base, name="floor_linear")


def _build_abs_linear(x0=0.0, T=1.0, c=1.0, phi=None):
    base = _build_martingale(x0=x0, T=T, phi=phi if phi is not None else convex.absolute(c))
    return replace(base, name="abs_linear")


def _build_pin_linear(x0=0.0, T=1.0, p=0.0, phi=None):
    base = _build_martingale(x0=x0, T=T, phi=phi if phi is not None else convex.indicator_point(p))
    return replace(base, name="pin_linear")


def _build_nonlinear_smooth(x0=0.0, T=1.0, phi=None):
    return ProblemSpec(
        name="nonlinear_smooth",
        drift=_const(0.0),
        diffusion=_const(1.0),
        generator=lambda t, x, y, z: 0.5 * np.sin(y) + 0.5 * np.cos(z[:, 0]),
        terminal=lambda x: x[:, 0],
        penalty=phi if phi is not None else convex.quadratic(1.0),
        initial_state=np.array([x0]),
        horizon=T,
        lipschitz_const=1.0,
    )


def _build_reflected_band(b=2.0, sigma=0.5, x0=0.0, lo=-1.0, hi=1.0, T=1.0, phi=None):
    return ProblemSpec(
        name="reflected_band",
        drift=_const(b),
        diffusion=_const(sigma),
        generator=_const(0.0),
        terminal=lambda x: x[:, 0],
        penalty=phi if phi is not None else convex.zero(),
        initial_state=np.array([x0]),
        horizon=T,
        lipschitz_const=1.0,
        boundary_generator=_const(1.0),
        domain=convex.IntervalDomain(lo, hi),
    )


def _build_reflected_ramp(b=2.0, x0=0.0, radius=1.0, T=1.0, phi=None):
    return ProblemSpec(
        name="reflected_ramp",
        drift=_const(b),
        diffusion=_const(0.0),
        generator=_const(0.0),
        terminal=_const(0.0),
        penalty=phi if phi is not None else convex.zero(),
        initial_state=np.array([x0]),
        horizon=T,
        lipschitz_const=1.0,
        boundary_generator=_const(1.0),
        domain=convex.BallDomain(np.array([0.0]), radius),
    )


REGISTRY: Dict[str, ProblemEntry] = {
    "martingale": ProblemEntry(
        name="martingale",
        build=_build_martingale,
        defaults={"x0": 0.0, "T": 1.0},
        description="b=0, sigma=1, F=0, phi=0, g(x)=x; Y=X and Z=1 exactly",
        analytic="martingale",
    ),
    "gbm": ProblemEntry(
        name="gbm",
        build=_build_gbm,
        defaults={"mu": 0.1, "sigma": 0.4, "x0": 1.0, "T": 1.0},
        description="geometric Brownian forward with linear terminal value",
        forward_exact=True,
    ),
    "linear_decay": ProblemEntry(
        name="linear_decay",
        build=_build_linear_decay,
        defaults={"r": 1.0, "x0": 0.0, "T": 1.0},
        description="deterministic forward, F(y)=-r y, g=1; Y=exp(-r (T-t))",
        analytic="linear_decay",
    ),
    "abs_floor": ProblemEntry(
        name="abs_floor",
        build=_build_abs_floor,
        defaults={"x0": 0.0, "T": 1.0},
        description="g(x)=|x| with phi the indicator of [0, inf)",
    ),
    "floor_linear": ProblemEntry(
        name="floor_linear",
        build=_build_floor_linear,
        defaults={"x0": 0.0, "T": 1.0},
        description="g(x)=x with phi the indicator of [0, inf)",
    ),
    "abs_linear": ProblemEntry(
        name="abs_linear",
        build=_build_abs_linear,
        defaults={"x0": 0.0, "T": 1.0, "c": 1.0},
        description="g(x)=x with phi = c |y|",
    ),
    "pin_linear": ProblemEntry(
        name="pin_linear",
        build=_build_pin_linear,
        defaults={"x0": 0.0, "T": 1.0, "p": 0.0},
        description="g(x)=x with phi the indicator of a single point",
    ),
    "nonlinear_smooth": ProblemEntry(
        name="nonlinear_smooth",
        build=_build_nonlinear_smooth,
        defaults={"x0": 0.0, "T": 1.0},
        description="nonlinear Lipschitz generator with quadratic penalty",
    ),
    "reflected_band": ProblemEntry(
        name="reflected_band",
        build=_build_reflected_band,
        defaults={"b": 2.0, "sigma": 0.5, "x0": 0.0, "lo": -1.0, "hi": 1.0, "T": 1.0},
        description="drift-out-of-domain reflected forward on an interval, G=1",
    ),
    "reflected_ramp": ProblemEntry(
        name="reflected_ramp",
        build=_build_reflected_ramp,
        defaults={"b": 2.0, "x0": 0.0, "radius": 1.0, "T": 1.0},
        description="deterministic reflected ramp in the unit ball, G=1, g=0",
    ),
}


ANALYTIC: Dict[str, AnalyticReference] = {
    "martingale": AnalyticReference(
        y=lambda t, x: x[:, 0],
        z=lambda t, x: np.ones((x.shape[0], 1)),
        description="Y_t = X_t, Z_t = 1",
    ),
    "linear_decay": AnalyticReference(
        y=lambda t, x, **kw: np.full(x.shape[0], math.exp(-kw.get("r", 1.0) * (kw.get("T", 1.0) - t))),
        z=lambda t, x, **kw: np.zeros((x.shape[0], 1)),
        description="Y_t = exp(-r (T - t)), Z = 0",
    ),
}


def build_problem(name: str, overrides: Optional[dict] = None, phi=None) -> ProblemSpec:
    """Instantiate a registry problem with parameter overrides."""
    if name not in REGISTRY:
        raise KeyError(f"unknown problem {name!r}; known: {sorted(REGISTRY)}")
    entry = REGISTRY[name]
    kwargs = dict(entry.defaults)
    for key, value in (overrides or {}).items():
        if key not in entry.defaults:
            raise KeyError(f"problem {name!r} accepts {sorted(entry.defaults)}, got {key!r}")
        kwargs[key] = value
    return entry.build(phi=phi, **kwargs)


def analytic_reference(name: str) -> AnalyticReference:
    if name not in ANALYTIC:
        raise KeyError(f"unknown analytic reference {name!r}; known: {sorted(ANALYTIC)}")
    return ANALYTIC[name]


def gbm_exact_paths(
    mu: float, sigma: float, x0: float, partition: Partition, increments: IncrementEnsemble
) -> np.ndarray:
    """Closed-form geometric Brownian paths at the nodes, built from the same
    increments as the Euler run, shape (M, n + 1, 1)."""
    w = increments.cumulative()[:, :, 0]
    t = partition.nodes[None, :]
    return (x0 * np.exp((mu - 0.5 * sigma**2) * t + sigma * w))[:, :, None]
