"""Benchmark constructions: the planar bump system and the unicycle.

Users supply their own certificates for new systems; these two are wired up
with the decrease margins, barrier pieces and class-K slopes used in the
shipped experiment configs.
"""

from __future__ import annotations

import numpy as np

from .certificates import (BarrierPiece, NonsmoothBarrier, WeakClf,
                           compact_truncate, make_linear_alpha)
from .systems import BUMP_CUTOFF, bump_system, smooth_cutoff, unicycle_system

# The decrease condition for the bump benchmark is quoted as infeasible on the
# ray {x2 = 0, x1 >= 2.01} even though the cutoff vanishes at 2.02; both
# constants are kept distinct on purpose.
CLF_INFEASIBLE_RAY_START = 2.01


def bump_clf(w_scale: float = 0.5) -> WeakClf:
    """V(x) = (x1^2 + x2^2)/2 with margin w_scale * V."""

    def value(x):
        return 0.5 * float(x[0] * x[0] + x[1] * x[1])

    def gradient(x):
        return np.array([x[0], x[1]], dtype=float)

    def margin(x):
        return w_scale * value(x)

    def feasible_region(x):
        return not (x[1] == 0.0 and x[0] >= CLF_INFEASIBLE_RAY_START)

    return WeakClf(value=value, gradient=gradient, margin=margin,
                   feasible_region_test=feasible_region)


def bump_barrier(epsilon: float = 1e-3, alpha0: float = 1.0,
                 active_tol: float = 1e-6) -> NonsmoothBarrier:
    """Half-plane barrier h(x) = -x1 - x2 + 2."""

    def value(x):
        return float(-x[0] - x[1] + 2.0)

    def gradient(x):
        return np.array([-1.0, -1.0])

    piece = BarrierPiece(value=value, gradient=gradient, label="h[halfplane]")
    return NonsmoothBarrier(pieces=(piece,), alpha=make_linear_alpha(alpha0),
                            epsilon=epsilon, active_tol=active_tol)


def bump_setup(w_scale: float = 0.5, epsilon: float = 1e-3, alpha0: float = 1.0,
               gamma: float = 8.0, active_tol: float = 1e-6):
    """System, certificate and (level-capped) barrier for the bump benchmark.

    gamma > 0 intersects the half-plane with {V <= gamma} so the safe set is
    compact; gamma = None keeps the raw half-plane.
    """
    sys = bump_system()
    V = bump_clf(w_scale)
    B = bump_barrier(epsilon=epsilon, alpha0=alpha0, active_tol=active_tol)
    if gamma is not None:
        B = compact_truncate(B, V, gamma)
    return sys, V, B


def unicycle_clf(b: float = 0.01, w_scale: float = 0.1) -> WeakClf:
    """V(x) = x1^2 + x2^2 + b*x3^2 with margin w_scale * V.

    Not a true CLF: the decrease condition is infeasible where the heading is
    aligned (x3 = 0) and the position is orthogonal to the heading.
    """

    def value(x):
        return float(x[0] * x[0] + x[1] * x[1] + b * x[2] * x[2])

    def gradient(x):
        return np.array([2.0 * x[0], 2.0 * x[1], 2.0 * b * x[2]])

    def margin(x):
        return w_scale * value(x)

    def feasible_region(x):
        heading_proj = x[0] * np.cos(x[2]) + x[1] * np.sin(x[2])
        return not (x[2] == 0.0 and heading_proj == 0.0)

    return WeakClf(value=value, gradient=gradient, margin=margin,
                   feasible_region_test=feasible_region)


def unicycle_barrier(delta: float = 0.04, epsilon: float = 1e-4,
                     alpha0: float = 0.005, active_tol: float = 1e-6) -> NonsmoothBarrier:
    """Intersection barrier min(h1, h2):

      h1(x) = delta - (-x1 sin x3 + x2 cos x3)^2   (lateral offset small)
      h2(x) = x1^2 + x2^2 - 1.5^2 delta            (outside the inner ring)

    Note epsilon must stay below alpha0 * delta: on the lateral-offset ridge
    the h1 row has a vanishing input coefficient and is satisfiable only
    through the class-K slack.
    """

    def lateral(x):
        return float(-x[0] * np.sin(x[2]) + x[1] * np.cos(x[2]))

    def h1(x):
        off = lateral(x)
        return delta - off * off

    def grad_h1(x):
        s, c = np.sin(x[2]), np.cos(x[2])
        off = lateral(x)
        along = x[0] * c + x[1] * s
        return -2.0 * off * np.array([-s, c, -along])

    def h2(x):
        return float(x[0] * x[0] + x[1] * x[1] - 2.25 * delta)

    def grad_h2(x):
        return np.array([2.0 * x[0], 2.0 * x[1], 0.0])

    p1 = BarrierPiece(value=h1, gradient=grad_h1, label="h[lateral]")
    p2 = BarrierPiece(value=h2, gradient=grad_h2, label="h[ring]")
    return NonsmoothBarrier(pieces=(p1,), caps=(p2,), alpha=make_linear_alpha(alpha0),
                            epsilon=epsilon, active_tol=active_tol)


def unicycle_setup(delta: float = 0.04, b: float = 0.01, w_scale: float = 0.1,
                   epsilon: float = 1e-4, alpha0: float = 0.005,
                   gamma=None, active_tol: float = 1e-6):
    sys = unicycle_system()
    V = unicycle_clf(b=b, w_scale=w_scale)
    B = unicycle_barrier(delta=delta, epsilon=epsilon, alpha0=alpha0,
                         active_tol=active_tol)
    if gamma is not None:
        B = compact_truncate(B, V, gamma, probe_box=((-3.0, -3.0, -np.pi),
                                                     (3.0, 3.0, np.pi)))
    return sys, V, B


def build_setup(system: str, **params):
    """Named construction used by the experiment configs."""
    if system == "bump":
        return bump_setup(**params)
    if system == "unicycle":
        return unicycle_setup(**params)
    raise KeyError(f"unknown system {system!r} (available: bump, unicycle)")


def default_region_test(system: str, barrier: NonsmoothBarrier):
    """Membership test of the region where the barrier rows stay feasible:
    the whole plane for the bump benchmark, the safe set for the unicycle."""
    if system == "bump":
        return lambda x: True
    return lambda x: barrier.value(x) >= 0.0
