"""Control-affine system abstraction and the two benchmark systems.

A system is the pair (f, g) in xdot = f(x) + g(x) u.  Systems are plain
callables wrapped in a small dataclass so users can register new ones without
touching library code; evaluation is pure and re-entrant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

# The smooth cutoff vanishes at this input value.  The benchmark's CLF
# feasibility analysis quotes 2.01 for the start of the infeasible ray; the two
# constants are deliberately kept distinct (see presets.py).
BUMP_CUTOFF = 2.02

# Below this distance from the cutoff the exponential underflows anyway; the
# guard avoids overflow in exp(-1/(cutoff - s)).
_CUTOFF_GUARD = 1e-12


@dataclass(frozen=True)
class ControlAffineSystem:
    """Control-affine dynamics with drift f and actuation matrix g.

    drift(0) must be the zero vector (the origin is an equilibrium of the
    unforced system); drift and actuation must return finite values at finite
    states.
    """

    state_dim: int
    input_dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    actuation: Callable[[np.ndarray], np.ndarray]
    name: str = ""

    def vector_field(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if x.shape != (self.state_dim,):
            raise ValueError(f"state has shape {x.shape}, expected ({self.state_dim},)")
        if u.shape != (self.input_dim,):
            raise ValueError(f"input has shape {u.shape}, expected ({self.input_dim},)")
        return self.drift(x) + self.actuation(x) @ u


def eval_vector_field(sys: ControlAffineSystem, x, u):
    """f(x) + g(x) u with dimension checking."""
    return sys.vector_field(x, u)


def smooth_cutoff(s: float) -> float:
    """exp(-1/(2.02 - s)) below the cutoff, 0 at and beyond it.

    Locally Lipschitz, monotonically decreasing on [0, 2.02], identically zero
    afterwards; continuous at the cutoff because the exponential underflows.
    """
    if s >= BUMP_CUTOFF - _CUTOFF_GUARD:
        return 0.0
    return float(np.exp(-1.0 / (BUMP_CUTOFF - s)))


def bump_system() -> ControlAffineSystem:
    """Planar benchmark: x1dot = x2 - x1 * cutoff(x1), x2dot = -x1 + u."""

    def drift(x):
        return np.array([x[1] - x[0] * smooth_cutoff(x[0]), -x[0]])

    def actuation(x):
        return np.array([[0.0], [1.0]])

    return ControlAffineSystem(state_dim=2, input_dim=1, drift=drift,
                               actuation=actuation, name="bump")


def unicycle_system() -> ControlAffineSystem:
    """Unicycle: x1dot = v cos(x3), x2dot = v sin(x3), x3dot = w.

    Zero drift; inputs are forward speed v and turn rate w.
    """

    def drift(x):
        return np.zeros(3)

    def actuation(x):
        c, s = np.cos(x[2]), np.sin(x[2])
        return np.array([[c, 0.0], [s, 0.0], [0.0, 1.0]])

    return ControlAffineSystem(state_dim=3, input_dim=2, drift=drift,
                               actuation=actuation, name="unicycle")
