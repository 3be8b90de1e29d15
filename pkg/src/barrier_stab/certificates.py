"""Lyapunov and nonsmooth-barrier certificates and their QP row builders.

The decrease certificate (a weak CLF) contributes one <= row per state; the
barrier contributes one >= row per active piece.  Barriers compose finitely
many smooth pieces two ways: `pieces` combine by max (the safe set is the
union of their superlevel sets) and `caps` combine by min (each cap must stay
nonnegative, e.g. the level cap gamma - V(x) used to compactify an unbounded
safe set).  The composed value is

    h(x) = min( max_i pieces[i](x),  min_j caps[j](x) ).

Rows are emitted for exactly the elements achieving the composed value within
`active_tol`; this realizes the active-index set of a max/min composition the
way the generalized gradient does, and the tolerance band stands in for the
neighborhood quantifier of the pointwise conditions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .qp import make_problem, solve_qp
from .systems import ControlAffineSystem


class ConfigurationError(ValueError):
    """Raised for certificate constructions that define an empty set."""


@dataclass(frozen=True)
class WeakClf:
    """Positive-definite V with gradient, decrease margin W and the membership
    test of the region where the decrease condition is input-feasible.

    The decrease condition at x is  LfV(x) + LgV(x) u <= -margin(x); it need
    not be feasible near the origin, which is what makes the certificate weak.
    """

    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    margin: Callable[[np.ndarray], float]
    feasible_region_test: Callable[[np.ndarray], bool] = lambda x: True


@dataclass(frozen=True)
class BarrierPiece:
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    label: str = ""


def _linear_alpha(slope: float):
    def alpha(s: float) -> float:
        return slope * s

    return alpha


@dataclass(frozen=True)
class NonsmoothBarrier:
    """Family of smooth barrier pieces with a strict margin.

    alpha is an extended class-K function (alpha(0)=0, strictly increasing on
    all of R); epsilon > 0 is the strictness margin of the invariance rows;
    active_tol is the band within which a piece counts as active.
    """

    pieces: tuple  # of BarrierPiece, max-composed; at least one
    alpha: Callable[[float], float]
    epsilon: float = 1e-3
    active_tol: float = 1e-6
    caps: tuple = ()  # of BarrierPiece, min-composed

    def __post_init__(self):
        if not self.pieces:
            raise ValueError("barrier needs at least one max-composed piece")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.active_tol < 0:
            raise ValueError("active_tol must be >= 0")

    def value(self, x) -> float:
        h = max(p.value(x) for p in self.pieces)
        for c in self.caps:
            h = min(h, c.value(x))
        return h

    def evaluate(self, x) -> "SafeSetValue":
        per_piece = tuple(p.value(x) for p in self.pieces)
        h = max(per_piece)
        active = tuple(i for i, v in enumerate(per_piece) if h - v <= self.active_tol)
        cap_values = tuple(c.value(x) for c in self.caps)
        composed = min((h,) + cap_values) if cap_values else h
        return SafeSetValue(h=h, active=active, per_piece=per_piece,
                            cap_values=cap_values, composed=composed)

    def contains(self, x) -> bool:
        return self.value(x) >= 0.0


@dataclass(frozen=True)
class SafeSetValue:
    """One barrier evaluation: the max over pieces, the active indices within
    tolerance of it, the per-piece values, and the cap-composed value."""

    h: float
    active: tuple
    per_piece: tuple
    cap_values: tuple = ()
    composed: float = 0.0


def make_linear_alpha(slope: float):
    """Extended class-K alpha(s) = slope * s; both benchmarks use this family."""
    if slope <= 0:
        raise ValueError("slope must be positive for a class-K function")
    return _linear_alpha(slope)


def clf_row(V: WeakClf, sys: ControlAffineSystem, x):
    """Coefficients (a, b) of the decrease condition written as a^T u <= b.

    a = LgV(x) = gradV(x)^T g(x),  b = -margin(x) - LfV(x).
    """
    x = np.asarray(x, dtype=float)
    grad = np.asarray(V.gradient(x), dtype=float)
    a = grad @ sys.actuation(x)
    b = -float(V.margin(x)) - float(grad @ sys.drift(x))
    return np.atleast_1d(a), b


def cbf_rows(B: NonsmoothBarrier, sys: ControlAffineSystem, x, strict: bool = False):
    """Rows (a_i, b_i, label) of the invariance condition a_i^T u >= b_i for
    every element active at x.

    Non-strict rows carry the class-K relaxation:
        b_i = -alpha(h_i(x)) + epsilon - Lf h_i(x).
    Strict rows drop alpha (the boundary form used by the verifier):
        b_i = epsilon - Lf h_i(x).
    """
    x = np.asarray(x, dtype=float)
    g = sys.actuation(x)
    f = sys.drift(x)
    ev = B.evaluate(x)
    rows = []
    elements = [(f"h[{i}]", B.pieces[i], ev.per_piece[i]) for i in range(len(B.pieces))]
    elements += [(f"cap[{j}]", B.caps[j], ev.cap_values[j]) for j in range(len(B.caps))]
    for label, piece, value in elements:
        if value - ev.composed > B.active_tol:
            continue
        grad = np.asarray(piece.gradient(x), dtype=float)
        a = np.atleast_1d(grad @ g)
        lf = float(grad @ f)
        if strict:
            b = B.epsilon - lf
        else:
            b = -float(B.alpha(value)) + B.epsilon - lf
        rows.append((a, b, label if not piece.label else piece.label))
    return rows


def compact_truncate(B: NonsmoothBarrier, V: WeakClf, gamma: float,
                     probe_box: Optional[tuple] = None, n_probe: int = 10000,
                     seed: int = 0) -> NonsmoothBarrier:
    """Intersect the safe set with the sublevel set {V <= gamma}.

    The truncated barrier appends the cap gamma - V(x) to the min-composed
    group, so its composed value is min(h(x), gamma - V(x)) and membership is
    h(x) >= 0 together with V(x) <= gamma.  Nonemptiness of the truncated set
    is checked by sampling the probe box.
    """
    if gamma <= 0:
        raise ConfigurationError("gamma must be positive")

    def cap_value(x, _V=V, _g=gamma):
        return _g - float(_V.value(x))

    def cap_gradient(x, _V=V):
        return -np.asarray(_V.gradient(x), dtype=float)

    cap = BarrierPiece(value=cap_value, gradient=cap_gradient, label=f"cap[V<={gamma:g}]")
    truncated = replace(B, caps=B.caps + (cap,))

    if probe_box is None:
        half = float(np.sqrt(2.0 * gamma)) + 1.0
        probe_box = ((-half,) * 2, (half,) * 2)
    lower = np.asarray(probe_box[0], dtype=float)
    upper = np.asarray(probe_box[1], dtype=float)
    rng = np.random.default_rng(seed)
    pts = lower + (upper - lower) * rng.random((n_probe, lower.size))
    if not any(truncated.value(p) >= 0.0 for p in pts):
        raise ConfigurationError(
            f"truncated safe set appears empty (no probe of {n_probe} inside)")
    return truncated


def pointwise_compatible(V: WeakClf, B: NonsmoothBarrier, sys: ControlAffineSystem,
                         x, u_bound: float = 1e3) -> bool:
    """Joint input-feasibility of the decrease row and all active barrier rows
    at x, decided inside the box |u_j| <= u_bound.

    The input box is a conservative finite proxy for u ranging over all of R^m;
    callers that report "incompatible" verdicts should quote the bound used.
    """
    if u_bound <= 0:
        raise ValueError("u_bound must be positive")
    m = sys.input_dim
    a, b = clf_row(V, sys, x)
    constraints = [(tuple(a), b, "<=")]
    for ai, bi, _ in cbf_rows(B, sys, x, strict=False):
        constraints.append((tuple(ai), bi, ">="))
    for j in range(m):
        e = [0.0] * m
        e[j] = 1.0
        constraints.append((tuple(e), u_bound, "<="))
        constraints.append((tuple(e), -u_bound, ">="))
    sol = solve_qp(make_problem(m, constraints))
    return sol.status == "optimal"
