"""Min-norm QP state-feedback controllers.

Four kinds:

  wclf_qp    minimize ||u||^2 subject to the decrease row only; infeasible
             wherever the decrease condition has no solution.
  bncbf_qp   minimize ||u||^2 subject to the active barrier rows only.
  switching  barrier + decrease rows while the state is in the safe set and
             above the drop level, barrier rows only otherwise; a hysteresis
             band on both switching surfaces prevents discrete-time chatter.
  relaxed    joint QP over (u, slack): minimize 1/2||u||^2 + slack_weight *
             slack^2 with the decrease row softened by the slack and the
             barrier rows kept hard.

All controllers are pure; the one-bit switching memory is passed in and
returned so the simulation loop owns it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .certificates import NonsmoothBarrier, WeakClf, cbf_rows, clf_row
from .qp import make_problem, solve_qp
from .systems import ControlAffineSystem

KINDS = ("wclf_qp", "bncbf_qp", "switching", "relaxed")


class CompatibilityViolation(RuntimeError):
    """The constrained QP came back infeasible at a state the configuration
    declared compatible; carries the offending state."""

    def __init__(self, x):
        self.x = np.asarray(x, dtype=float)
        super().__init__(
            f"decrease+barrier QP infeasible at declared-compatible state {self.x.tolist()}")


@dataclass(frozen=True)
class ControllerSpec:
    kind: str
    V: Optional[WeakClf] = None
    B: Optional[NonsmoothBarrier] = None
    # Sublevel value of V below which the decrease row is dropped (0 keeps it
    # everywhere except the origin itself).
    clf_drop_level: float = 0.0
    slack_weight: float = 100.0
    hysteresis: float = 1e-4
    # Membership test of the region where the barrier rows are known feasible.
    barrier_region_test: Callable[[np.ndarray], bool] = lambda x: True
    # Optional declared-compatibility region; infeasibility inside it raises
    # CompatibilityViolation instead of falling back to u = 0.
    compatible_region_test: Optional[Callable[[np.ndarray], bool]] = None
    # Effective-infeasibility threshold: a QP whose min-norm solution exceeds
    # this magnitude is reported infeasible (the state is outside the
    # practically feasible region; near the decrease condition's singular set
    # the required feedback blows up like 1/LgV).
    feedback_bound: float = 100.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown controller kind {self.kind!r}")
        if self.clf_drop_level < 0:
            raise ValueError("clf_drop_level must be >= 0")
        if self.slack_weight <= 0:
            raise ValueError("slack_weight must be > 0")
        if self.hysteresis < 0:
            raise ValueError("hysteresis must be >= 0")
        if self.feedback_bound <= 0:
            raise ValueError("feedback_bound must be > 0")
        if self.kind != "wclf_qp" and self.B is None:
            raise ValueError(f"{self.kind} controller needs a barrier")
        if self.kind != "bncbf_qp" and self.V is None:
            raise ValueError(f"{self.kind} controller needs a Lyapunov certificate")


@dataclass(frozen=True)
class SwitchMemory:
    """Hysteresis latches: which switching surface pushed the controller into
    the barrier-only branch."""

    latched_barrier: bool = False
    latched_level: bool = False


@dataclass(frozen=True)
class ControlDecision:
    u: np.ndarray
    branch: str  # "u1", "u2", "relaxed", "wclf_only"
    qp_status: str  # "optimal" or "infeasible"
    slack: Optional[float] = None
    rows_used: tuple = ()


def _min_norm(m, constraints, feedback_bound):
    """Solve the min-norm QP; solutions beyond the feedback bound count as
    infeasible (the finite proxy for the row having no practical solution)."""
    sol = solve_qp(make_problem(m, constraints))
    if sol.status == "optimal" and np.max(np.abs(sol.z), initial=0.0) > feedback_bound:
        sol.status = "infeasible"
    return sol


def wclf_qp_control(spec: ControllerSpec, sys: ControlAffineSystem, x) -> ControlDecision:
    """Min-norm input satisfying only the decrease row.

    Infeasibility (effectively LgV = 0 with a positive required decrease) is a
    reported status, not an exception; the caller applies u = 0.
    """
    a, b = clf_row(spec.V, sys, x)
    sol = _min_norm(sys.input_dim, [(tuple(a), b, "<=")], spec.feedback_bound)
    if sol.status != "optimal":
        return ControlDecision(u=np.zeros(sys.input_dim), branch="wclf_only",
                               qp_status="infeasible", rows_used=("clf",))
    return ControlDecision(u=sol.z, branch="wclf_only", qp_status="optimal",
                           rows_used=("clf",))


def bncbf_qp_control(spec: ControllerSpec, sys: ControlAffineSystem, x) -> ControlDecision:
    """Min-norm input satisfying the active barrier rows only."""
    rows = cbf_rows(spec.B, sys, x, strict=False)
    constraints = [(tuple(a), b, ">=") for a, b, _ in rows]
    labels = tuple(lab for _, _, lab in rows)
    sol = _min_norm(sys.input_dim, constraints, spec.feedback_bound)
    if sol.status != "optimal":
        return ControlDecision(u=np.zeros(sys.input_dim), branch="u2",
                               qp_status="infeasible", rows_used=labels)
    return ControlDecision(u=sol.z, branch="u2", qp_status="optimal", rows_used=labels)


def switching_control(spec: ControllerSpec, sys: ControlAffineSystem, x,
                      memory: SwitchMemory = SwitchMemory()):
    """Branching controller realizing the invariance-and-convergence design.

    Branch u1 (decrease + barrier rows) runs while the state is in the safe
    set and V is above the drop level; branch u2 (barrier rows only) runs
    otherwise.  Once a surface latches into u2 the controller stays there
    until the state clears the surface by +hysteresis.

    Returns (decision, new_memory).
    """
    x = np.asarray(x, dtype=float)
    h = spec.B.value(x)
    v = float(spec.V.value(x))

    latched_barrier = memory.latched_barrier
    latched_level = memory.latched_level
    if latched_barrier and h >= spec.hysteresis:
        latched_barrier = False
    if latched_level and v >= spec.clf_drop_level + spec.hysteresis:
        latched_level = False
    if not latched_barrier and h < 0.0:
        latched_barrier = True
    if not latched_level and v <= spec.clf_drop_level:
        latched_level = True
    new_memory = SwitchMemory(latched_barrier=latched_barrier, latched_level=latched_level)

    barrier = cbf_rows(spec.B, sys, x, strict=False)
    b_constraints = [(tuple(a), b, ">=") for a, b, _ in barrier]
    b_labels = tuple(lab for _, _, lab in barrier)

    if latched_barrier or latched_level:
        sol = _min_norm(sys.input_dim, b_constraints, spec.feedback_bound)
        if sol.status != "optimal":
            # Outside the barrier-feasible region the design makes no promise;
            # report the status and let the loop apply the zero fallback.
            return (ControlDecision(u=np.zeros(sys.input_dim), branch="u2",
                                    qp_status="infeasible", rows_used=b_labels),
                    new_memory)
        return (ControlDecision(u=sol.z, branch="u2", qp_status="optimal",
                                rows_used=b_labels), new_memory)

    a, b = clf_row(spec.V, sys, x)
    constraints = [(tuple(a), b, "<=")] + b_constraints
    labels = ("clf",) + b_labels
    sol = _min_norm(sys.input_dim, constraints, spec.feedback_bound)
    if sol.status != "optimal":
        if (spec.compatible_region_test is not None and h >= 0.0
                and v > spec.clf_drop_level and spec.compatible_region_test(x)):
            raise CompatibilityViolation(x)
        return (ControlDecision(u=np.zeros(sys.input_dim), branch="u1",
                                qp_status="infeasible", rows_used=labels), new_memory)
    return (ControlDecision(u=sol.z, branch="u1", qp_status="optimal",
                            rows_used=labels), new_memory)


def relaxed_control(spec: ControllerSpec, sys: ControlAffineSystem, x) -> ControlDecision:
    """Joint QP over (u, slack) with cost 1/2||u||^2 + slack_weight * slack^2.

    The decrease row becomes  LfV + LgV u + W <= slack  with the slack free in
    sign (negative optima are reported as computed, never clamped in the QP);
    barrier rows stay hard, so the program is infeasible only if they are.
    """
    m = sys.input_dim
    a, b = clf_row(spec.V, sys, x)
    # a^T u <= b + slack  <=>  (a, -1) . (u, slack) <= b
    constraints = [(tuple(a) + (-1.0,), b, "<=")]
    labels = ["clf+slack"]
    for ai, bi, lab in cbf_rows(spec.B, sys, x, strict=False):
        constraints.append((tuple(ai) + (0.0,), bi, ">="))
        labels.append(lab)
    weights = (1.0,) * m + (2.0 * spec.slack_weight,)
    sol = solve_qp(make_problem(m + 1, constraints, weights))
    if sol.status == "optimal" and np.max(np.abs(sol.z[:m]), initial=0.0) > spec.feedback_bound:
        sol.status = "infeasible"
    if sol.status != "optimal":
        return ControlDecision(u=np.zeros(m), branch="relaxed", qp_status="infeasible",
                               slack=None, rows_used=tuple(labels))
    return ControlDecision(u=sol.z[:m], branch="relaxed", qp_status="optimal",
                           slack=float(sol.z[m]), rows_used=tuple(labels))


def decide(spec: ControllerSpec, sys: ControlAffineSystem, x,
           memory: SwitchMemory = SwitchMemory()):
    """Dispatch on the controller kind; returns (decision, memory)."""
    if spec.kind == "wclf_qp":
        return wclf_qp_control(spec, sys, x), memory
    if spec.kind == "bncbf_qp":
        return bncbf_qp_control(spec, sys, x), memory
    if spec.kind == "relaxed":
        return relaxed_control(spec, sys, x), memory
    return switching_control(spec, sys, x, memory)
