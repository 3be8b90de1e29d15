"""Closed-loop simulation of xdot = f(x) + g(x) u(x) and outcome metrics.

Fixed-step classical RK4 with the control held constant within each step
(evaluated at the step's start state).  No discrete scheme reproduces the
continuous-time solutions of a discontinuous loop exactly; the step-halving
robustness check in the test suite is the auditable substitute, and wherever
the controller is continuous the integration converges to the classical
solution.  Events (safe-set entry, level-set entry, convergence, feasibility
loss) are detected at full step resolution by sign changes with linear
interpolation of the crossing time.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .certificates import cbf_rows, clf_row
from .controllers import ControlDecision, ControllerSpec, SwitchMemory, decide
from .systems import ControlAffineSystem


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    horizon: float = 20.0
    origin_tol: float = 1e-2
    record_every: int = 1
    # V-level whose sublevel-set entry is timestamped (None skips the event);
    # convergence targets use it together with the safe set.
    event_level: Optional[float] = None

    def __post_init__(self):
        if self.dt <= 0 or self.dt > 1e-2:
            raise ValueError("dt must be in (0, 1e-2]")
        if self.horizon < self.dt:
            raise ValueError("horizon must be >= dt")
        if self.origin_tol <= 0:
            raise ValueError("origin_tol must be > 0")
        if self.record_every < 1:
            raise ValueError("record_every must be a positive integer")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    V_values: np.ndarray
    h_values: np.ndarray
    branches: list
    events: list  # of (kind, t)
    statuses: list
    row_violations: np.ndarray
    chattering: bool = False
    aborted: bool = False
    abort_reason: str = ""

    def event_times(self, kind):
        return [t for k, t in self.events if k == kind]

    def first_event(self, kind):
        ts = self.event_times(kind)
        return ts[0] if ts else None


def _interp_crossing(t0, dt, s0, s1):
    """Linear-interpolated time where the signal crosses zero in (t0, t0+dt]."""
    if s1 == s0:
        return t0 + dt
    return t0 + dt * (0.0 - s0) / (s1 - s0)


def _rk4_step(sys, x, u, dt):
    k1 = sys.vector_field(x, u)
    k2 = sys.vector_field(x + 0.5 * dt * k1, u)
    k3 = sys.vector_field(x + 0.5 * dt * k2, u)
    k4 = sys.vector_field(x + dt * k3, u)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _decision_violation(decision: ControlDecision, spec, sys, x):
    """Worst signed violation of the rows the controller assembled, evaluated
    at the decision state for the applied input."""
    u = decision.u
    worst = 0.0
    if decision.qp_status != "optimal":
        return 0.0
    if "clf" in decision.rows_used:
        a, b = clf_row(spec.V, sys, x)
        worst = max(worst, float(a @ u) - b)
    if spec.B is not None and any(r != "clf" and not r.startswith("clf+") for r in decision.rows_used):
        for a, b, _ in cbf_rows(spec.B, sys, x, strict=False):
            worst = max(worst, b - float(a @ u))
    if decision.branch == "relaxed" and decision.slack is not None:
        a, b = clf_row(spec.V, sys, x)
        worst = max(worst, float(a @ u) - b - decision.slack)
    return worst


def simulate(sys: ControlAffineSystem, spec: ControllerSpec, x0, cfg: SimConfig) -> Trajectory:
    """Integrate the closed loop from x0 over the horizon.

    The switching memory is threaded through the loop; a non-finite state
    aborts the run and returns the trajectory prefix with the abort flagged.
    """
    x = np.asarray(x0, dtype=float).copy()
    n_steps = int(round(cfg.horizon / cfg.dt))
    memory = SwitchMemory()

    times, states, inputs, branches, statuses, violations = [], [], [], [], [], []
    events = []
    have_barrier = spec.B is not None

    def v_of(state):
        return float(spec.V.value(state)) if spec.V is not None else float("nan")

    def h_of(state):
        return float(spec.B.value(state)) if have_barrier else float("nan")

    def level_margin(state):
        # min(h, c - V): nonnegative exactly on the target set (level cap
        # intersected with the safe set).
        parts = []
        if have_barrier:
            parts.append(h_of(state))
        if cfg.event_level is not None:
            parts.append(cfg.event_level - v_of(state))
        return min(parts) if parts else float("nan")

    h_prev = h_of(x)
    lv_prev = level_margin(x)
    norm_prev = float(np.linalg.norm(x)) - cfg.origin_tol
    status_prev = "optimal"
    branch_flips = []
    prev_branch = None
    seen_events = set()

    entered_c = have_barrier and h_prev >= 0.0
    entered_level = (cfg.event_level is not None) and lv_prev >= 0.0
    converged_flag = norm_prev <= 0.0

    for k in range(n_steps + 1):
        t = k * cfg.dt
        decision, memory = decide(spec, sys, x, memory)
        if k % cfg.record_every == 0 or k == n_steps:
            times.append(t)
            states.append(x.copy())
            inputs.append(decision.u.copy())
            branches.append(decision.branch)
            statuses.append(decision.qp_status)
            violations.append(_decision_violation(decision, spec, sys, x))

        if decision.qp_status == "infeasible" and status_prev == "optimal":
            events.append(("infeasible", t))
        status_prev = decision.qp_status

        if spec.kind == "switching":
            if prev_branch is not None and decision.branch != prev_branch:
                branch_flips.append(k)
            prev_branch = decision.branch

        if not spec.barrier_region_test(x) and "leave_G" not in seen_events:
            events.append(("leave_G", t))
            seen_events.add("leave_G")

        if k == n_steps:
            break

        x_next = _rk4_step(sys, x, decision.u, cfg.dt)
        if not np.all(np.isfinite(x_next)):
            events.append(("non_finite", t + cfg.dt))
            traj = _finalize(times, states, inputs, branches, statuses, violations,
                             events, spec, branch_flips, cfg)
            traj.aborted = True
            traj.abort_reason = f"non-finite state after t={t:.6g}"
            return traj

        if have_barrier:
            h_next = h_of(x_next)
            if not entered_c and h_prev < 0.0 <= h_next:
                events.append(("enter_C", _interp_crossing(t, cfg.dt, h_prev, h_next)))
                entered_c = True
            h_prev = h_next
        if cfg.event_level is not None:
            lv_next = level_margin(x_next)
            if not entered_level and lv_prev < 0.0 <= lv_next:
                events.append(("enter_level_set", _interp_crossing(t, cfg.dt, lv_prev, lv_next)))
                entered_level = True
            lv_prev = lv_next
        norm_next = float(np.linalg.norm(x_next)) - cfg.origin_tol
        if not converged_flag and norm_prev > 0.0 >= norm_next:
            events.append(("converged", _interp_crossing(t, cfg.dt, norm_prev, norm_next)))
            converged_flag = True
        norm_prev = norm_next

        x = x_next

    return _finalize(times, states, inputs, branches, statuses, violations,
                     events, spec, branch_flips, cfg)


def _finalize(times, states, inputs, branches, statuses, violations, events, spec,
              branch_flips, cfg):
    states_arr = np.array(states)
    v_vals = (np.array([spec.V.value(s) for s in states_arr])
              if spec.V is not None else np.full(len(states), np.nan))
    h_vals = (np.array([spec.B.value(s) for s in states_arr])
              if spec.B is not None else np.full(len(states), np.nan))
    # Flag chattering: more than 10 branch flips inside any 100-step window.
    chattering = False
    flips = np.array(branch_flips)
    for i in range(len(flips)):
        if np.count_nonzero((flips >= flips[i]) & (flips < flips[i] + 100)) > 10:
            chattering = True
            break
    events.sort(key=lambda e: e[1])
    return Trajectory(times=np.array(times), states=states_arr,
                      inputs=np.array(inputs), V_values=v_vals, h_values=h_vals,
                      branches=branches, events=events, statuses=statuses,
                      row_violations=np.array(violations), chattering=chattering)


@dataclass
class OutcomeReport:
    stayed_in_C_after_entry: bool
    stayed_in_level_set_after_entry: bool
    converged_to_origin: bool
    converged_to_level_set: bool
    enter_C_time: Optional[float]
    enter_level_time: Optional[float]
    converged_time: Optional[float]
    final_norm: float
    max_violation: float
    worst_u1_V_increase: float
    n_infeasible_steps: int
    chattering: bool
    aborted: bool


def classify_outcome(traj: Trajectory, spec: ControllerSpec, cfg: SimConfig,
                     invariance_tol: float = 1e-4, level_slack: float = 1e-3) -> OutcomeReport:
    """Convergence/invariance bookkeeping for one completed trajectory."""
    final_norm = float(np.linalg.norm(traj.states[-1]))
    t_entry = traj.first_event("enter_C")
    if t_entry is None and spec.B is not None and len(traj.h_values) and traj.h_values[0] >= 0:
        t_entry = 0.0
    t_level = traj.first_event("enter_level_set")
    if t_level is None and cfg.event_level is not None and len(traj.V_values):
        lv0 = cfg.event_level - traj.V_values[0]
        h0 = traj.h_values[0] if spec.B is not None else np.inf
        if min(lv0, h0) >= 0:
            t_level = 0.0
    t_conv = traj.first_event("converged")

    stayed_c = False
    if t_entry is not None and spec.B is not None:
        after = traj.times >= t_entry
        stayed_c = bool(np.all(traj.h_values[after] >= -invariance_tol))

    stayed_level = False
    converged_level = False
    if t_level is not None and cfg.event_level is not None:
        after = traj.times >= t_level
        margin = cfg.event_level - traj.V_values[after]
        if spec.B is not None:
            margin = np.minimum(margin, traj.h_values[after])
        stayed_level = bool(np.all(margin >= -invariance_tol))
        final_margin = cfg.event_level + level_slack - traj.V_values[-1]
        if spec.B is not None:
            final_margin = min(final_margin, traj.h_values[-1] + level_slack)
        converged_level = stayed_level and final_margin >= 0.0

    worst_u1 = 0.0
    for i in range(len(traj.times) - 1):
        if traj.branches[i] == "u1" and traj.branches[i + 1] == "u1":
            worst_u1 = max(worst_u1, float(traj.V_values[i + 1] - traj.V_values[i]))

    n_infeasible = sum(1 for s in traj.statuses if s == "infeasible")

    return OutcomeReport(
        stayed_in_C_after_entry=stayed_c,
        stayed_in_level_set_after_entry=stayed_level,
        converged_to_origin=(final_norm <= cfg.origin_tol) and not traj.aborted,
        converged_to_level_set=converged_level,
        enter_C_time=t_entry,
        enter_level_time=t_level,
        converged_time=t_conv,
        final_norm=final_norm,
        max_violation=float(np.max(traj.row_violations)) if len(traj.row_violations) else 0.0,
        worst_u1_V_increase=worst_u1,
        n_infeasible_steps=n_infeasible,
        chattering=traj.chattering,
        aborted=traj.aborted,
    )


def _fmt(v):
    return f"{float(v):.17g}"


def write_trajectory_csv(traj: Trajectory, sys: ControlAffineSystem, path):
    """Deterministic export: t,x1..xn,u1..um,V,h,branch,event with 17
    significant digits."""
    n, m = sys.state_dim, sys.input_dim
    header = (["t"] + [f"x{i+1}" for i in range(n)] + [f"u{j+1}" for j in range(m)]
              + ["V", "h", "branch", "event"])
    # Attach each event to the first recorded row at or after its timestamp.
    event_marks = {}
    for kind, t_ev in traj.events:
        idx = int(np.searchsorted(traj.times, t_ev - 1e-15))
        if idx >= len(traj.times):
            idx = len(traj.times) - 1
        event_marks.setdefault(idx, []).append(kind)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, t in enumerate(traj.times):
            row = [_fmt(t)]
            row += [_fmt(v) for v in traj.states[i]]
            row += [_fmt(v) for v in traj.inputs[i]]
            row += [_fmt(traj.V_values[i]), _fmt(traj.h_values[i])]
            row.append(traj.branches[i])
            row.append("+".join(event_marks.get(i, [])))
            w.writerow(row)
