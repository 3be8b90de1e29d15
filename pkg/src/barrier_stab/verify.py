"""Grid-based certification of the controller's standing hypotheses.

For a compact safe set it suffices to check the barrier and compatibility
conditions on (a band around) the boundary; these routines discharge the
pointwise "there exists u" quantifiers by linear feasibility inside a finite
input box and report failures with re-checkable witnesses.  A grid scan is
sampling evidence, not a proof — reports carry the resolution and the input
box so claims stay scoped.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .certificates import NonsmoothBarrier, WeakClf, cbf_rows, pointwise_compatible
from .qp import make_problem, solve_qp
from .systems import ControlAffineSystem

MAX_GRID_POINTS = 10_000_000


@dataclass(frozen=True)
class GridSpec:
    lower: tuple
    upper: tuple
    resolution: tuple  # points per axis
    boundary_band: float = 0.02

    def __post_init__(self):
        if len(self.lower) != len(self.upper) or len(self.lower) != len(self.resolution):
            raise ValueError("lower/upper/resolution must have equal lengths")
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("lower must be componentwise below upper")
        if any(r < 2 for r in self.resolution):
            raise ValueError("resolution must be >= 2 points per axis")
        total = 1
        for r in self.resolution:
            total *= r
        if total > MAX_GRID_POINTS:
            raise ValueError(f"grid of {total} points exceeds envelope {MAX_GRID_POINTS}")

    def points(self) -> np.ndarray:
        axes = [np.linspace(lo, hi, r) for lo, hi, r in
                zip(self.lower, self.upper, self.resolution)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass
class FailureWitness:
    x: np.ndarray
    condition: str
    flips_at_larger_box: bool = False


@dataclass
class RegionReport:
    checked: int
    feasible: int
    witnesses_of_failure: list
    estimated_c_bar: float = 0.0
    estimated_alpha0: float = 0.0
    u_bound: float = 0.0
    grid: Optional[GridSpec] = None
    kind: str = ""

    @property
    def all_pass(self) -> bool:
        return self.checked == self.feasible


def _n_workers():
    env = os.environ.get("BARRIER_STAB_THREADS")
    if env:
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


def _chunked_indices(n, n_chunks):
    bounds = np.linspace(0, n, n_chunks + 1).astype(int)
    return [(bounds[i], bounds[i + 1]) for i in range(n_chunks) if bounds[i] < bounds[i + 1]]


def _map_points(fn, pts):
    """Apply fn to each point, in parallel over chunks, preserving grid order."""
    n = len(pts)
    if n == 0:
        return []
    workers = _n_workers()
    if workers == 1 or n < 256:
        return [fn(p) for p in pts]
    chunks = _chunked_indices(n, workers * 4)
    out = [None] * len(chunks)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futs = {pool.submit(lambda lo=lo, hi=hi: [fn(p) for p in pts[lo:hi]]): i
                for i, (lo, hi) in enumerate(chunks)}
        for fut, i in futs.items():
            out[i] = fut.result()
    return [r for chunk in out for r in chunk]


def _strict_rows_feasible(B, sys, x, u_bound):
    """Feasibility of the alpha-free strict rows for the active elements at x
    inside the input box."""
    m = sys.input_dim
    constraints = []
    for a, b, _ in cbf_rows(B, sys, x, strict=True):
        constraints.append((tuple(a), b, ">="))
    for j in range(m):
        e = [0.0] * m
        e[j] = 1.0
        constraints.append((tuple(e), u_bound, "<="))
        constraints.append((tuple(e), -u_bound, ">="))
    return solve_qp(make_problem(m, constraints)).status == "optimal"


def verify_boundary_sbncbf(B: NonsmoothBarrier, sys: ControlAffineSystem,
                           grid: GridSpec, u_bound: float = 100.0,
                           escalation_bound: float = 1e4) -> RegionReport:
    """Check the strict (alpha-free) barrier rows on the grid points within
    boundary_band of the composed zero level set.

    Intended for compact (capped) safe sets, where boundary feasibility of the
    strict rows is the sufficient condition for the barrier property.
    """
    pts = grid.points()
    h_vals = np.array([B.value(p) for p in pts])
    band = np.abs(h_vals) <= grid.boundary_band
    candidates = pts[band]

    def check(p):
        return _strict_rows_feasible(B, sys, p, u_bound)

    ok = _map_points(check, candidates)
    witnesses = []
    for p, good in zip(candidates, ok):
        if not good:
            flips = _strict_rows_feasible(B, sys, p, escalation_bound)
            witnesses.append(FailureWitness(
                x=np.asarray(p, dtype=float),
                condition=f"strict barrier rows infeasible within |u|<={u_bound:g}",
                flips_at_larger_box=flips))
    return RegionReport(checked=len(candidates), feasible=int(np.sum(ok)),
                        witnesses_of_failure=witnesses, u_bound=u_bound,
                        grid=grid, kind="boundary")


def verify_compatibility_region(V: WeakClf, B: NonsmoothBarrier,
                                sys: ControlAffineSystem, grid: GridSpec,
                                c_bar: float = 0.0, u_bound: float = 1e3,
                                escalation_bound: float = 1e4) -> RegionReport:
    """Check joint decrease+barrier feasibility over the grid points inside
    the safe set and above the V drop level.

    estimated_c_bar is the smallest tested sublevel value of V containing all
    failures (the level the switching design would need), rounded up to the
    next V value seen on the grid.
    """
    pts = grid.points()
    inside = [p for p in pts if B.value(p) >= 0.0 and float(V.value(p)) > c_bar]

    def check(p):
        return pointwise_compatible(V, B, sys, p, u_bound=u_bound)

    ok = _map_points(check, inside)
    witnesses = []
    fail_levels = []
    for p, good in zip(inside, ok):
        if not good:
            flips = pointwise_compatible(V, B, sys, p, u_bound=escalation_bound)
            witnesses.append(FailureWitness(
                x=np.asarray(p, dtype=float),
                condition=f"decrease+barrier rows jointly infeasible within |u|<={u_bound:g}",
                flips_at_larger_box=flips))
            fail_levels.append(float(V.value(p)))

    est_c = 0.0
    if fail_levels:
        worst = max(fail_levels)
        levels = sorted(float(V.value(p)) for p in inside)
        higher = [lv for lv in levels if lv >= worst]
        est_c = higher[0] if higher else worst
    return RegionReport(checked=len(inside), feasible=int(np.sum(ok)),
                        witnesses_of_failure=witnesses, estimated_c_bar=est_c,
                        u_bound=u_bound, grid=grid, kind="compatibility")


def estimate_alpha0(V: WeakClf, B: NonsmoothBarrier, sys: ControlAffineSystem,
                    grid: GridSpec, controller: Callable[[np.ndarray], np.ndarray],
                    delta_param: float, c_bar: float = 0.0,
                    gain_row: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                    piece_index: int = -1) -> float:
    """Grid estimate of the linear class-K slope that makes a candidate
    controller satisfy the slack barrier row.

    Over the safe-set grid points above the drop level, takes the supremum of
    |gain_row(x) . controller(x) - epsilon| / (0.5 * delta_param) and adds a
    10% safety margin.  By default gain_row is half the Lie row of the last
    min-composed piece (the ring piece in the unicycle construction, whose
    quadratic gradient carries a factor 2).
    """
    if gain_row is None:
        piece = B.caps[piece_index] if B.caps else B.pieces[piece_index]

        def gain_row(x, _p=piece):
            grad = np.asarray(_p.gradient(x), dtype=float)
            return 0.5 * (grad @ sys.actuation(x))

    pts = grid.points()
    region = [p for p in pts if B.value(p) >= 0.0 and float(V.value(p)) > c_bar]
    sup = 0.0
    for p in region:
        k = np.atleast_1d(np.asarray(controller(p), dtype=float))
        val = abs(float(np.atleast_1d(gain_row(p)) @ k) - B.epsilon)
        sup = max(sup, val)
    return 1.1 * sup / (0.5 * delta_param)


def write_failures_csv(report: RegionReport, path):
    """Failure witnesses as x1..xn,condition rows (deterministic order)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if report.witnesses_of_failure:
            n = len(report.witnesses_of_failure[0].x)
        else:
            n = len(report.grid.lower) if report.grid else 0
        w.writerow([f"x{i+1}" for i in range(n)] + ["condition", "flips_at_larger_box"])
        for wit in report.witnesses_of_failure:
            w.writerow([f"{v:.17g}" for v in wit.x]
                       + [wit.condition, str(wit.flips_at_larger_box).lower()])


def write_report_text(report: RegionReport, path):
    lines = [
        f"kind: {report.kind}",
        f"checked: {report.checked}",
        f"feasible: {report.feasible}",
        f"failures: {len(report.witnesses_of_failure)}",
        f"u_bound: {report.u_bound:g}",
        f"estimated_c_bar: {report.estimated_c_bar:.17g}",
        f"estimated_alpha0: {report.estimated_alpha0:.17g}",
    ]
    if report.grid is not None:
        lines.append(f"grid_lower: {list(report.grid.lower)}")
        lines.append(f"grid_upper: {list(report.grid.upper)}")
        lines.append(f"grid_resolution: {list(report.grid.resolution)}")
        lines.append(f"boundary_band: {report.grid.boundary_band:g}")
    lines.append("verdict: " + ("all-pass" if report.all_pass else "failures-present"))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
