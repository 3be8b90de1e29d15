"""Exact solver for the small, dense, strictly convex QPs used by the controllers.

Every controller in this package reduces to

    min_z  1/2 * sum_j w_j * z_j^2   s.t.   rows of the form  a^T z <= b  or  a^T z >= b

with at most a handful of decision variables and constraints.  At this size an
exhaustive active-set enumeration is exact and branch-free: for every subset S
of constraints with |S| <= dim, solve the equality-constrained stationarity
system, keep the candidates that are primal feasible with nonnegative
multipliers, and return the cheapest one.  Infeasibility is certified (not
guessed) by running the same enumeration on the total-violation residual.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

logger = logging.getLogger(__name__)

MAX_DIM = 8
MAX_CONSTRAINTS = 16

FEAS_TOL = 1e-9
DUAL_TOL = 1e-9
PIVOT_TOL = 1e-12


class EnvelopeError(ValueError):
    """Raised when a problem exceeds the dim<=8 / 16-constraint design envelope."""


@dataclass(frozen=True)
class Constraint:
    row: tuple
    rhs: float
    sense: str  # "<=" or ">="

    def __post_init__(self):
        if self.sense not in ("<=", ">="):
            raise ValueError(f"sense must be '<=' or '>=', got {self.sense!r}")


@dataclass(frozen=True)
class QpProblem:
    dim: int
    quadratic_weights: tuple
    constraints: tuple  # of Constraint

    def __post_init__(self):
        if self.dim < 1 or self.dim > MAX_DIM:
            raise EnvelopeError(f"dim={self.dim} outside envelope 1..{MAX_DIM}")
        if len(self.constraints) > MAX_CONSTRAINTS:
            raise EnvelopeError(
                f"{len(self.constraints)} constraints exceed envelope {MAX_CONSTRAINTS}"
            )
        if len(self.quadratic_weights) != self.dim:
            raise ValueError("quadratic_weights length must equal dim")
        if any(w <= 0 for w in self.quadratic_weights):
            raise ValueError("quadratic_weights must be strictly positive")
        for c in self.constraints:
            if len(c.row) != self.dim:
                raise ValueError("constraint row length must equal dim")


def make_problem(dim, constraints, weights=None):
    """Convenience builder; constraints are (row, rhs, sense) triples."""
    if weights is None:
        weights = (1.0,) * dim
    cons = tuple(
        Constraint(tuple(float(v) for v in row), float(rhs), sense)
        for row, rhs, sense in constraints
    )
    return QpProblem(dim=dim, quadratic_weights=tuple(float(w) for w in weights), constraints=cons)


@dataclass
class QpSolution:
    z: np.ndarray
    status: str  # "optimal" or "infeasible"
    active_constraints: tuple = ()
    multipliers: tuple = ()
    kkt_residual: float = float("nan")
    cost: float = float("nan")
    infeasibility: float = 0.0  # certified minimum total violation when infeasible
    degenerate_skipped: int = 0


@lru_cache(maxsize=None)
def _subsets(n_constraints, dim):
    """All index subsets with size <= dim, in lexicographic tuple order.

    Lexicographic enumeration makes the equal-cost tie-break (first hit wins)
    deterministic across platforms.
    """
    subs = [()]
    for k in range(1, min(dim, n_constraints) + 1):
        subs.extend(itertools.combinations(range(n_constraints), k))
    subs.sort()
    return tuple(subs)


def _solve_once(G, d):
    k = len(d)
    A = [list(G[i]) + [d[i]] for i in range(k)]
    scale = max((abs(G[i][j]) for i in range(k) for j in range(k)), default=0.0)
    if scale == 0.0:
        return None
    for col in range(k):
        piv = max(range(col, k), key=lambda r: abs(A[r][col]))
        if abs(A[piv][col]) <= PIVOT_TOL * scale:
            return None
        if piv != col:
            A[col], A[piv] = A[piv], A[col]
        inv = 1.0 / A[col][col]
        for r in range(col + 1, k):
            f = A[r][col] * inv
            if f != 0.0:
                for c in range(col, k + 1):
                    A[r][c] -= f * A[col][c]
    mu = [0.0] * k
    for r in range(k - 1, -1, -1):
        s = A[r][k] - sum(A[r][c] * mu[c] for c in range(r + 1, k))
        mu[r] = s / A[r][r]
    return mu


def _solve_linear(G, d):
    """Solve G mu = d (tiny dense system) via Gaussian elimination with partial
    pivoting plus two rounds of iterative refinement.  Returns None when G is
    numerically singular."""
    k = len(d)
    mu = _solve_once(G, d)
    if mu is None:
        return None
    for _ in range(2):
        r = [d[i] - sum(G[i][j] * mu[j] for j in range(k)) for i in range(k)]
        if max((abs(v) for v in r), default=0.0) == 0.0:
            break
        corr = _solve_once(G, r)
        if corr is None:
            break
        mu = [m + c for m, c in zip(mu, corr)]
    return mu


def _normalized(p: QpProblem):
    """Rows/rhs with every constraint flipped to `row . z >= rhs` form."""
    rows, rhs = [], []
    for c in p.constraints:
        if c.sense == ">=":
            rows.append(list(c.row))
            rhs.append(c.rhs)
        else:
            rows.append([-v for v in c.row])
            rhs.append(-c.rhs)
    return rows, rhs


def _violation(rows, rhs, z):
    worst = 0.0
    for row, d in zip(rows, rhs):
        v = d - sum(r * zj for r, zj in zip(row, z))
        if v > worst:
            worst = v
    return worst


def _total_violation(rows, rhs, z):
    tot = 0.0
    for row, d in zip(rows, rhs):
        v = d - sum(r * zj for r, zj in zip(row, z))
        if v > 0.0:
            tot += v
    return tot


def solve_qp(p: QpProblem) -> QpSolution:
    """Minimize 1/2 sum w_j z_j^2 subject to the problem's linear constraints.

    Enumeration order doubles as the tie-break: among equal-cost candidates the
    lexicographically smallest active set is kept.  Rank-deficient subsets are
    skipped (counted in the solution for diagnostics).
    """
    rows, rhs = _normalized(p)
    n = len(rows)
    dim = p.dim
    winv = [1.0 / w for w in p.quadratic_weights]

    # Unconstrained optimum short-circuit.
    zero = [0.0] * dim
    if _violation(rows, rhs, zero) <= FEAS_TOL:
        z = np.zeros(dim)
        return QpSolution(z=z, status="optimal", active_constraints=(), multipliers=(),
                          kkt_residual=_violation(rows, rhs, zero), cost=0.0)

    best = None  # (cost, subset, z, mu)
    skipped = 0
    for sub in _subsets(n, dim):
        k = len(sub)
        if k == 0:
            continue  # handled by the z=0 short-circuit
        # G = C_S W^-1 C_S^T, d = rhs_S
        G = [[sum(rows[i][t] * winv[t] * rows[j][t] for t in range(dim)) for j in sub]
             for i in sub]
        d = [rhs[i] for i in sub]
        mu = _solve_linear(G, d)
        if mu is None:
            skipped += 1
            continue
        if any(m < -DUAL_TOL for m in mu):
            continue
        z = [winv[t] * sum(mu[a] * rows[i][t] for a, i in enumerate(sub)) for t in range(dim)]
        if _violation(rows, rhs, z) > FEAS_TOL:
            continue
        cost = 0.5 * sum(w * zj * zj for w, zj in zip(p.quadratic_weights, z))
        if best is None or cost < best[0] - 1e-12 * (1.0 + abs(best[0])):
            best = (cost, sub, z, mu)
    if skipped:
        logger.debug("solve_qp: skipped %d rank-deficient active subsets", skipped)

    if best is not None:
        cost, sub, z, mu = best
        sol = QpSolution(z=np.array(z), status="optimal", active_constraints=sub,
                         multipliers=tuple(mu), cost=cost, degenerate_skipped=skipped)
        sol.kkt_residual = check_kkt(p, sol)
        return sol

    # Phase 1: certify emptiness by minimizing the total violation over the
    # same candidate family (boundary intersections are where the piecewise
    # linear residual attains its minimum).
    min_viol = _total_violation(rows, rhs, zero)
    z_best = zero
    for sub in _subsets(n, dim):
        if not sub:
            continue
        k = len(sub)
        # Least-norm point on the intersection of the subset's boundaries:
        # z = C_S^T mu with C_S C_S^T mu = rhs_S.
        G = [[sum(rows[i][t] * rows[j][t] for t in range(dim)) for j in sub] for i in sub]
        d = [rhs[i] for i in sub]
        mu = _solve_linear(G, d)
        if mu is None:
            continue
        z = [sum(mu[a] * rows[i][t] for a, i in enumerate(sub)) for t in range(dim)]
        tv = _total_violation(rows, rhs, z)
        if tv < min_viol:
            min_viol = tv
            z_best = z
    return QpSolution(z=np.array(z_best), status="infeasible",
                      infeasibility=min_viol, degenerate_skipped=skipped)


def check_kkt(p: QpProblem, s: QpSolution) -> float:
    """Max of stationarity, primal violation, dual negativity and complementary
    slackness residuals, recomputed from the reported multipliers."""
    if s.status != "optimal":
        raise ValueError("check_kkt requires an optimal solution")
    rows, rhs = _normalized(p)
    z = [float(v) for v in s.z]
    dim = p.dim

    primal = _violation(rows, rhs, z)
    dual = max((-m for m in s.multipliers), default=0.0)
    dual = max(dual, 0.0)

    grad = [p.quadratic_weights[t] * z[t] for t in range(dim)]
    for m, i in zip(s.multipliers, s.active_constraints):
        for t in range(dim):
            grad[t] -= m * rows[i][t]
    stationarity = max((abs(g) for g in grad), default=0.0)

    comp = 0.0
    for m, i in zip(s.multipliers, s.active_constraints):
        slack = sum(rows[i][t] * z[t] for t in range(dim)) - rhs[i]
        comp = max(comp, abs(m * slack))

    return max(primal, dual, stationarity, comp)
