"""Stabilization of control-affine systems by pairing a weak control Lyapunov
function with a strict nonsmooth control barrier function.

The library provides the certificate abstractions, an exact small-QP solver,
the switching / relaxed min-norm controllers built from them, a fixed-step
closed-loop simulator with event bookkeeping, and grid-based verification of
the pointwise feasibility hypotheses.  The `barrier-stab` CLI reproduces the
two benchmark experiments at desk scale.
"""

from .certificates import (BarrierPiece, NonsmoothBarrier, SafeSetValue, WeakClf,
                           cbf_rows, clf_row, compact_truncate, make_linear_alpha,
                           pointwise_compatible)
from .controllers import (CompatibilityViolation, ControlDecision, ControllerSpec,
                          SwitchMemory, bncbf_qp_control, decide, relaxed_control,
                          switching_control, wclf_qp_control)
from .qp import QpProblem, QpSolution, check_kkt, make_problem, solve_qp
from .simulate import (OutcomeReport, SimConfig, Trajectory, classify_outcome,
                       simulate, write_trajectory_csv)
from .systems import (BUMP_CUTOFF, ControlAffineSystem, bump_system,
                      eval_vector_field, smooth_cutoff, unicycle_system)
from .verify import (FailureWitness, GridSpec, RegionReport, estimate_alpha0,
                     verify_boundary_sbncbf, verify_compatibility_region)

__version__ = "0.1.0"
