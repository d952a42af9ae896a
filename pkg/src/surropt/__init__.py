"""Optimization toolkit for problems with trained ReLU/swish network surrogates.

Compiles networks into interchangeable big-M mixed-integer and
complementarity-constraint models (or optimizes over them directly in the
embedded form), solves them with self-contained desk-scale solvers, and
verifies stationarity through generalized Jacobians and activation-region
geometry.
"""

from .encoders import (
    BigMBounds,
    EmbeddingHandles,
    convex_hull_constraints,
    encode_mip,
    encode_mpcc,
    interval_bounds,
    tighten_bounds,
)
from .model import Model, fix_binaries
from .nn import (
    Activation,
    Layer,
    Network,
    NeuronId,
    affine_piece,
    forward,
    forward_with_preactivations,
    jacobian,
    random_network,
    sign_partition,
)
from .regions import (
    enumerate_nonempty_patterns,
    general_position_check,
    generalized_jacobian,
    hull_contains_zero,
    region_inequalities,
    region_nonempty,
    zaslavsky_count,
)
from .solvers.branch_bound import milp_solve
from .solvers.embedded import BoxRegion, PolytopeRegion, embedded_solve
from .solvers.frank_wolfe import qp_frank_wolfe
from .solvers.pattern import mpcc_local_solve, pattern_enumerate_solve
from .solvers.result import SolveResult, Status, TraceRecord
from .solvers.simplex import lp_solve
from .stationarity import (
    check_embedded_stationarity,
    check_strong_stationarity,
    equivalence_roundtrip,
    recover_kappa,
)

__version__ = "0.1.0"
