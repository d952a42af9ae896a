"""Branch and bound over binary variables with simplex (or Frank-Wolfe for
convex-quadratic objectives) node relaxations.

Node selection is best-bound with a depth-first dive until the first
incumbent; branching picks the most fractional binary.  Single-threaded and
deterministic.
"""

from __future__ import annotations

import math
import time

import numpy as np

from ..model import BINARY, Model
from .frank_wolfe import solve_fw_standard_form
from .result import SolveResult, Status
from .simplex import solve_standard_form, standard_form

INT_TOL = 1e-6
GAP_TOL = 1e-6
FEAS_TOL = 1e-6


def _node_solve(sf, quad, lower, upper, fw_tol):
    """Relaxation solve in min space; returns (status, x, value, bound)."""
    if quad:
        out = solve_fw_standard_form(sf, quad, lower, upper, tol=fw_tol)
        if out is None:
            return "infeasible", None, math.inf, math.inf
        x, val, gap = out
        return "optimal", x, val, val - gap
    out = solve_standard_form(sf, lower=lower, upper=upper)
    if out.status == "optimal":
        return "optimal", out.x, out.obj, out.obj
    if out.status == "infeasible":
        return "infeasible", None, math.inf, math.inf
    return out.status, None, math.inf, -math.inf


def milp_solve(model: Model, warmstart=None, max_nodes: int = 100000,
               time_limit: float | None = None, gap_tol: float = GAP_TOL,
               fw_tol: float = 1e-8) -> SolveResult:
    """Solve a model with binary variables to global optimality.

    ``warmstart`` is an incumbent point (var id -> value); it must be feasible
    and integral and is used to prune from the start.  With no binaries left,
    this reduces to a single relaxation solve.
    """
    if model.complementarities:
        raise ValueError("milp_solve does not accept complementarity pairs")
    sf = standard_form(model)
    quad = tuple((i, j, sf.sign * c) for i, j, c in model.objective.quadratic)
    bin_ids = np.array([v.id for v in model.variables
                        if v.kind == BINARY and v.lower < v.upper], dtype=int)
    sign = sf.sign

    incumbent_x = None
    incumbent = math.inf  # min space
    if warmstart is not None:
        arr = model.point_array(warmstart)
        if model.max_violation(arr) > FEAS_TOL:
            raise ValueError("warmstart point violates the model constraints")
        if bin_ids.size and np.abs(arr[bin_ids] - np.round(arr[bin_ids])).max() > INT_TOL:
            raise ValueError("warmstart point is not integral on the binaries")
        incumbent = sign * model.objective.value(arr)
        full = np.zeros(sf.A.shape[1])
        full[: model.num_variables] = arr
        incumbent_x = full

    t0 = time.monotonic()
    nodes = []  # (bound, seq, lower, upper)
    nodes.append((-math.inf, 0, sf.lower.copy(), sf.upper.copy()))
    seq = 1
    explored = 0
    limit_hit = False
    while nodes:
        if explored >= max_nodes or (time_limit and time.monotonic() - t0 > time_limit):
            limit_hit = True
            break
        if incumbent_x is None:
            idx = len(nodes) - 1  # dive for a first incumbent
        else:
            idx = min(range(len(nodes)), key=lambda k: (nodes[k][0], nodes[k][1]))
        bound0, _, lo, up = nodes.pop(idx)
        if bound0 >= incumbent - gap_tol:
            continue
        explored += 1
        status, x, val, bound = _node_solve(sf, quad, lo, up, fw_tol)
        if status == "infeasible":
            continue
        if status == "unbounded":
            return SolveResult(status=Status.UNBOUNDED, iterations=explored)
        if status == "limit":
            limit_hit = True
            continue
        if bound >= incumbent - gap_tol:
            continue
        frac = np.abs(x[bin_ids] - np.round(x[bin_ids])) if bin_ids.size else np.empty(0)
        if frac.size == 0 or frac.max() <= INT_TOL:
            if val < incumbent - 1e-12:
                incumbent = val
                incumbent_x = x.copy()
            continue
        j = int(bin_ids[np.argmin(np.abs(frac - 0.5))])
        for branch_val in (0.0, 1.0):
            lo2, up2 = lo.copy(), up.copy()
            if branch_val == 0.0:
                up2[j] = 0.0
            else:
                lo2[j] = 1.0
            nodes.append((bound, seq, lo2, up2))
            seq += 1

    open_bound = min((b for b, _, _, _ in nodes), default=incumbent)
    best_bound = min(incumbent, open_bound)
    res = SolveResult(status=Status.INFEASIBLE, iterations=explored, nodes=explored)
    if incumbent_x is not None:
        res.point = {vid: float(incumbent_x[vid]) for vid in range(model.num_variables)}
        res.objective = sign * incumbent
        res.best_bound = sign * best_bound
        res.status = Status.FEASIBLE if limit_hit else Status.OPTIMAL
    elif limit_hit:
        res.status = Status.LIMIT
        res.best_bound = sign * best_bound
    return res
