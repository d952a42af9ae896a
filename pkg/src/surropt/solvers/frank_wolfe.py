"""Frank-Wolfe (conditional gradient) for convex quadratic objectives over
polyhedra, with the package simplex as the linear-minimization oracle and
exact line search; the duality gap certifies suboptimality."""

from __future__ import annotations

import math

import numpy as np

from ..model import Model
from .result import SolveResult, Status
from .simplex import solve_standard_form, standard_form

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 100000


def _quad_value(quad, x):
    return sum(c * x[i] * x[j] for i, j, c in quad)


def _quad_grad(quad, x, out):
    out[:] = 0.0
    for i, j, c in quad:
        if i == j:
            out[i] += 2.0 * c * x[i]
        else:
            out[i] += c * x[j]
            out[j] += c * x[i]
    return out


def solve_fw_standard_form(sf, quad, lower=None, upper=None, tol=DEFAULT_TOL,
                           max_iter=DEFAULT_MAX_ITER, start=None):
    """Min-space Frank-Wolfe on a standard-form polytope.

    Returns (x, value, gap) or None when the region is infeasible.  ``quad``
    holds min-space quadratic terms; the linear part lives in ``sf.c``.
    """
    ntot = sf.A.shape[1]
    if start is None:
        feas = solve_standard_form(sf, c_min=np.zeros(ntot), lower=lower, upper=upper)
        if feas.status != "optimal":
            return None
        x = feas.x.copy()
    else:
        x = np.asarray(start, dtype=float).copy()
    if not quad:
        out = solve_standard_form(sf, lower=lower, upper=upper)
        if out.status != "optimal":
            return None
        return out.x, out.obj, 0.0
    g = np.zeros(ntot)
    gap = math.inf
    for _ in range(max_iter):
        _quad_grad(quad, x, g)
        g += sf.c
        lmo = solve_standard_form(sf, c_min=g, lower=lower, upper=upper)
        if lmo.status == "unbounded":
            raise ValueError("Frank-Wolfe requires a bounded feasible region")
        if lmo.status != "optimal":
            return None
        d = lmo.x - x
        gap = float(-g @ d)
        if gap <= tol:
            break
        dqd = _quad_value(quad, d)
        gamma = 1.0 if dqd <= 0 else min(1.0, gap / (2.0 * dqd))
        x = x + gamma * d
    value = float(sf.c @ x) + sf.c0 + _quad_value(quad, x)
    return x, value, max(gap, 0.0)


def qp_frank_wolfe(model: Model, tol: float = DEFAULT_TOL,
                   max_iter: int = DEFAULT_MAX_ITER, start=None) -> SolveResult:
    """Minimize a convex linear+quadratic objective over the model's polyhedron.

    Terminates when the Frank-Wolfe duality gap drops below ``tol``; the gap
    bounds the true suboptimality, and ``best_bound`` reports value - gap.
    """
    if any(v.kind == "binary" for v in model.variables):
        raise ValueError("qp_frank_wolfe does not accept binary variables")
    if model.complementarities:
        raise ValueError("qp_frank_wolfe does not accept complementarity pairs")
    sf = standard_form(model)
    quad = tuple((i, j, sf.sign * c) for i, j, c in model.objective.quadratic)
    start_full = None
    if start is not None:
        arr = model.point_array(start)
        if model.max_violation(arr) > 1e-7:
            raise ValueError("start point violates the model constraints")
        # complete with slack values so the equality system holds
        start_full = np.zeros(sf.A.shape[1])
        start_full[: model.num_variables] = arr
        for r, col in enumerate(sf.slack_col):
            if col >= 0:
                start_full[col] = sf.b[r] - sf.A[r, : model.num_variables] @ arr
    out = solve_fw_standard_form(sf, quad, tol=tol, max_iter=max_iter, start=start_full)
    if out is None:
        return SolveResult(status=Status.INFEASIBLE)
    x, val, gap = out
    point = {vid: float(x[vid]) for vid in range(model.num_variables)}
    status = Status.OPTIMAL if gap <= tol else Status.LIMIT
    return SolveResult(status=status, point=point, objective=sf.sign * val,
                       best_bound=sf.sign * (val - gap), kkt_residual=gap)
