"""Activation-pattern solvers for models built by the encoders.

Fixing every neuron's branch (output side or slack side) turns either
encoding into a convex LP/QP; enumerating the branch choices yields a global
oracle, and single-neuron branch flips at degenerate pairs give a verifiable
local search for the complementarity formulation.
"""

from __future__ import annotations

import math

import numpy as np

from ..model import Model
from .frank_wolfe import solve_fw_standard_form
from .result import SolveResult, Status
from .simplex import solve_standard_form, standard_form

ENUMERATION_CAP = 20
BOUNDARY_TOL = 1e-7
IMPROVE_TOL = 1e-8


class NoFeasibleStartError(Exception):
    """No feasible starting pattern could be derived for the local search."""


def _gather_neurons(handles):
    """Flatten one or many EmbeddingHandles into [(label, y, s, z), ...]."""
    if not isinstance(handles, (list, tuple)):
        handles = [handles]
    neurons = []
    for hi, h in enumerate(handles):
        for nid in h.hidden_ids():
            y, s, z = h.neuron_vars[nid]
            neurons.append(((hi, nid), y, s, z))
    return neurons


def _check_free_binaries(model, neurons):
    """Binaries outside the embeddings would be silently relaxed; refuse them."""
    handle_zs = {z for _, _, _, z in neurons if z is not None}
    for var in model.variables:
        if var.kind == "binary" and var.lower < var.upper and var.id not in handle_zs:
            raise ValueError(
                f"free binary {var.name!r} outside the embeddings; "
                "fix binaries (or branch over them) before pattern solves")


def _apply_branch(lower, upper, neuron, active):
    """Fix one neuron's branch in place; False when it conflicts with bounds."""
    _, y, s, z = neuron
    if active:
        fixes = ((s, 0.0), (z, 0.0))
    else:
        fixes = ((y, 0.0), (z, 1.0))
    for vid, val in fixes:
        if vid is None:
            continue
        if val < lower[vid] - 1e-12 or val > upper[vid] + 1e-12:
            return False
        lower[vid] = upper[vid] = val
    return True


def _point_satisfies(x, lower, upper, tol=1e-9):
    return bool(np.all(x >= lower - tol) and np.all(x <= upper + tol))


def _solve_branch(sf, quad, lower, upper, fw_tol):
    """Objective solve in min space: (value, x) or None if infeasible."""
    if quad:
        out = solve_fw_standard_form(sf, quad, lower, upper, tol=fw_tol)
        if out is None:
            return None
        x, val, gap = out
        return val, x
    out = solve_standard_form(sf, lower=lower, upper=upper)
    if out.status != "optimal":
        return None
    return out.obj, out.x


def pattern_enumerate_solve(model: Model, handles, cap: int = ENUMERATION_CAP,
                            fw_tol: float = 1e-8) -> SolveResult:
    """Global oracle: exhaust all 2^n branch assignments and keep the best.

    Each assignment fixes every pair's branch, making the remaining problem a
    convex LP/QP; assignments whose partial fixing is already infeasible are
    pruned as a block, which cannot lose solutions since fixing further
    neurons only shrinks the feasible set.
    """
    neurons = _gather_neurons(handles)
    if len(neurons) > cap:
        raise ValueError(f"{len(neurons)} neuron pairs exceed the enumeration cap {cap}")
    _check_free_binaries(model, neurons)
    sf = standard_form(model)
    quad = tuple((i, j, sf.sign * c) for i, j, c in model.objective.quadratic)
    zero_c = np.zeros(sf.A.shape[1])
    best = [math.inf, None, None]  # min-space value, x, active set
    flags: list = []

    def descend(k, lower, upper, witness):
        if k == len(neurons):
            out = _solve_branch(sf, quad, lower, upper, fw_tol)
            if out is not None and out[0] < best[0] - 1e-12:
                best[0], best[1] = out
                best[2] = {lab for (lab, *_), act in zip(neurons, flags) if act}
            return
        for active in (True, False):
            lo2, up2 = lower.copy(), upper.copy()
            if not _apply_branch(lo2, up2, neurons[k], active):
                continue
            flags.append(active)
            wit2 = witness
            if witness is None or not _point_satisfies(witness, lo2, up2):
                feas = solve_standard_form(sf, c_min=zero_c, lower=lo2, upper=up2)
                wit2 = feas.x if feas.status == "optimal" else None
            if wit2 is not None:
                descend(k + 1, lo2, up2, wit2)
            flags.pop()

    descend(0, sf.lower.copy(), sf.upper.copy(), None)
    if best[1] is None:
        return SolveResult(status=Status.INFEASIBLE)
    x = best[1]
    point = {vid: float(x[vid]) for vid in range(model.num_variables)}
    pattern = frozenset(nid for _, nid in best[2])
    obj = sf.sign * best[0]
    return SolveResult(status=Status.OPTIMAL, point=point, objective=obj,
                       best_bound=obj, pattern=pattern)


def _pattern_from_point(model, neurons, point, tol=BOUNDARY_TOL):
    arr = model.point_array(point)
    active = set()
    for lab, y, s, z in neurons:
        if arr[y] > tol:
            active.add(lab)
    return active


def mpcc_local_solve(model: Model, handles, start=None, start_pattern=None,
                     net=None, max_rounds: int = 1000,
                     boundary_tol: float = BOUNDARY_TOL,
                     improve_tol: float = IMPROVE_TOL,
                     fw_tol: float = 1e-8) -> SolveResult:
    """Pattern local search for complementarity models.

    Solves the convex subproblem of the current branch fixing, then tries
    single flips at the degenerate pairs (y = s = 0 at the subproblem
    optimum, in neuron index order) and accepts the first flip improving by
    more than ``improve_tol``; terminates when none does.  The final
    subproblem's duals are the complementarity multipliers.
    """
    neurons = _gather_neurons(handles)
    labels = [lab for lab, *_ in neurons]
    _check_free_binaries(model, neurons)
    sf = standard_form(model)
    quad = tuple((i, j, sf.sign * c) for i, j, c in model.objective.quadratic)

    if start_pattern is not None:
        flat = set()
        for lab in labels:
            hi, nid = lab
            if nid in start_pattern or lab in start_pattern:
                flat.add(lab)
        active = flat
    elif start is not None:
        active = _pattern_from_point(model, neurons, start, boundary_tol)
    else:
        raise ValueError("mpcc_local_solve needs a starting point or pattern")

    def solve_pattern(act):
        lo, up = sf.lower.copy(), sf.upper.copy()
        for neuron in neurons:
            if not _apply_branch(lo, up, neuron, neuron[0] in act):
                return None
        return _solve_branch(sf, quad, lo, up, fw_tol)

    cur = solve_pattern(active)
    if cur is None:
        raise NoFeasibleStartError("starting pattern has an empty subproblem")
    subproblems = 1
    for _ in range(max_rounds):
        val, x = cur
        boundary = [n for n in neurons
                    if x[n[1]] <= boundary_tol and x[n[2]] <= boundary_tol]
        improved = False
        for neuron in boundary:
            lab = neuron[0]
            flipped = (active - {lab}) if lab in active else (active | {lab})
            out = solve_pattern(flipped)
            subproblems += 1
            if out is not None and out[0] < val - improve_tol:
                active, cur = flipped, out
                improved = True
                break
        if not improved:
            break

    # re-solve through the public path to surface duals and reduced costs
    final = model.copy()
    lo, up = sf.lower.copy(), sf.upper.copy()
    for neuron in neurons:
        _apply_branch(lo, up, neuron, neuron[0] in active)
    for var in final.variables:
        var.lower, var.upper = float(lo[var.id]), float(up[var.id])
        var.kind = "continuous"
    final.complementarities = []  # enforced by the branch fixing above
    if quad:
        from .frank_wolfe import qp_frank_wolfe

        res = qp_frank_wolfe(final.freeze(), tol=fw_tol)
    else:
        from .simplex import lp_solve

        res = lp_solve(final.freeze())
    if res.status == Status.OPTIMAL:
        res.status = Status.FEASIBLE  # locally optimal, no global bound claimed
        res.best_bound = math.nan
    res.nodes = subproblems
    res.pattern = frozenset(nid for _, nid in active)
    if net is not None:
        res.kkt_residual = _stationarity_residual(model, handles, res, net)
    return res


def _stationarity_residual(model, handles, res, net):
    """Best-effort strong-stationarity residual from the final subproblem duals."""
    from .. import stationarity

    try:
        ex = stationarity.extract_mpcc_multipliers(model, handles, res, net)
        if ex is None:
            return math.nan
        report = stationarity.check_strong_stationarity(
            net, ex.point, ex.f, ex.c, mu=ex.mu, nu1=ex.nu1, nu2=ex.nu2)
        return report.max_residual
    except Exception:
        return math.nan
