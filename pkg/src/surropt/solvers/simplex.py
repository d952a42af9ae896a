"""Dense two-phase primal simplex over bounded variables.

Deliberately dense and factorization-per-iteration: the problems this package
builds are desk scale (hundreds of rows), and a simplex whose every step can
be audited beats a fast one here.  Dantzig pricing with a permanent switch to
Bland's rule once degenerate pivots pile up gives finite termination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from ..model import BINARY, EQ, LE, MIN, Model
from .result import NumericalError, SolveResult, Status

INF = float("inf")

FEAS_TOL = 1e-8
OPT_TOL = 1e-8
PIV_TOL = 1e-9

# nonbasic variable states
AT_LOWER, AT_UPPER, FREE, BASIC = 0, 1, 2, 3


@dataclass
class StandardFormLP:
    """min c·x + c0  s.t.  A x = b,  lower <= x <= upper (inf bounds allowed)."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    c0: float
    lower: np.ndarray
    upper: np.ndarray
    nstruct: int  # structural variables come first, then one slack per inequality
    slack_col: np.ndarray  # per row: slack column index, -1 for equalities
    senses: list
    sign: float  # +1 for min models, -1 for max (already folded into c, c0)


def standard_form(model: Model) -> StandardFormLP:
    """Equality-form arrays for a model; binaries are relaxed to their bounds."""
    n = model.num_variables
    m = len(model.constraints)
    nslack = sum(1 for c in model.constraints if c.sense != EQ)
    ntot = n + nslack
    A = np.zeros((m, ntot))
    b = np.empty(m)
    lower = np.empty(ntot)
    upper = np.empty(ntot)
    for var in model.variables:
        lower[var.id] = var.lower
        upper[var.id] = var.upper
    slack_col = np.full(m, -1, dtype=int)
    senses = []
    k = n
    for r, con in enumerate(model.constraints):
        for vid, coef in con.expr.terms.items():
            A[r, vid] = coef
        b[r] = con.rhs - con.expr.constant
        senses.append(con.sense)
        if con.sense != EQ:
            A[r, k] = 1.0
            if con.sense == LE:
                lower[k], upper[k] = 0.0, INF
            else:
                lower[k], upper[k] = -INF, 0.0
            slack_col[r] = k
            k += 1
    sign = 1.0 if model.objective.sense == MIN else -1.0
    c = np.zeros(ntot)
    for vid, coef in model.objective.linear.terms.items():
        c[vid] = sign * coef
    c0 = sign * model.objective.linear.constant
    return StandardFormLP(A, b, c, c0, lower, upper, n, slack_col, senses, sign)


@dataclass
class SimplexOut:
    status: str  # optimal | infeasible | unbounded | limit
    x: np.ndarray
    obj: float  # min-space objective including c0
    pi: np.ndarray
    reduced: np.ndarray
    iterations: int


class _Tableau:
    def __init__(self, A, b, lower, upper, slack_col):
        m, n = A.shape
        self.m, self.n = m, n
        self.lower = lower.copy()
        self.upper = upper.copy()
        # nonbasic start: nearest finite bound, free variables sit at 0
        x = np.where(np.isfinite(lower), lower, np.where(np.isfinite(upper), upper, 0.0))
        state = np.where(np.isfinite(lower), AT_LOWER,
                         np.where(np.isfinite(upper), AT_UPPER, FREE)).astype(np.int8)
        resid = b - A @ x
        basis = np.empty(m, dtype=int)
        art_cols = []
        art_data = []
        for i in range(m):
            j = slack_col[i]
            if j >= 0:
                val = x[j] + resid[i]
                if self.lower[j] - 1e-12 <= val <= self.upper[j] + 1e-12:
                    # crash: the row's own slack absorbs the residual
                    x[j] = val
                    basis[i] = j
                    state[j] = BASIC
                    continue
            col = len(art_cols)
            art_cols.append(i)
            art_data.append(1.0 if resid[i] >= 0 else -1.0)
            basis[i] = n + col
        if art_cols:
            E = np.zeros((m, len(art_cols)))
            for col, (i, s) in enumerate(zip(art_cols, art_data)):
                E[i, col] = s
            self.A = np.hstack([A, E])
            self.lower = np.concatenate([self.lower, np.zeros(len(art_cols))])
            self.upper = np.concatenate([self.upper, np.full(len(art_cols), INF)])
            x = np.concatenate([x, np.abs(resid[art_cols])])
            state = np.concatenate([state, np.full(len(art_cols), BASIC, dtype=np.int8)])
        else:
            self.A = A
        self.b = b
        self.x = x
        self.state = state
        self.basis = basis
        self.nart = len(art_cols)
        self.ntot = self.A.shape[1]
        self.iterations = 0
        self.bland = False
        self._degen = 0
        self.pi = np.zeros(m)

    def _factor(self):
        B = self.A[:, self.basis]
        try:
            lu = lu_factor(B, check_finite=False)
        except Exception as exc:  # pragma: no cover - singular basis
            raise NumericalError(f"basis factorization failed: {exc}") from exc
        return lu

    def _refresh_basics(self, lu):
        contrib = self.A @ self.x - self.A[:, self.basis] @ self.x[self.basis]
        xb = lu_solve(lu, self.b - contrib, check_finite=False)
        if not np.isfinite(xb).all():
            raise NumericalError("singular basis during refactorization")
        self.x[self.basis] = xb
        return xb

    def run(self, c, maxiter):
        """Iterate to optimality for costs c; returns 'optimal'|'unbounded'|'limit'."""
        m = self.m
        while True:
            if self.iterations >= maxiter:
                return "limit"
            lu = self._factor()
            xb = self._refresh_basics(lu)
            self.pi = lu_solve(lu, c[self.basis], trans=1, check_finite=False)
            d = c - self.A.T @ self.pi
            movable = self.lower < self.upper
            up_score = np.where((self.state == AT_LOWER) | (self.state == FREE), -d, -INF)
            dn_score = np.where((self.state == AT_UPPER) | (self.state == FREE), d, -INF)
            score = np.maximum(up_score, dn_score)
            score[~movable] = -INF
            score[self.state == BASIC] = -INF
            if self.bland:
                eligible = np.flatnonzero(score > OPT_TOL)
                if eligible.size == 0:
                    return "optimal"
                q = int(eligible[0])
            else:
                q = int(np.argmax(score))
                if score[q] <= OPT_TOL:
                    return "optimal"
            delta = 1.0 if up_score[q] >= dn_score[q] else -1.0
            u = lu_solve(lu, self.A[:, q], check_finite=False)
            if not np.isfinite(u).all():
                raise NumericalError("singular basis in ratio test")
            # ratio test: entering moves by t >= 0 in direction delta
            denom = delta * u
            ratios = np.full(m, INF)
            dec = denom > PIV_TOL
            low = self.lower[self.basis]
            upp = self.upper[self.basis]
            with np.errstate(invalid="ignore"):
                ratios[dec] = np.where(np.isfinite(low[dec]),
                                       (xb[dec] - low[dec]) / denom[dec], INF)
                inc = denom < -PIV_TOL
                ratios[inc] = np.where(np.isfinite(upp[inc]),
                                       (xb[inc] - upp[inc]) / denom[inc], INF)
            ratios = np.maximum(ratios, 0.0)
            t_basic = float(ratios.min()) if m else INF
            if self.state[q] == FREE:
                t_cap = INF
            else:
                span = self.upper[q] - self.lower[q]
                t_cap = span if np.isfinite(span) else INF
            t = min(t_basic, t_cap)
            if t == INF:
                return "unbounded"
            self.iterations += 1
            self._degen = self._degen + 1 if t <= 1e-10 else 0
            if self._degen > 200:
                self.bland = True
            if t_cap <= t_basic:
                # bound flip, basis unchanged
                self.x[q] += delta * t
                self.state[q] = AT_UPPER if self.state[q] == AT_LOWER else AT_LOWER
                continue
            ties = np.flatnonzero(ratios <= t_basic + 1e-12)
            if self.bland:
                k = int(ties[np.argmin(self.basis[ties])])
            else:
                k = int(ties[np.argmax(np.abs(u[ties]))])
            leave = self.basis[k]
            self.x[q] += delta * t
            self.x[leave] = self.lower[leave] if denom[k] > 0 else self.upper[leave]
            self.state[leave] = AT_LOWER if denom[k] > 0 else AT_UPPER
            self.basis[k] = q
            self.state[q] = BASIC

    def drive_out_artificials(self, feas_tol):
        """After phase 1: pivot artificials out of the basis or pin redundant rows."""
        art_start = self.ntot - self.nart
        self.x[art_start:] = np.where(np.abs(self.x[art_start:]) <= feas_tol,
                                      0.0, self.x[art_start:])
        for k in range(self.m):
            j = self.basis[k]
            if j < art_start:
                continue
            lu = self._factor()
            e = np.zeros(self.m)
            e[k] = 1.0
            psi = lu_solve(lu, e, trans=1, check_finite=False)
            row = psi @ self.A[:, :art_start]
            candidates = np.flatnonzero(
                (np.abs(row) > 1e-7) & (self.state[:art_start] != BASIC)
            )
            if candidates.size:
                enter = int(candidates[np.argmax(np.abs(row[candidates]))])
                self.basis[k] = enter
                self.state[enter] = BASIC
                self.state[j] = AT_LOWER
                self.x[j] = 0.0
        # artificials may never move again
        self.lower[art_start:] = 0.0
        self.upper[art_start:] = 0.0


def solve_standard_form(sf: StandardFormLP, c_min=None, lower=None, upper=None,
                        maxiter=None) -> SimplexOut:
    """Solve (optionally with substituted costs/bounds); everything in min space."""
    c_struct = sf.c if c_min is None else np.asarray(c_min, dtype=float)
    lo = sf.lower if lower is None else np.asarray(lower, dtype=float)
    up = sf.upper if upper is None else np.asarray(upper, dtype=float)
    if np.any(lo > up):
        x = np.where(np.isfinite(lo), lo, np.where(np.isfinite(up), up, 0.0))
        return SimplexOut("infeasible", x, math.nan, np.zeros(sf.A.shape[0]),
                          np.zeros(sf.A.shape[1]), 0)
    m, ntot = sf.A.shape
    if maxiter is None:
        maxiter = 200 * (m + ntot) + 2000
    tab = _Tableau(sf.A, sf.b, lo, up, sf.slack_col)
    feas_scale = FEAS_TOL * max(1.0, float(np.abs(sf.b).max(initial=0.0)))
    if tab.nart:
        c1 = np.zeros(tab.ntot)
        c1[ntot:] = 1.0
        status = tab.run(c1, maxiter)
        if status == "limit":
            return SimplexOut("limit", tab.x[:ntot], math.nan, tab.pi,
                              np.zeros(ntot), tab.iterations)
        phase1 = float(np.abs(tab.x[ntot:]).sum())
        if phase1 > feas_scale:
            return SimplexOut("infeasible", tab.x[:ntot], math.nan, tab.pi,
                              np.zeros(ntot), tab.iterations)
        tab.drive_out_artificials(feas_scale)
    c_full = np.zeros(tab.ntot)
    c_full[:ntot] = c_struct
    status = tab.run(c_full, maxiter)
    lu = tab._factor()
    tab._refresh_basics(lu)
    pi = lu_solve(lu, c_full[tab.basis], trans=1, check_finite=False)
    reduced = c_full[:ntot] - sf.A.T @ pi
    x = tab.x[:ntot]
    obj = float(c_struct @ x) + sf.c0
    out_status = {"optimal": "optimal", "unbounded": "unbounded", "limit": "limit"}[status]
    return SimplexOut(out_status, x.copy(), obj, pi, reduced, tab.iterations)


_STATUS_MAP = {
    "optimal": Status.OPTIMAL,
    "infeasible": Status.INFEASIBLE,
    "unbounded": Status.UNBOUNDED,
    "limit": Status.LIMIT,
}


def _dual_objective(sf: StandardFormLP, out: SimplexOut) -> float:
    """Dual bound: pi·b plus the bound contributions of the reduced costs."""
    val = float(out.pi @ sf.b) + sf.c0
    for j in range(sf.A.shape[1]):
        dj = out.reduced[j]
        if dj > OPT_TOL:
            if not np.isfinite(sf.lower[j]):
                return -INF
            val += dj * sf.lower[j]
        elif dj < -OPT_TOL:
            if not np.isfinite(sf.upper[j]):
                return -INF
            val += dj * sf.upper[j]
    return val


def result_from_simplex(model: Model, sf: StandardFormLP, out: SimplexOut) -> SolveResult:
    """Map a min-space simplex output back to the model's objective orientation."""
    status = _STATUS_MAP[out.status]
    point = {vid: float(out.x[vid]) for vid in range(model.num_variables)}
    res = SolveResult(status=status, point=point, iterations=out.iterations)
    if out.status == "optimal":
        res.objective = sf.sign * out.obj
        res.best_bound = res.objective
        res.duals = {r: sf.sign * float(out.pi[r]) for r in range(len(model.constraints))}
        res.reduced_costs = {vid: sf.sign * float(out.reduced[vid])
                             for vid in range(model.num_variables)}
        res.dual_objective = sf.sign * _dual_objective(sf, out)
    return res


def lp_solve(model: Model, maxiter=None) -> SolveResult:
    """Solve a pure LP (no binaries, no complementarities, no quadratic objective)."""
    if any(v.kind == BINARY for v in model.variables):
        raise ValueError("lp_solve does not accept binary variables")
    if model.complementarities:
        raise ValueError("lp_solve does not accept complementarity pairs")
    if model.objective.quadratic:
        raise ValueError("lp_solve does not accept quadratic objectives")
    sf = standard_form(model)
    out = solve_standard_form(sf, maxiter=maxiter)
    return result_from_simplex(model, sf, out)
