"""Solver-agnostic optimization model: variables, linear rows, complementarity pairs.

Variable ids are dense integers in creation order, which keeps exports and
solver traces diffable across runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

CONTINUOUS = "continuous"
BINARY = "binary"

LE = "<="
EQ = "="
GE = ">="

MIN = "min"
MAX = "max"

INF = float("inf")


@dataclass
class Variable:
    id: int
    name: str
    kind: str
    lower: float
    upper: float


class LinearExpr:
    """Sparse linear form ``sum(coef * var) + constant``; zero coefficients are dropped."""

    __slots__ = ("terms", "constant")

    def __init__(self, terms=None, constant: float = 0.0):
        self.terms = {}
        if terms:
            for vid, coef in dict(terms).items():
                if not math.isfinite(coef):
                    raise ValueError("coefficients must be finite")
                if coef != 0.0:
                    self.terms[int(vid)] = float(coef)
        if not math.isfinite(constant):
            raise ValueError("constant must be finite")
        self.constant = float(constant)

    def add(self, vid: int, coef: float) -> "LinearExpr":
        new = self.terms.get(vid, 0.0) + coef
        if new == 0.0:
            self.terms.pop(vid, None)
        else:
            self.terms[vid] = new
        return self

    def value(self, point: np.ndarray) -> float:
        return float(sum(c * point[v] for v, c in self.terms.items()) + self.constant)

    def copy(self) -> "LinearExpr":
        return LinearExpr(self.terms, self.constant)

    def __repr__(self):
        return f"LinearExpr({self.terms}, {self.constant})"


@dataclass
class Constraint:
    expr: LinearExpr
    sense: str
    rhs: float
    tag: str = ""

    def violation(self, point: np.ndarray) -> float:
        lhs = self.expr.value(point)
        if self.sense == LE:
            return max(0.0, lhs - self.rhs)
        if self.sense == GE:
            return max(0.0, self.rhs - lhs)
        return abs(lhs - self.rhs)


@dataclass(frozen=True)
class ComplementarityPair:
    a: int
    b: int


@dataclass
class Objective:
    sense: str = MIN
    linear: LinearExpr = field(default_factory=LinearExpr)
    quadratic: tuple = ()  # ((vid, vid, coef), ...), each unordered pair once

    def value(self, point: np.ndarray) -> float:
        val = self.linear.value(point)
        for i, j, c in self.quadratic:
            val += c * point[i] * point[j]
        return val


class Model:
    """Single-writer optimization model; ``freeze()`` makes it shareable read-only."""

    def __init__(self):
        self.variables: list[Variable] = []
        self.constraints: list[Constraint] = []
        self.complementarities: list[ComplementarityPair] = []
        self.objective = Objective()
        self.metadata: dict[str, str] = {}
        self._frozen = False

    # -- construction -----------------------------------------------------

    def _writable(self):
        if self._frozen:
            raise RuntimeError("model is frozen")

    def add_variable(self, name: str, kind: str = CONTINUOUS,
                     lower: float = -INF, upper: float = INF) -> int:
        self._writable()
        if kind not in (CONTINUOUS, BINARY):
            raise ValueError(f"unknown variable kind {kind!r}")
        if kind == BINARY:
            lower = 0.0 if lower == -INF else lower
            upper = 1.0 if upper == INF else upper
            if lower < 0 or upper > 1:
                raise ValueError("binary bounds must lie in [0, 1]")
        if lower > upper:
            raise ValueError(f"bound inversion on {name}: [{lower}, {upper}]")
        vid = len(self.variables)
        self.variables.append(Variable(vid, name, kind, float(lower), float(upper)))
        return vid

    def _check_ids(self, ids):
        for vid in ids:
            if not 0 <= vid < len(self.variables):
                raise KeyError(f"unknown variable id {vid}")

    def add_constraint(self, terms, sense: str, rhs: float, tag: str = "") -> int:
        self._writable()
        if sense not in (LE, EQ, GE):
            raise ValueError(f"unknown sense {sense!r}")
        if not math.isfinite(rhs):
            raise ValueError("rhs must be finite")
        expr = terms if isinstance(terms, LinearExpr) else LinearExpr(terms)
        self._check_ids(expr.terms)
        self.constraints.append(Constraint(expr, sense, float(rhs), tag))
        return len(self.constraints) - 1

    def add_complementarity(self, a: int, b: int) -> None:
        self._writable()
        self._check_ids((a, b))
        for vid in (a, b):
            var = self.variables[vid]
            if var.kind != CONTINUOUS or var.lower < 0:
                raise ValueError(
                    f"complementarity variables must be continuous with lower bound 0 ({var.name})"
                )
        self.complementarities.append(ComplementarityPair(a, b))

    def set_objective(self, sense: str, linear, quadratic=()) -> None:
        self._writable()
        if sense not in (MIN, MAX):
            raise ValueError(f"unknown objective sense {sense!r}")
        expr = linear if isinstance(linear, LinearExpr) else LinearExpr(linear)
        self._check_ids(expr.terms)
        quad = tuple((int(i), int(j), float(c)) for i, j, c in quadratic if c != 0.0)
        self._check_ids([i for i, _, _ in quad] + [j for _, j, _ in quad])
        if quad:
            _check_psd(quad)
        self.objective = Objective(sense, expr, quad)

    def freeze(self) -> "Model":
        self._frozen = True
        return self

    # -- queries ----------------------------------------------------------

    @property
    def num_variables(self) -> int:
        return len(self.variables)

    def num_binaries(self) -> int:
        return sum(1 for v in self.variables if v.kind == BINARY)

    def num_complementarities(self) -> int:
        return len(self.complementarities)

    def binary_ids(self) -> list[int]:
        return [v.id for v in self.variables if v.kind == BINARY]

    def point_array(self, point) -> np.ndarray:
        """Dense value vector from a {var id: value} map covering every variable."""
        if isinstance(point, np.ndarray):
            if point.shape[0] != self.num_variables:
                raise ValueError("point has wrong length")
            return point.astype(float)
        arr = np.empty(self.num_variables)
        for var in self.variables:
            if var.id not in point:
                raise KeyError(f"point is missing variable {var.name}")
            arr[var.id] = point[var.id]
        return arr

    def max_violation(self, point) -> float:
        """Largest bound/row violation at a point (complementarity products excluded)."""
        arr = self.point_array(point)
        worst = 0.0
        for var in self.variables:
            worst = max(worst, var.lower - arr[var.id], arr[var.id] - var.upper)
        for con in self.constraints:
            worst = max(worst, con.violation(arr))
        return max(0.0, worst)

    def complementarity_violation(self, point) -> float:
        arr = self.point_array(point)
        worst = 0.0
        for pair in self.complementarities:
            worst = max(worst, abs(arr[pair.a] * arr[pair.b]))
        return worst

    def objective_value(self, point) -> float:
        return self.objective.value(self.point_array(point))

    def copy(self) -> "Model":
        other = Model()
        other.variables = [Variable(v.id, v.name, v.kind, v.lower, v.upper)
                           for v in self.variables]
        other.constraints = [Constraint(c.expr.copy(), c.sense, c.rhs, c.tag)
                             for c in self.constraints]
        other.complementarities = list(self.complementarities)
        other.objective = Objective(self.objective.sense, self.objective.linear.copy(),
                                    self.objective.quadratic)
        other.metadata = dict(self.metadata)
        return other


def _check_psd(quad) -> None:
    """Reject indefinite quadratic objectives (diagonal-plus-pairs forms)."""
    ids = sorted({i for i, _, _ in quad} | {j for _, j, _ in quad})
    pos = {vid: k for k, vid in enumerate(ids)}
    Q = np.zeros((len(ids), len(ids)))
    for i, j, c in quad:
        if i == j:
            Q[pos[i], pos[i]] += c
        else:
            Q[pos[i], pos[j]] += c / 2.0
            Q[pos[j], pos[i]] += c / 2.0
    lam = np.linalg.eigvalsh(Q)
    scale = max(1.0, float(np.abs(Q).max()))
    if lam.min() < -1e-8 * scale:
        raise ValueError("quadratic objective must be positive semidefinite")


def fix_binaries(model: Model, assignment) -> Model:
    """Copy of the model with the given binaries pinned to 0/1 via their bounds.

    Pinned variables become continuous; the original kind is recorded in
    ``metadata`` so exports and reports can recover it.
    """
    fixed = model.copy()
    for vid, val in assignment.items():
        if not 0 <= vid < fixed.num_variables:
            raise KeyError(f"unknown variable id {vid}")
        var = fixed.variables[vid]
        if var.kind != BINARY:
            raise ValueError(f"{var.name} is not binary")
        if val not in (0, 1):
            raise ValueError("binary assignment values must be 0 or 1")
        var.lower = var.upper = float(val)
        var.kind = CONTINUOUS
        fixed.metadata[f"fixed_binary:{var.name}"] = str(int(val))
    return fixed
