"""Builders for the three applications: engine design over a torque profile,
minimal adversarial perturbations of a classifier, and oil-well flow routing.

Each builder emits a plain Model plus handles; warmstart helpers construct
feasible incumbents from training data by evaluating the surrogate itself
(never the raw training outputs, since the model constrains the surrogate).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .encoders import (
    BigMBounds,
    EmbeddingHandles,
    convex_hull_constraints,
    encode_mip,
    encode_mpcc,
    interval_bounds,
)
from .model import BINARY, EQ, GE, LE, MAX, MIN, LinearExpr, Model
from .nn import Network, NeuronId, forward, forward_with_preactivations

MIP = "mip"
MPCC = "mpcc"

COMMODITIES = ("oil", "gas", "wat")


class NoFeasibleRowError(ValueError):
    """No training row covers the torque profile at the named time step."""

    def __init__(self, t: int):
        super().__init__(f"no training row reaches the required torque at step {t}")
        self.t = t


class NoQualifyingSeedError(ValueError):
    """No candidate seed satisfies the attack's margin constraint."""


@dataclass
class WarmstartSolution:
    point: dict  # var id -> value, complete
    objective: float
    provenance: str


def _embed(model, net, input_vars, formulation, bounds, prefix):
    if formulation == MIP:
        if bounds is None:
            raise ValueError("mip formulation needs big-M bounds")
        return encode_mip(model, net, input_vars, bounds, prefix=prefix)
    if formulation == MPCC:
        return encode_mpcc(model, net, input_vars, prefix=prefix)
    raise ValueError(f"unknown formulation {formulation!r}")


def _neuron_assignment(net, x, handles, point):
    """Write one embedding's exact forward-pass values into a point dict."""
    out, preacts = forward_with_preactivations(net, x)
    for li, lay in enumerate(net.hidden_layers):
        a = preacts[li]
        for i in range(lay.fan_out):
            y, s, z = handles.neuron_vars[NeuronId(li, i)]
            point[y] = max(0.0, float(a[i]))
            point[s] = max(0.0, float(-a[i]))
            if z is not None:
                point[z] = 1.0 if a[i] <= 0 else 0.0
    for k, o in enumerate(handles.output_vars):
        point[o] = float(out[k])
    return out


# ---------------------------------------------------------------------------
# engine design and control
# ---------------------------------------------------------------------------


@dataclass
class EngineSpec:
    """Surrogate inputs (fuel, rpm, compression); outputs (NO, CO, Torque)."""

    net: Network
    horizon: int
    torque_profile: np.ndarray
    fuel_bounds: tuple
    rpm_bounds: tuple
    compression_bounds: tuple
    co_weight: float = 1.0
    dt: float = 1.0
    hull_points: np.ndarray | None = None  # K x 3 training-input rows

    def __post_init__(self):
        if self.net.input_dim != 3 or self.net.output_dim != 3:
            raise ValueError("engine surrogate must map 3 inputs to 3 outputs")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        prof = np.asarray(self.torque_profile, dtype=float).reshape(-1)
        if prof.shape[0] != self.horizon or not np.isfinite(prof).all():
            raise ValueError("torque profile must list one finite value per step")
        self.torque_profile = prof
        for lo, hi in (self.fuel_bounds, self.rpm_bounds, self.compression_bounds):
            if not (lo <= hi and math.isfinite(lo) and math.isfinite(hi)):
                raise ValueError("control bounds must be ordered and finite")
        if self.hull_points is not None:
            self.hull_points = np.asarray(self.hull_points, dtype=float)

    def input_box(self):
        lo = [self.fuel_bounds[0], self.rpm_bounds[0], self.compression_bounds[0]]
        hi = [self.fuel_bounds[1], self.rpm_bounds[1], self.compression_bounds[1]]
        return np.array(lo), np.array(hi)


@dataclass
class EngineHandles:
    fuel: list
    rpm: list
    compression: int
    embeddings: list
    torque_rows: list
    hull_lambdas: list = field(default_factory=list)

    def outputs(self, t):
        no, co, torque = self.embeddings[t].output_vars
        return no, co, torque


def build_engine(spec: EngineSpec, formulation: str = MIP,
                 bounds: BigMBounds | None = None):
    """Emissions-minimizing engine model over the time horizon.

    One surrogate embedding per step; fuel and rpm vary per step while the
    compression variable is shared, which couples the steps.  Optional hull
    rows restrict each step's (fuel, rpm, compression) triple to the convex
    hull of the training inputs.
    """
    if formulation == MIP and bounds is None:
        bounds = interval_bounds(spec.net, spec.input_box())
    model = Model()
    comp = model.add_variable("c", lower=spec.compression_bounds[0],
                              upper=spec.compression_bounds[1])
    fuel, rpm, embeddings, torque_rows, hull_lams = [], [], [], [], []
    obj = LinearExpr()
    for t in range(spec.horizon):
        f_t = model.add_variable(f"f[{t}]", lower=spec.fuel_bounds[0],
                                 upper=spec.fuel_bounds[1])
        r_t = model.add_variable(f"r[{t}]", lower=spec.rpm_bounds[0],
                                 upper=spec.rpm_bounds[1])
        fuel.append(f_t)
        rpm.append(r_t)
        h = _embed(model, spec.net, [f_t, r_t, comp], formulation, bounds,
                   prefix=f"t{t}.")
        embeddings.append(h)
        no_v, co_v, tq_v = h.output_vars
        obj.add(no_v, spec.dt)
        obj.add(co_v, spec.co_weight * spec.dt)
        torque_rows.append(model.add_constraint(
            {tq_v: 1.0}, GE, float(spec.torque_profile[t]), tag=f"torque[{t}]"))
        if spec.hull_points is not None:
            hull_lams.append(convex_hull_constraints(
                model, [f_t, r_t, comp], spec.hull_points, prefix=f"t{t}.hull"))
    model.set_objective(MIN, obj)
    handles = EngineHandles(fuel, rpm, comp, embeddings, torque_rows, hull_lams)
    return model, handles


def warmstart_engine(spec: EngineSpec, model: Model, handles: EngineHandles,
                     training_inputs, fixed_c: float,
                     c_tol: float = 1e-9) -> WarmstartSolution:
    """Feasible incumbent from training rows sharing the fixed compression ratio.

    Per step, among the rows whose surrogate-evaluated torque covers the
    profile, pick the one with the lowest weighted emissions; every neuron
    variable is set to its exact forward-pass value.
    """
    rows = np.asarray(training_inputs, dtype=float)
    if rows.ndim != 2 or rows.shape[1] != 3:
        raise ValueError("training inputs must be K x 3 (fuel, rpm, compression)")
    subset = rows[np.abs(rows[:, 2] - fixed_c) <= c_tol]
    if subset.shape[0] == 0:
        raise NoFeasibleRowError(0)
    outs = np.array([forward(spec.net, row) for row in subset])  # (NO, CO, Torque)
    emissions = outs[:, 0] + spec.co_weight * outs[:, 1]
    point = {}
    total = 0.0
    chosen_rows = []
    for t in range(spec.horizon):
        ok = np.flatnonzero(outs[:, 2] >= spec.torque_profile[t])
        if ok.size == 0:
            raise NoFeasibleRowError(t)
        k = int(ok[np.argmin(emissions[ok])])
        chosen_rows.append(subset[k])
        x_t = np.array([subset[k, 0], subset[k, 1], fixed_c])
        point[handles.fuel[t]] = float(x_t[0])
        point[handles.rpm[t]] = float(x_t[1])
        _neuron_assignment(spec.net, x_t, handles.embeddings[t], point)
        total += (outs[k, 0] + spec.co_weight * outs[k, 1]) * spec.dt
    point[handles.compression] = float(fixed_c)
    for t, lams in enumerate(handles.hull_lambdas):
        target = np.array([chosen_rows[t][0], chosen_rows[t][1], fixed_c])
        match = np.flatnonzero(
            np.all(np.abs(spec.hull_points - target) <= 1e-12, axis=1))
        if match.size == 0:
            raise ValueError("warmstart row is not among the hull points")
        for k, lam in enumerate(lams):
            point[lam] = 1.0 if k == int(match[0]) else 0.0
    ws = WarmstartSolution(point, total,
                           f"training-data warmstart (compression {fixed_c})")
    viol = model.max_violation(point)
    if viol > 1e-6:
        raise ValueError(f"warmstart violates the model by {viol:.2e}")
    return ws


# ---------------------------------------------------------------------------
# adversarial attack generation
# ---------------------------------------------------------------------------


@dataclass
class AttackSpec:
    """Closest input classified as the target label with a fixed odds margin."""

    net: Network  # outputs are pre-softmax scores
    image: np.ndarray
    target_label: int
    alpha: float = 1.2
    norm: str = "l2"  # l1 | l2 | linf
    pixel_eps: float | None = None
    adjacency: list | None = None  # (i, j) index pairs
    adjacency_eps: float | None = None

    def __post_init__(self):
        img = np.asarray(self.image, dtype=float).reshape(-1)
        if img.shape[0] != self.net.input_dim:
            raise ValueError("image length must match the classifier input")
        if np.any(img < 0) or np.any(img > 1):
            raise ValueError("image entries must lie in [0, 1]")
        self.image = img
        if not 0 <= self.target_label < self.net.output_dim:
            raise ValueError("target label out of range")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.norm not in ("l1", "l2", "linf"):
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.adjacency is not None and self.adjacency_eps is None:
            raise ValueError("adjacency pairs need adjacency_eps")

    def margin(self) -> float:
        return math.log(self.alpha)

    def pixel_box(self):
        lo = np.zeros(self.image.shape[0])
        hi = np.ones(self.image.shape[0])
        if self.pixel_eps is not None:
            lo = np.maximum(lo, self.image - self.pixel_eps)
            hi = np.minimum(hi, self.image + self.pixel_eps)
        return lo, hi


@dataclass
class AttackHandles:
    pixels: list
    embedding: EmbeddingHandles
    margin_rows: list
    aux: list = field(default_factory=list)  # norm linearization variables


def build_attack(spec: AttackSpec, formulation: str = MIP,
                 bounds: BigMBounds | None = None):
    """Minimal-perturbation attack with the softmax odds constraint linearized.

    A post-softmax odds ratio of alpha between the target label and label i is
    exactly the linear row score_l >= score_i + log(alpha) on the pre-softmax
    scores, so the margin rows are exact, not approximate.
    """
    lo, hi = spec.pixel_box()
    if np.any(lo > hi):
        raise ValueError("pixel_eps leaves no feasible pixels")
    if formulation == MIP and bounds is None:
        bounds = interval_bounds(spec.net, (lo, hi))
    model = Model()
    zs = [model.add_variable(f"zpix[{j}]", lower=float(lo[j]), upper=float(hi[j]))
          for j in range(spec.image.shape[0])]
    h = _embed(model, spec.net, zs, formulation, bounds, prefix="")
    margin_rows = []
    l = spec.target_label
    for i in range(spec.net.output_dim):
        if i == l:
            continue
        margin_rows.append(model.add_constraint(
            {h.output_vars[l]: 1.0, h.output_vars[i]: -1.0}, GE, spec.margin(),
            tag=f"margin[{i}]"))
    if spec.adjacency:
        for (i, j) in spec.adjacency:
            gap = float(spec.image[j] - spec.image[i])
            model.add_constraint({zs[j]: 1.0, zs[i]: -1.0}, LE,
                                 gap + spec.adjacency_eps, tag=f"adj+[{i},{j}]")
            model.add_constraint({zs[j]: 1.0, zs[i]: -1.0}, GE,
                                 gap - spec.adjacency_eps, tag=f"adj-[{i},{j}]")
    aux = []
    x = spec.image
    if spec.norm == "l2":
        model.set_objective(
            MIN,
            LinearExpr({z: -2.0 * float(x[j]) for j, z in enumerate(zs)},
                       float(x @ x)),
            quadratic=[(z, z, 1.0) for z in zs],
        )
    elif spec.norm == "l1":
        for j, z in enumerate(zs):
            t = model.add_variable(f"tabs[{j}]", lower=0.0)
            model.add_constraint({t: 1.0, z: 1.0}, GE, float(x[j]), tag=f"abs+[{j}]")
            model.add_constraint({t: 1.0, z: -1.0}, GE, float(-x[j]), tag=f"abs-[{j}]")
            aux.append(t)
        model.set_objective(MIN, {t: 1.0 for t in aux})
    else:  # linf
        t = model.add_variable("tmax", lower=0.0)
        for j, z in enumerate(zs):
            model.add_constraint({t: 1.0, z: 1.0}, GE, float(x[j]), tag=f"abs+[{j}]")
            model.add_constraint({t: 1.0, z: -1.0}, GE, float(-x[j]), tag=f"abs-[{j}]")
        aux.append(t)
        model.set_objective(MIN, {t: 1.0})
    return model, AttackHandles(zs, h, margin_rows, aux)


def attack_norm_value(spec: AttackSpec, z) -> float:
    diff = np.abs(np.asarray(z, dtype=float) - spec.image)
    if spec.norm == "l2":
        return float(diff @ diff)
    if spec.norm == "l1":
        return float(diff.sum())
    return float(diff.max(initial=0.0))


def softmax(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    e = np.exp(s - s.max())
    return e / e.sum()


def feasible_point_attack(spec: AttackSpec, model: Model, handles: AttackHandles,
                          seeds) -> WarmstartSolution:
    """Warmstart from the first seed already classified as the target with margin."""
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    l = spec.target_label
    for seed in seeds:
        scores = forward(spec.net, seed)
        others = np.delete(scores, l)
        if others.size and scores[l] < others.max() + spec.margin():
            continue
        point = {}
        for j, z in enumerate(handles.pixels):
            point[z] = float(seed[j])
        _neuron_assignment(spec.net, seed, handles.embedding, point)
        diff = np.abs(seed - spec.image)
        if spec.norm == "l1":
            for j, t in enumerate(handles.aux):
                point[t] = float(diff[j])
        elif spec.norm == "linf":
            point[handles.aux[0]] = float(diff.max(initial=0.0))
        if model.max_violation(point) > 1e-6:
            continue
        return WarmstartSolution(point, attack_norm_value(spec, seed),
                                 "seed classified as the target label")
    raise NoQualifyingSeedError("no seed satisfies the margin constraint")


# ---------------------------------------------------------------------------
# oil-well flow network
# ---------------------------------------------------------------------------


@dataclass
class OilwellSpec:
    """Wells feed manifolds through switchable pipelines; risers reach separators.

    Well surrogates map pressure to oil rate (1 input); riser surrogates map
    (oil, gas, water, manifold pressure) to the separator pressure (4 inputs).
    Well pressures are fixed constants.
    """

    wells: list
    manifolds: list
    separators: list
    discrete_edges: list  # (well, manifold)
    riser_edges: list  # (manifold, separator)
    well_nets: dict
    riser_nets: dict  # keyed by (manifold, separator)
    gas_oil_ratio: dict
    water_oil_ratio: dict
    flow_bounds: dict  # (edge, commodity) -> (lo, hi), discrete edges
    pressure_bounds: dict  # node -> (lo, hi), manifolds and separators
    big_m: dict  # discrete edge -> M
    well_pressure: dict  # well -> fixed pressure

    def __post_init__(self):
        seen_m, seen_s = set(), set()
        for (mfd, sep) in self.riser_edges:
            if mfd in seen_m or sep in seen_s:
                raise ValueError("each riser must pair a manifold with a unique separator")
            seen_m.add(mfd)
            seen_s.add(sep)
        for w, net in self.well_nets.items():
            if net.input_dim != 1 or net.output_dim != 1:
                raise ValueError(f"well surrogate {w} must map 1 input to 1 output")
        for e, net in self.riser_nets.items():
            if net.input_dim != 4 or net.output_dim != 1:
                raise ValueError(f"riser surrogate {e} must map 4 inputs to 1 output")
        for (w, m) in self.discrete_edges:
            if w not in self.wells or m not in self.manifolds:
                raise ValueError(f"discrete edge ({w}, {m}) references unknown nodes")

    def total_hidden_neurons(self) -> int:
        return (sum(net.num_hidden_relu() for net in self.well_nets.values())
                + sum(net.num_hidden_relu() for net in self.riser_nets.values()))


@dataclass
class OilwellHandles:
    pressure: dict  # node -> var id
    flow: dict  # (edge, commodity) -> var id
    dp: dict  # edge -> var id
    routing: dict  # discrete edge -> binary var id
    well_embeddings: dict
    riser_embeddings: dict

    def routing_binaries(self) -> int:
        return len(self.routing)

    def total_hidden_neurons(self) -> int:
        return (sum(len(h.neuron_vars) for h in self.well_embeddings.values())
                + sum(len(h.neuron_vars) for h in self.riser_embeddings.values()))


def build_oilwell(spec: OilwellSpec, formulation: str = MIP):
    """Oil-throughput maximization over the well/manifold/separator network.

    Routing stays binary in both formulations (a mixed complementarity model);
    use ``fix_binaries`` or branch-and-bound over the routing to solve it.
    """
    model = Model()
    p = {}
    for w in spec.wells:
        v = float(spec.well_pressure[w])
        p[w] = model.add_variable(f"p[{w}]", lower=v, upper=v)
    for node in list(spec.manifolds) + list(spec.separators):
        lo, hi = spec.pressure_bounds[node]
        p[node] = model.add_variable(f"p[{node}]", lower=float(lo), upper=float(hi))

    q = {}
    for e in spec.discrete_edges:
        for cmd in COMMODITIES:
            lo, hi = spec.flow_bounds[(e, cmd)]
            q[(e, cmd)] = model.add_variable(
                f"q[{e[0]}->{e[1]}][{cmd}]", lower=min(0.0, float(lo)),
                upper=max(0.0, float(hi)))
    for e in spec.riser_edges:
        mfd = e[0]
        for cmd in COMMODITIES:
            inbound = [(d, cmd) for d in spec.discrete_edges if d[1] == mfd]
            lo = sum(min(0.0, spec.flow_bounds[k][0]) for k in inbound)
            hi = sum(max(0.0, spec.flow_bounds[k][1]) for k in inbound)
            q[(e, cmd)] = model.add_variable(
                f"q[{e[0]}->{e[1]}][{cmd}]", lower=lo, upper=hi)

    y = {e: model.add_variable(f"y[{e[0]}->{e[1]}]", kind=BINARY)
         for e in spec.discrete_edges}

    dp = {}
    for e in spec.riser_edges + spec.discrete_edges:
        i, j = e
        lo_i, hi_i = model.variables[p[i]].lower, model.variables[p[i]].upper
        lo_j, hi_j = model.variables[p[j]].lower, model.variables[p[j]].upper
        span_lo, span_hi = lo_i - hi_j, hi_i - lo_j
        if e in spec.big_m:
            span_lo -= spec.big_m[e]
            span_hi += spec.big_m[e]
        dp[e] = model.add_variable(f"dp[{e[0]}->{e[1]}]", lower=span_lo, upper=span_hi)

    # flow balance at manifolds
    for mfd in spec.manifolds:
        for cmd in COMMODITIES:
            terms = {}
            for e in spec.discrete_edges:
                if e[1] == mfd:
                    terms[q[(e, cmd)]] = 1.0
            for e in spec.riser_edges:
                if e[0] == mfd:
                    terms[q[(e, cmd)]] = terms.get(q[(e, cmd)], 0.0) - 1.0
            model.add_constraint(terms, EQ, 0.0, tag=f"balance[{mfd}][{cmd}]")

    # riser pressure surrogates and pressure-drop definitions
    riser_embeddings = {}
    for e in spec.riser_edges:
        mfd, sep = e
        inputs = [q[(e, "oil")], q[(e, "gas")], q[(e, "wat")], p[mfd]]
        net = spec.riser_nets[e]
        bounds = None
        if formulation == MIP:
            lo = np.array([model.variables[v].lower for v in inputs])
            hi = np.array([model.variables[v].upper for v in inputs])
            bounds = interval_bounds(net, (lo, hi))
        h = _embed(model, net, inputs, formulation, bounds, prefix=f"riser.{mfd}->{sep}.")
        riser_embeddings[e] = h
        model.add_constraint({p[sep]: 1.0, h.output_vars[0]: -1.0}, EQ, 0.0,
                             tag=f"riser_p[{mfd}->{sep}]")
        model.add_constraint({dp[e]: 1.0, p[mfd]: -1.0, p[sep]: 1.0}, EQ, 0.0,
                             tag=f"dp_def[{mfd}->{sep}]")

    # discrete-edge pressure coupling (big-M, off when routing is closed)
    for e in spec.discrete_edges:
        i, j = e
        M = float(spec.big_m[e])
        model.add_constraint({p[i]: 1.0, p[j]: -1.0, dp[e]: -1.0, y[e]: M}, LE, M,
                             tag=f"on1[{i}->{j}]")
        model.add_constraint({p[i]: 1.0, p[j]: -1.0, dp[e]: -1.0, y[e]: -M}, GE, -M,
                             tag=f"on2[{i}->{j}]")

    # routing and gated flow bounds
    for w in spec.wells:
        outs = [e for e in spec.discrete_edges if e[0] == w]
        model.add_constraint({y[e]: 1.0 for e in outs}, LE, 1.0, tag=f"route[{w}]")
    for e in spec.discrete_edges:
        for cmd in COMMODITIES:
            lo, hi = spec.flow_bounds[(e, cmd)]
            model.add_constraint({q[(e, cmd)]: 1.0, y[e]: -float(hi)}, LE, 0.0,
                                 tag=f"gate_hi[{e[0]}->{e[1]}][{cmd}]")
            model.add_constraint({q[(e, cmd)]: 1.0, y[e]: -float(lo)}, GE, 0.0,
                                 tag=f"gate_lo[{e[0]}->{e[1]}][{cmd}]")

    # well surrogates and commodity ratios
    well_embeddings = {}
    for w in spec.wells:
        net = spec.well_nets[w]
        bounds = None
        if formulation == MIP:
            v = float(spec.well_pressure[w])
            bounds = interval_bounds(net, (np.array([v]), np.array([v])))
        h = _embed(model, net, [p[w]], formulation, bounds, prefix=f"well.{w}.")
        well_embeddings[w] = h
        outs = [e for e in spec.discrete_edges if e[0] == w]
        terms = {q[(e, "oil")]: 1.0 for e in outs}
        terms[h.output_vars[0]] = -1.0
        model.add_constraint(terms, EQ, 0.0, tag=f"well_oil[{w}]")
        for cmd, ratio in (("gas", spec.gas_oil_ratio[w]),
                           ("wat", spec.water_oil_ratio[w])):
            terms = {q[(e, cmd)]: 1.0 for e in outs}
            for e in outs:
                terms[q[(e, "oil")]] = terms.get(q[(e, "oil")], 0.0) - float(ratio)
            model.add_constraint(terms, EQ, 0.0, tag=f"ratio_{cmd}[{w}]")

    model.set_objective(MAX, {q[(e, "oil")]: 1.0 for e in spec.riser_edges})
    handles = OilwellHandles(p, q, dp, y, well_embeddings, riser_embeddings)
    return model, handles
