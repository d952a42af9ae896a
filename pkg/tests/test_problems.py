import numpy as np
import pytest

from surropt.model import fix_binaries
from surropt.nn import Layer, Network, forward, random_network
from surropt.problems import (
    AttackSpec,
    EngineSpec,
    NoFeasibleRowError,
    NoQualifyingSeedError,
    OilwellSpec,
    attack_norm_value,
    build_attack,
    build_engine,
    build_oilwell,
    feasible_point_attack,
    softmax,
    warmstart_engine,
)
from surropt.solvers.branch_bound import milp_solve
from surropt.solvers.pattern import pattern_enumerate_solve
from surropt.solvers.result import Status

from conftest import LIN


def engine_identity_spec(T=3, profile=None):
    """Torque = fuel, NO = CO = 0: solvable by inspection."""
    net = Network((Layer([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
                         [0.0, 0.0, 0.0], LIN),))
    return EngineSpec(
        net=net, horizon=T,
        torque_profile=np.full(T, 0.5) if profile is None else profile,
        fuel_bounds=(0.0, 2.0), rpm_bounds=(0.0, 1.0),
        compression_bounds=(0.5, 1.5),
    )


def engine_relu_spec(rng, T=4, hidden=2, hull=None):
    net = random_network(rng, [3, hidden, 3])
    return EngineSpec(
        net=net, horizon=T,
        torque_profile=np.full(T, -0.4),
        fuel_bounds=(0.0, 1.0), rpm_bounds=(0.0, 1.0),
        compression_bounds=(0.2, 0.8), co_weight=0.5, dt=2.0,
        hull_points=hull,
    )


def test_engine_binary_count_16_neurons(rng):
    net = random_network(rng, [3, 16, 3])
    spec = EngineSpec(net=net, horizon=3, torque_profile=np.full(3, -10.0),
                      fuel_bounds=(0.0, 1.0), rpm_bounds=(0.0, 1.0),
                      compression_bounds=(0.0, 1.0))
    model, handles = build_engine(spec, "mip")
    assert model.num_binaries() == 16 * 3
    model2, _ = build_engine(spec, "mpcc")
    assert model2.num_binaries() == 0
    assert model2.num_complementarities() == 16 * 3


def test_engine_identity_surrogate_optimum_zero():
    spec = engine_identity_spec()
    model, handles = build_engine(spec, "mip")
    res = milp_solve(model)
    assert res.status is Status.OPTIMAL
    assert res.objective == pytest.approx(0.0, abs=1e-9)
    for t in range(spec.horizon):
        _, _, tq = handles.outputs(t)
        assert res.point[tq] >= spec.torque_profile[t] - 1e-9


def test_engine_infeasible_profile():
    spec = engine_identity_spec(profile=np.full(3, 5.0))  # torque <= fuel <= 2
    model, _ = build_engine(spec, "mip")
    assert milp_solve(model).status is Status.INFEASIBLE


def test_engine_hull_single_point(rng):
    hull = np.array([[0.5, 0.5, 0.5]])
    spec = engine_relu_spec(rng, T=2, hull=hull)
    model, handles = build_engine(spec, "mip")
    res = milp_solve(model)
    if res.status is Status.OPTIMAL:
        for t in range(2):
            assert res.point[handles.fuel[t]] == pytest.approx(0.5, abs=1e-7)
            assert res.point[handles.rpm[t]] == pytest.approx(0.5, abs=1e-7)
        assert res.point[handles.compression] == pytest.approx(0.5, abs=1e-7)


def test_engine_warmstart_feasible_and_above_oracle(rng):
    rows = rng.uniform(0.0, 1.0, size=(12, 3))
    rows[:, 2] = 0.5  # shared compression ratio
    net = random_network(rng, [3, 2, 3])
    torques = np.array([forward(net, r)[2] for r in rows])
    spec = EngineSpec(
        net=net, horizon=4,
        torque_profile=np.full(4, torques.max() - 1e-6),
        fuel_bounds=(0.0, 1.0), rpm_bounds=(0.0, 1.0),
        compression_bounds=(0.2, 0.8), co_weight=0.5, dt=2.0,
    )
    model, handles = build_engine(spec, "mpcc")
    ws = warmstart_engine(spec, model, handles, rows, 0.5)
    assert model.max_violation(ws.point) <= 1e-6
    oracle = pattern_enumerate_solve(model, handles.embeddings)
    assert ws.objective >= oracle.objective - 1e-9
    assert ws.objective == pytest.approx(model.objective_value(ws.point), abs=1e-9)


def test_engine_warmstart_errors_name_first_step(rng):
    spec = engine_identity_spec(T=3, profile=np.array([0.1, 5.0, 0.2]))
    model, handles = build_engine(spec, "mip")
    rows = np.array([[0.5, 0.5, 1.0], [1.5, 0.2, 1.0]])  # torque = fuel <= 1.5
    with pytest.raises(NoFeasibleRowError) as err:
        warmstart_engine(spec, model, handles, rows, 1.0)
    assert err.value.t == 1


def boosted_net(net, label, boost):
    """Copy of the classifier with the label's output bias shifted."""
    out = net.layers[-1]
    bias = out.bias.copy()
    bias[label] += boost
    return Network(net.layers[:-1] + (Layer(out.weights, bias, LIN),))


def attack_pair(rng, norm="linf"):
    net = random_network(rng, [2, 3, 2])
    image = np.array([0.8, 0.2])
    scores = forward(net, image)
    target = int(np.argmin(scores))  # force a real perturbation
    spec = AttackSpec(net=net, image=image, target_label=target, alpha=1.2,
                      norm=norm)
    return spec


def test_attack_margin_rhs_is_log_alpha(rng):
    spec = attack_pair(rng)
    model, handles = build_attack(spec, "mip")
    rhs = [model.constraints[r].rhs for r in handles.margin_rows]
    assert rhs == pytest.approx([np.log(1.2)] * len(rhs))
    assert np.log(1.2) == pytest.approx(0.1823215567939546)


def test_attack_already_classified_target_gives_zero(rng):
    base = random_network(rng, [2, 3, 2])
    image = np.array([0.6, 0.4])
    scores = forward(base, image)
    label = int(np.argmax(scores))
    gap = scores[label] - np.delete(scores, label).max()
    net = boosted_net(base, label, np.log(1.2) - gap + 0.05)
    spec = AttackSpec(net=net, image=image, target_label=label, alpha=1.2, norm="linf")
    model, handles = build_attack(spec, "mip")
    res = milp_solve(model)
    assert res.objective == pytest.approx(0.0, abs=1e-7)


def test_attack_linf_milp_matches_oracle(rng):
    spec = attack_pair(rng, norm="linf")
    model, handles = build_attack(spec, "mip")
    res = milp_solve(model)
    oracle = pattern_enumerate_solve(model, [handles.embedding])
    if res.status is Status.INFEASIBLE:
        assert oracle.status is Status.INFEASIBLE
    else:
        assert res.objective == pytest.approx(oracle.objective, abs=1e-6)


def test_attack_solutions_respect_softmax_ratio(rng):
    # guarantee feasibility: boost the target's score at a reachable witness
    base = random_network(rng, [2, 3, 2])
    image = np.array([0.8, 0.2])
    target = int(np.argmin(forward(base, image)))
    witness = np.array([0.1, 0.9])
    ws = forward(base, witness)
    gap = ws[target] - np.delete(ws, target).max()
    net = boosted_net(base, target, np.log(1.2) - gap + 0.1)
    spec = AttackSpec(net=net, image=image, target_label=target, alpha=1.2, norm="l2")
    model, handles = build_attack(spec, "mip")
    res = milp_solve(model)
    assert res.status is Status.OPTIMAL
    z = np.array([res.point[v] for v in handles.pixels])
    sm = softmax(forward(spec.net, z))
    l = spec.target_label
    for i in range(spec.net.output_dim):
        if i != l:
            assert sm[l] / sm[i] >= spec.alpha - 1e-9


def test_attack_pixel_eps_narrows_bounds(rng):
    spec = attack_pair(rng)
    spec.pixel_eps = 0.1
    model, handles = build_attack(spec, "mpcc")
    for j, z in enumerate(handles.pixels):
        var = model.variables[z]
        assert var.lower >= spec.image[j] - 0.1 - 1e-12
        assert var.upper <= spec.image[j] + 0.1 + 1e-12


def test_attack_adjacency_rows(rng):
    net = random_network(rng, [3, 2, 2])
    spec = AttackSpec(net=net, image=np.array([0.5, 0.5, 0.5]), target_label=0,
                      adjacency=[(0, 1), (1, 2)], adjacency_eps=0.05, norm="l1")
    model, _ = build_attack(spec, "mpcc")
    tags = {c.tag for c in model.constraints}
    assert "adj+[0,1]" in tags and "adj-[1,2]" in tags


def test_feasible_point_attack_seed_selection(rng):
    # build a classifier whose margin holds at a known seed but not at the image
    base = random_network(rng, [2, 3, 2])
    seed = np.array([0.15, 0.9])
    scores = forward(base, seed)
    target = int(np.argmax(scores))
    gap = scores[target] - np.delete(scores, target).max()
    net = boosted_net(base, target, np.log(1.2) - gap + 0.01)
    image = np.array([0.8, 0.2])
    img_scores = forward(net, image)
    others = np.delete(img_scores, target)
    if img_scores[target] >= others.max() + np.log(1.2):
        # flip: the image also qualifies; perturb image runs are still valid,
        # but the negative second half of this test needs a failing seed
        image = seed  # degenerate but keeps the qualifying-path assertions
    spec = AttackSpec(net=net, image=image, target_label=target, alpha=1.2, norm="l2")
    model, handles = build_attack(spec, "mpcc")
    bad = np.array([0.8, 0.2]) if not np.array_equal(image, seed) else None
    seeds = [bad, seed] if bad is not None else [seed]
    ws = feasible_point_attack(spec, model, handles, seeds)
    assert model.max_violation(ws.point) <= 1e-6
    assert ws.objective == pytest.approx(attack_norm_value(spec, seed))
    if bad is not None:
        with pytest.raises(NoQualifyingSeedError):
            feasible_point_attack(spec, model, handles, [bad])


def linear_1in_1out(coef, bias):
    return Network((Layer([[coef]], [bias], LIN),))


def linear_4in_1out(coefs, bias):
    return Network((Layer([list(coefs)], [bias], LIN),))


def toy_oilwell(a1=2.0, a2=3.0):
    """Two wells with constant oil rates, one manifold, one separator."""
    wells = ["w1", "w2"]
    edges = [("w1", "m1"), ("w2", "m1")]
    riser = [("m1", "s1")]
    flow_bounds = {}
    for e in edges:
        for cmd in ("oil", "gas", "wat"):
            flow_bounds[(e, cmd)] = (0.0, 6.0)
    return OilwellSpec(
        wells=wells, manifolds=["m1"], separators=["s1"],
        discrete_edges=edges, riser_edges=riser,
        well_nets={"w1": linear_1in_1out(0.0, a1), "w2": linear_1in_1out(0.0, a2)},
        riser_nets={("m1", "s1"): linear_4in_1out([-1.0, 0.0, 0.0, 1.0], 0.0)},
        gas_oil_ratio={"w1": 0.0, "w2": 0.0},
        water_oil_ratio={"w1": 0.0, "w2": 0.0},
        flow_bounds=flow_bounds,
        pressure_bounds={"m1": (0.0, 10.0), "s1": (0.0, 5.0)},
        big_m={e: 50.0 for e in edges},
        well_pressure={"w1": 8.0, "w2": 9.0},
    )


def test_oilwell_toy_hand_optimum():
    # both wells must route; riser carries a1 + a2 = 5 units of oil
    spec = toy_oilwell()
    model, handles = build_oilwell(spec, "mip")
    res = milp_solve(model)
    assert res.status is Status.OPTIMAL
    assert res.objective == pytest.approx(5.0, abs=1e-6)
    # the big-M rows bind where routing is open
    for e, yv in handles.routing.items():
        if res.point[yv] > 0.5:
            gap = (res.point[handles.pressure[e[0]]]
                   - res.point[handles.pressure[e[1]]]
                   - res.point[handles.dp[e]])
            assert abs(gap) <= 1e-6


def test_oilwell_all_closed_forces_zero_flow():
    spec = toy_oilwell(a1=0.0, a2=0.0)  # wells produce nothing: closing is feasible
    model, handles = build_oilwell(spec, "mip")
    fixed = fix_binaries(model, {yv: 0 for yv in handles.routing.values()})
    res = milp_solve(fixed)
    assert res.status is Status.OPTIMAL
    for (e, cmd), qv in handles.flow.items():
        if e in spec.discrete_edges:
            assert abs(res.point[qv]) <= 1e-9


def test_oilwell_ratio_rows(rng):
    spec = toy_oilwell()
    spec.gas_oil_ratio = {"w1": 0.5, "w2": 0.25}
    model, handles = build_oilwell(spec, "mip")
    res = milp_solve(model)
    assert res.status is Status.OPTIMAL
    for w, ratio in spec.gas_oil_ratio.items():
        outs = [e for e in spec.discrete_edges if e[0] == w]
        oil = sum(res.point[handles.flow[(e, "oil")]] for e in outs)
        gas = sum(res.point[handles.flow[(e, "gas")]] for e in outs)
        assert gas == pytest.approx(ratio * oil, abs=1e-6)


def test_oilwell_paper_scale_structure(rng):
    """8 wells / 2 manifolds / 2 separators with the wide layer sizes: the
    embeddings hold 520 hidden neurons and 16 routing binaries."""
    wells = [f"w{i}" for i in range(1, 9)]
    manifolds = ["m1", "m2"]
    separators = ["s1", "s2"]
    edges = [(w, m) for w in wells for m in manifolds]
    risers = [("m1", "s1"), ("m2", "s2")]
    well_nets = {w: random_network(rng, [1, 20, 20, 1]) for w in wells}
    riser_nets = {e: random_network(rng, [4, 50, 50, 1]) for e in risers}
    flow_bounds = {(e, cmd): (0.0, 5.0) for e in edges
                   for cmd in ("oil", "gas", "wat")}
    spec = OilwellSpec(
        wells=wells, manifolds=manifolds, separators=separators,
        discrete_edges=edges, riser_edges=risers,
        well_nets=well_nets, riser_nets=riser_nets,
        gas_oil_ratio={w: 0.1 for w in wells},
        water_oil_ratio={w: 0.1 for w in wells},
        flow_bounds=flow_bounds,
        pressure_bounds={n: (0.0, 10.0) for n in manifolds + separators},
        big_m={e: 100.0 for e in edges},
        well_pressure={w: 5.0 for w in wells},
    )
    assert spec.total_hidden_neurons() == 520
    model, handles = build_oilwell(spec, "mip")
    assert handles.total_hidden_neurons() == 520
    assert handles.routing_binaries() == 16
    assert model.num_binaries() == 520 + 16
    model2, handles2 = build_oilwell(spec, "mpcc")
    assert model2.num_binaries() == 16  # routing stays binary in the mixed form
    assert model2.num_complementarities() == 520


def test_oilwell_riser_uniqueness_enforced():
    spec = toy_oilwell()
    with pytest.raises(ValueError):
        OilwellSpec(
            wells=spec.wells, manifolds=["m1"], separators=["s1", "s2"],
            discrete_edges=spec.discrete_edges,
            riser_edges=[("m1", "s1"), ("m1", "s2")],
            well_nets=spec.well_nets,
            riser_nets={("m1", "s1"): spec.riser_nets[("m1", "s1")],
                        ("m1", "s2"): spec.riser_nets[("m1", "s1")]},
            gas_oil_ratio=spec.gas_oil_ratio,
            water_oil_ratio=spec.water_oil_ratio,
            flow_bounds=spec.flow_bounds,
            pressure_bounds={"m1": (0.0, 10.0), "s1": (0.0, 5.0), "s2": (0.0, 5.0)},
            big_m=spec.big_m, well_pressure=spec.well_pressure,
        )
