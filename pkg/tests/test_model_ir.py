import numpy as np
import pytest

from surropt.model import BINARY, LinearExpr, Model, fix_binaries


def small_model():
    m = Model()
    x = m.add_variable("x", lower=0.0, upper=2.0)
    z = m.add_variable("z", kind=BINARY)
    m.add_constraint({x: 1.0, z: -1.5}, "<=", 0.5, tag="row")
    m.set_objective("min", {x: 1.0})
    return m, x, z


def test_variable_and_constraint_validation():
    m = Model()
    with pytest.raises(ValueError):
        m.add_variable("bad", lower=1.0, upper=0.0)
    with pytest.raises(ValueError):
        m.add_variable("badbin", kind=BINARY, lower=-1.0)
    x = m.add_variable("x")
    with pytest.raises(KeyError):
        m.add_constraint({x + 7: 1.0}, "<=", 0.0)
    with pytest.raises(ValueError):
        m.add_constraint({x: 1.0}, "<<", 0.0)
    with pytest.raises(ValueError):
        m.add_constraint({x: 1.0}, "<=", np.inf)


def test_linear_expr_drops_zeros():
    e = LinearExpr({0: 0.0, 1: 2.0}, 1.0)
    assert 0 not in e.terms
    e.add(1, -2.0)
    assert 1 not in e.terms
    assert e.value(np.array([5.0, 7.0])) == 1.0


def test_binary_bookkeeping():
    m, x, z = small_model()
    assert m.num_binaries() == 1
    assert m.binary_ids() == [z]
    m.add_complementarity_ok = None


def test_complementarity_requires_nonnegative_continuous():
    m = Model()
    y = m.add_variable("y", lower=0.0)
    s = m.add_variable("s", lower=0.0)
    bad = m.add_variable("bad", lower=-1.0)
    m.add_complementarity(y, s)
    assert m.num_complementarities() == 1
    with pytest.raises(ValueError):
        m.add_complementarity(y, bad)


def test_objective_psd_check():
    m = Model()
    a = m.add_variable("a")
    b = m.add_variable("b")
    m.set_objective("min", {}, quadratic=[(a, a, 1.0), (b, b, 1.0), (a, b, 1.0)])
    with pytest.raises(ValueError):
        m.set_objective("min", {}, quadratic=[(a, a, 1.0), (a, b, 4.0), (b, b, 1.0)])


def test_fix_binaries_semantics():
    m, x, z = small_model()
    fixed = fix_binaries(m, {z: 1})
    var = fixed.variables[z]
    assert var.lower == var.upper == 1.0
    assert var.kind == "continuous"
    assert fixed.metadata["fixed_binary:z"] == "1"
    # untouched original
    assert m.variables[z].kind == BINARY
    with pytest.raises(ValueError):
        fix_binaries(m, {x: 1})
    with pytest.raises(ValueError):
        fix_binaries(m, {z: 2})
    assert fix_binaries(m, {}).num_binaries() == 1  # empty assignment: same model


def test_fix_binaries_preserves_feasibility():
    m, x, z = small_model()
    point = {x: 1.9, z: 1.0}
    assert m.max_violation(point) <= 1e-12
    fixed = fix_binaries(m, {z: 1})
    assert fixed.max_violation(point) <= 1e-12


def test_point_array_requires_every_variable():
    m, x, z = small_model()
    with pytest.raises(KeyError):
        m.point_array({x: 1.0})


def test_freeze_blocks_mutation():
    m, x, z = small_model()
    m.freeze()
    with pytest.raises(RuntimeError):
        m.add_variable("late")


def test_objective_value_with_quadratic():
    m = Model()
    a = m.add_variable("a")
    m.set_objective("min", {a: -6.0}, quadratic=[(a, a, 1.0)])
    m.objective.linear.constant = 9.0
    assert m.objective_value({a: 1.0}) == pytest.approx(4.0)
