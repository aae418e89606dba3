import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qcqpen import QcqpProblem, QuadraticFunction, jacobian


def test_symmetrized_on_construction():
    q = QuadraticFunction([[1.0, 2.0], [0.0, 1.0]], [0.0, 0.0])
    assert np.array_equal(q.A, [[1.0, 1.0], [1.0, 1.0]])


def test_value_matches_expanded_form():
    q = QuadraticFunction([[1.0, 0.5], [0.5, 2.0]], [-0.5, 0.0], 0.5)
    x = np.array([1.0, -2.0])
    want = x @ q.A @ x + 2.0 * q.b @ x + q.c
    assert q.value(x) == pytest.approx(want, abs=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 6))
def test_gradient_matches_finite_differences(seed, n):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    q = QuadraticFunction(M, rng.normal(size=n), rng.normal())
    x = rng.normal(size=n)
    g = q.gradient(x)
    h = 1e-6
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        fd = (q.value(x + e) - q.value(x - e)) / (2.0 * h)
        assert g[i] == pytest.approx(fd, rel=1e-5, abs=1e-5)


def test_hessian_and_affine():
    q = QuadraticFunction.affine([1.0, -2.0], 3.0)
    assert q.is_affine()
    assert q.value([2.0, 1.0]) == pytest.approx(2.0 * (2.0 - 2.0) + 3.0)
    assert np.array_equal(q.hessian(), np.zeros((2, 2)))
    q2 = QuadraticFunction(np.eye(2) * 1e-12, [0.0, 0.0])
    assert not q2.is_affine()
    assert q2.is_affine(tol=1e-10)


def test_matrix_shape_validated():
    with pytest.raises(ValueError):
        QuadraticFunction(np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(ValueError):
        QuadraticFunction(np.zeros((3, 3)), np.zeros(2))


def _tiny_problem():
    obj = QuadraticFunction(np.eye(2), [0.0, 0.0], 0.0)
    ineq = QuadraticFunction(np.zeros((2, 2)), [0.5, 0.0], -1.0)   # x1 <= 1
    eq = QuadraticFunction(np.eye(2), [0.0, 0.0], -1.0)            # |x| = 1
    return QcqpProblem(n=2, objective=obj, inequalities=[ineq],
                       equalities=[eq], lb=[-2.0, -2.0], ub=[2.0, 2.0])


def test_constraint_ordering_and_counts():
    p = _tiny_problem()
    assert p.n_ineq == 1 and p.n_eq == 1
    assert p.constraints[0] is p.inequalities[0]
    assert p.constraints[1] is p.equalities[0]
    vals = p.eval_constraints([1.0, 0.0])
    assert vals == pytest.approx([0.0, 0.0])


def test_violation_semantics():
    p = _tiny_problem()
    assert p.violation([1.0, 0.0]) == 0.0
    # inequality excess counts positively, slack does not
    assert p.violation([2.0, 0.0]) == pytest.approx(3.0)   # eq |4-1| dominates
    assert p.violation([0.0, 1.0]) == 0.0
    # equality counted in absolute value
    assert p.violation([0.0, 0.0]) == pytest.approx(1.0)
    # box excess
    assert p.violation([0.0, 2.5]) == pytest.approx(max(0.5, abs(2.5 ** 2 - 1)))
    assert p.violation([-2.5, 0.0]) >= 0.5


def test_problem_validation():
    obj = QuadraticFunction(np.eye(2), [0.0, 0.0])
    with pytest.raises(ValueError):
        QcqpProblem(n=3, objective=obj)
    with pytest.raises(ValueError):
        QcqpProblem(n=2, objective=obj,
                    inequalities=[QuadraticFunction(np.eye(3), np.zeros(3))])
    with pytest.raises(ValueError):
        QcqpProblem(n=2, objective=obj, lb=[0.0, 0.0], ub=[-1.0, 1.0])
    with pytest.raises(ValueError):
        QcqpProblem(n=2, objective=obj, lb=[0.0])


def test_jacobian_rows_are_gradients():
    p = _tiny_problem()
    x = np.array([0.3, -0.7])
    J = jacobian(p, x)
    assert J.shape == (2, 2)
    for k, q in enumerate(p.constraints):
        assert J[k] == pytest.approx(q.gradient(x))
    empty = QcqpProblem(n=2, objective=p.objective)
    assert jacobian(empty, x).shape == (0, 2)
