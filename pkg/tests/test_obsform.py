import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ekflab.obsform import (
    CanonicalStructure, StructureError, System, box_samples, build_block_matrices,
    finite_difference_jacobian, make_canonical_system, validate_structure,
)
from ekflab.scenarios import krener_duarte, linear_observable, sine_chain


def test_block_matrices_single_chain():
    A, C = build_block_matrices([2])
    assert np.array_equal(A, [[0, 1], [0, 0]])
    assert np.array_equal(C, [[1, 0]])


def test_block_matrices_length_one():
    A, C = build_block_matrices([1])
    assert np.array_equal(A, [[0]])
    assert np.array_equal(C, [[1]])


def test_block_matrices_two_blocks():
    A, C = build_block_matrices([2, 3])
    expected = np.zeros((5, 5))
    for i, j in [(1, 2), (3, 4), (4, 5)]:
        expected[i - 1, j - 1] = 1
    assert np.array_equal(A, expected)
    Cexp = np.zeros((2, 5))
    Cexp[0, 0] = Cexp[1, 2] = 1
    assert np.array_equal(C, Cexp)


@pytest.mark.parametrize("bad", [[], [0], [2, -1]])
def test_block_matrices_rejects(bad):
    with pytest.raises(ValueError):
        build_block_matrices(bad)


def test_structure_requires_nondecreasing_blocks():
    with pytest.raises(ValueError):
        CanonicalStructure((3, 2), 1.0, 1.0, lambda x, u: np.zeros(5), lambda u: np.zeros(2))


def sine_fbar(x, u):
    return np.array([0.0, np.sin(x[0])])


def test_canonical_drift_values():
    s = make_canonical_system([2], sine_fbar, lambda u: np.zeros(1), 1.0, 1.0)
    u = s.zero_input()
    assert np.allclose(s.drift(np.zeros(2), u), [0, 0])
    assert np.allclose(s.drift(np.array([np.pi / 2, 1.0]), u), [1, 1])


def test_double_integrator_output_jacobian():
    s = make_canonical_system([2], lambda x, u: np.zeros(2), lambda u: np.zeros(1), 1e-12, 1e-12)
    rng = np.random.default_rng(3)
    for _ in range(5):
        x = rng.uniform(-5, 5, 2)
        assert np.allclose(s.output_jacobian(x, s.zero_input()), [[1, 0]])
        assert np.allclose(s.drift_jacobian(x, s.zero_input()), [[0, 1], [0, 0]])


def test_output_minus_hbar_is_linear():
    hbar = lambda u: np.array([0.25])
    s = make_canonical_system([2], sine_fbar, hbar, 1.0, 1.0)
    x = np.array([0.7, -1.3])
    assert np.array_equal(s.output(x, s.zero_input()) - hbar(None), [0.7])


shipped = [krener_duarte(), sine_chain(), linear_observable(1.0, 1.0), linear_observable(0.0, 0.0)]


@pytest.mark.parametrize("system", shipped, ids=lambda s: s.name)
@settings(max_examples=25, deadline=None)
@given(data=st.data())
def test_jacobians_match_central_differences(system, data):
    x = np.array(data.draw(st.lists(st.floats(-3, 3), min_size=system.state_dim,
                                    max_size=system.state_dim)))
    u = system.zero_input()
    for fun, jac in [(system.drift, system.drift_jacobian), (system.output, system.output_jacobian)]:
        fd = finite_difference_jacobian(fun, x, u, rel_step=1e-5)
        J = np.asarray(jac(x, u))
        assert np.allclose(J, fd, rtol=1e-5, atol=1e-5 * max(1.0, np.abs(J).max()))


def test_finite_difference_of_quadratic():
    J = finite_difference_jacobian(lambda x, u: np.array([x[0] ** 2 * x[1]]), np.array([2.0, 3.0]), np.zeros(0))
    assert np.allclose(J, [[12.0, 4.0]], rtol=1e-8)


def test_validate_sine_chain_random_square():
    rng = np.random.default_rng(0)
    s = sine_chain()
    pts = [(rng.uniform(-2, 2, 2), np.zeros(0)) for _ in range(100)]
    rep = validate_structure(s, pts)
    assert rep.passed
    assert rep.forbidden_partial_max < 1e-9
    assert rep.lipschitz_quotient <= 1.0


def test_validate_default_box():
    rep = validate_structure(sine_chain())
    assert rep.passed and rep.n_samples == 200


def test_violation_names_indices():
    bad = make_canonical_system([2], lambda x, u: np.array([x[1], 0.0]), lambda u: np.zeros(1), 1.0, 1.0)
    rep = validate_structure(bad, box_samples(bad, 20))
    assert not rep.passed
    assert rep.violations
    v = rep.violations[0]
    assert (v["i"], v["r"], v["j"], v["k"]) == (1, 1, 1, 2)
    assert "x" in v


def test_linear_has_zero_constants():
    s = make_canonical_system([2], lambda x, u: np.zeros(2), lambda u: np.zeros(1), 1e-12, 1e-12)
    rep = validate_structure(s)
    assert rep.passed
    assert rep.forbidden_partial_max == 0
    assert rep.lipschitz_quotient == 0
    assert rep.second_derivative_bound == 0


def test_understated_lipschitz_fails():
    s = make_canonical_system([2], lambda x, u: np.array([0.0, 3 * np.sin(x[0])]), lambda u: np.zeros(1), 1.0, 3.0)
    rep = validate_structure(s)
    assert not rep.passed
    assert rep.lipschitz_quotient > 1.0


@pytest.mark.parametrize("system", shipped[1:], ids=lambda s: s.name)
def test_shipped_quotients_within_declared(system):
    rep = validate_structure(system)
    assert rep.passed
    assert rep.lipschitz_quotient <= system.canonical.lipschitz_L


def test_validate_needs_canonical():
    with pytest.raises(StructureError):
        validate_structure(krener_duarte())


def test_system_fills_missing_jacobians():
    s = System(1, 0, 1, lambda x, u: np.sin(x), lambda x, u: x ** 3)
    assert np.allclose(s.drift_jacobian(np.array([0.0]), np.zeros(0)), [[1.0]])
    assert np.allclose(s.output_jacobian(np.array([2.0]), np.zeros(0)), [[12.0]], rtol=1e-8)
