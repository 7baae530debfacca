import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fockstream.errors import CapabilityError, DimensionError
from fockstream.numerics import (
    dag,
    expm,
    iterated_integrals,
    quadrature_nodes,
    simplex_integrate,
    trapezoid_weights,
)


def test_expm_of_zero_is_identity():
    assert np.array_equal(expm(np.zeros((3, 3))), np.eye(3))


def test_expm_diagonal_phases():
    out = expm(np.diag([1j * np.pi, -1j * np.pi]))
    assert np.allclose(out, -np.eye(2), atol=1e-14)


def test_expm_rejects_non_square():
    with pytest.raises(DimensionError):
        expm(np.zeros((2, 3)))


def test_expm_scale_argument():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    assert np.allclose(expm(A, 0.5), expm(0.5 * A), atol=1e-15)


matrices = st.integers(min_value=0, max_value=2**32 - 1).map(lambda s: np.random.default_rng(s))


@settings(max_examples=40, deadline=None)
@given(matrices, st.integers(min_value=1, max_value=5))
def test_expm_inverse_pair(rng, d):
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    A *= 5.0 / max(np.linalg.norm(A, 2), 1e-12) * rng.random()
    assert np.max(np.abs(expm(A) @ expm(-A) - np.eye(d))) < 1e-10


@settings(max_examples=40, deadline=None)
@given(matrices, st.integers(min_value=1, max_value=5))
def test_expm_of_anti_hermitian_is_unitary(rng, d):
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    U = expm(A - dag(A))
    assert np.max(np.abs(dag(U) @ U - np.eye(d))) < 1e-10


def test_dag_twice_is_identity():
    A = np.arange(6).reshape(2, 3) * (1 + 2j)
    assert np.array_equal(dag(dag(A)), A)


def test_simplex_volume():
    val = simplex_integrate(lambda a, b: np.ones_like(a), 2, 1.0, 400)
    assert abs(val - 0.5) < 1e-6


def test_simplex_first_moment():
    val = simplex_integrate(lambda a: a, 1, 2.0, 400)
    assert abs(val - 2.0) < 1e-6


def test_simplex_against_cumulative_sum():
    t, n = 1.0, 400
    val = simplex_integrate(lambda a, b: np.exp(-(a + b)), 2, t, n)
    # independent oracle: inner integral in closed form, outer by fine cumulative trapezoid
    u = np.linspace(0, t, 200001)
    inner = np.exp(-u) * (1 - np.exp(-u))
    ref = np.trapezoid(inner, u)
    assert abs(val - ref) < 1e-5


def test_simplex_convergence_order():
    f = lambda a, b: np.cos(a) * np.exp(b)  # noqa: E731
    exact = simplex_integrate(f, 2, 1.0, 1600)
    e1 = abs(simplex_integrate(f, 2, 1.0, 50) - exact)
    e2 = abs(simplex_integrate(f, 2, 1.0, 100) - exact)
    assert np.log2(e1 / e2) >= 1.9


def test_simplex_order_limit():
    with pytest.raises(CapabilityError):
        simplex_integrate(lambda *a: np.ones_like(a[0]), 5, 1.0, 10)


def test_simplex_matrix_valued():
    val = simplex_integrate(lambda a: np.einsum("i,jk->ijk", a, np.eye(2)), 1, 1.0, 100)
    assert np.allclose(val, 0.5 * np.eye(2))


def test_iterated_integrals_commuting_case():
    # W = const scalar c: m-th ordered integral over [0, T] is (cT)^m / m!, up to O(h^2)
    n, T, c = 201, 1.3, 0.7
    W = np.full((n, 1, 1), c, dtype=complex)
    lengths = np.full(n - 1, T / (n - 1))
    F = iterated_integrals(W, lengths, 3)
    for m in range(4):
        assert abs(F[m, -1, 0, 0] - (c * T) ** m / np.prod(range(1, m + 1))) < 1e-5


def test_quadrature_nodes_duplicate_breakpoints():
    times, evals, lengths = quadrature_nodes(0.0, 2.0, 20, breakpoints=(1.0,))
    assert np.count_nonzero(times == 1.0) == 2
    assert np.count_nonzero(lengths == 0) == 1
    i = np.nonzero(times == 1.0)[0]
    assert evals[i[0]] < 1.0 < evals[i[1]]
    assert abs(trapezoid_weights(lengths).sum() - 2.0) < 1e-14
