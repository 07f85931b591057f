import numpy as np
import pytest
from hypothesis import given, strategies as st

from harmacs import matalg as ma
from harmacs._validation import ChartOutOfRangeError, DomainError, InvalidInputError

J2 = np.array([[0.0, 2.0], [-0.5, 0.0]])


def random_spd(rng, m, spread=3.0):
    Q, _ = np.linalg.qr(rng.standard_normal((m, m)))
    return (Q * rng.uniform(1.0, spread, m)) @ Q.T


def random_tangent(rng, J, g=None):
    return ma.tangent_projection(rng.standard_normal(J.shape), J, g) / 4.0


def test_standard_acs_action():
    J0 = ma.standard_acs(2)
    e = np.eye(4)
    assert np.array_equal(J0 @ e[0], e[2])
    assert np.array_equal(J0 @ e[2], -e[0])
    assert ma.is_acs(J0)
    assert ma.is_g_compatible(J0)


def test_is_acs_examples():
    assert not ma.is_acs(np.eye(2))
    assert ma.is_acs(J2)
    with pytest.raises(InvalidInputError):
        ma.is_acs(np.array([[np.nan, 0], [0, 1.0]]))
    with pytest.raises(InvalidInputError):
        ma.is_acs(np.eye(3))


def test_is_g_compatible_examples():
    J0 = ma.standard_acs(2)
    assert ma.is_g_compatible(J0, 2 * np.eye(4))
    assert not ma.is_g_compatible(J2)
    with pytest.raises(InvalidInputError):
        ma.is_g_compatible(J0, np.eye(2))


def test_g_transpose_examples():
    rng = np.random.default_rng(0)
    N = rng.standard_normal((4, 4))
    assert np.allclose(ma.g_transpose(N), N.T)
    S = N + N.T
    assert np.allclose(ma.g_transpose(S), S)
    g = np.diag([1.0, 4.0])
    J = ma.standard_acs(1)
    expect = g @ J.T @ np.linalg.inv(g)
    assert np.allclose(ma.g_transpose(J, g), expect)
    # adjoint with respect to the inverse metric on basis vectors
    gi = np.linalg.inv(g)
    Nt = ma.g_transpose(J, g)
    for x in np.eye(2):
        for y in np.eye(2):
            assert np.isclose((J @ x) @ gi @ y, x @ gi @ (Nt @ y))


def test_spd_sqrt_examples():
    assert np.allclose(ma.spd_sqrt(np.eye(3)), np.eye(3))
    assert np.allclose(ma.spd_sqrt(25 / 16 * np.eye(2)), 1.25 * np.eye(2))
    assert np.allclose(ma.spd_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))
    with pytest.raises(DomainError):
        ma.spd_sqrt(np.diag([1.0, -1.0]))
    with pytest.raises(DomainError):
        ma.spd_sqrt(np.array([[1.0, 0.5], [0.0, 1.0]]))


@given(st.integers(0, 10 ** 6), st.integers(2, 6))
def test_spd_sqrt_roundtrip(seed, m):
    rng = np.random.default_rng(seed)
    Q = random_spd(rng, m)
    assert np.allclose(ma.spd_sqrt(Q @ Q), Q, rtol=1e-9, atol=1e-9 * np.abs(Q).max())
    P = Q @ Q
    R = ma.spd_sqrt(P)
    assert np.abs(R @ R - P).max() <= 1e-10 * np.abs(P).max()
    # commutes with polynomials of P
    C = P @ P - 3 * P
    assert np.abs(R @ C - C @ R).max() <= 1e-9 * np.abs(C).max()


def test_projection_hand_example():
    out = ma.compatible_projection(J2)
    assert np.allclose(out, [[0, 1], [-1, 0]], atol=1e-15)


def test_projection_fixes_compatible():
    J0 = ma.standard_acs(3)
    assert np.abs(ma.compatible_projection(J0) - J0).max() <= 1e-12


def test_projection_rejects_non_acs():
    with pytest.raises(DomainError):
        ma.compatible_projection(np.eye(2))


@given(st.integers(0, 10 ** 6), st.integers(1, 3))
def test_projection_postconditions(seed, n):
    rng = np.random.default_rng(seed)
    N = ma.random_acs(n, seed)
    for g in (None, random_spd(rng, 2 * n)):
        met = None if g is None else ma.MetricAtPoint.from_g(g)
        J = ma.compatible_projection(N, met)
        assert ma.acs_residual(J) <= 1e-10
        assert ma.compatibility_residual(J, met) <= 1e-10
        assert np.abs(ma.compatible_projection(J, met) - J).max() <= 1e-10
        if met is not None:
            other = ma.MetricAtPoint.from_g(g, factor="symmetric")
            assert np.abs(ma.compatible_projection(N, other) - J).max() <= 1e-10


@given(st.integers(0, 10 ** 6))
def test_projection_orthogonal_equivariance(seed):
    rng = np.random.default_rng(seed)
    N = ma.random_acs(2, seed)
    R, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    lhs = ma.compatible_projection(R @ N @ R.T)
    rhs = R @ ma.compatible_projection(N) @ R.T
    assert np.abs(lhs - rhs).max() <= 1e-10


def test_projection_batched_matches_loop():
    N = np.stack([ma.random_acs(2, s) for s in range(10)])
    batch = ma.compatible_projection(N)
    for k in range(10):
        assert np.allclose(batch[k], ma.compatible_projection(N[k]), atol=1e-14)


def test_reproject_agrees_on_acs_inputs():
    N = np.stack([ma.random_acs(2, s) for s in range(20)])
    assert np.abs(ma.reproject(N) - ma.compatible_projection(N)).max() <= 1e-12


def test_cayley_chart_examples():
    J0 = ma.standard_acs(2)
    assert np.abs(ma.cayley_chart(J0, J0)).max() == 0
    with pytest.raises(ChartOutOfRangeError):
        ma.cayley_chart(-J0, J0)
    assert np.array_equal(ma.cayley_chart_inv(np.zeros((4, 4)), J0), J0)


@given(st.integers(0, 10 ** 6))
def test_cayley_roundtrip(seed):
    rng = np.random.default_rng(seed)
    J0 = ma.compatible_projection(ma.random_acs(2, seed))
    S = random_tangent(rng, J0)
    S *= 0.5 / np.linalg.norm(S, 2)
    J = ma.cayley_chart_inv(S, J0)
    assert ma.acs_residual(J) <= 1e-10
    assert np.abs(J + J.T).max() <= 1e-10
    S2 = ma.cayley_chart(J, J0)
    assert np.abs(S2 @ J0 + J0 @ S2).max() <= 1e-10
    assert np.abs(S2 - S).max() <= 1e-10
    assert np.abs(ma.cayley_chart_inv(S2, J0) - J).max() <= 1e-10


def test_cayley_inverse_continuity():
    rng = np.random.default_rng(3)
    J0 = ma.standard_acs(2)
    S = random_tangent(rng, J0)
    d = [np.abs(ma.cayley_chart_inv(t * S, J0) - J0).max() for t in (1e-2, 1e-4, 1e-6)]
    assert d[0] > d[1] > d[2] and d[2] < 1e-5


def test_cayley_inverse_rejects_non_anticommuting():
    with pytest.raises(DomainError):
        ma.cayley_chart_inv(0.1 * np.eye(4), ma.standard_acs(2))


@given(st.integers(0, 10 ** 6), st.integers(1, 3))
def test_tangent_projection_lands_in_tangent_space(seed, n):
    rng = np.random.default_rng(seed)
    g = random_spd(rng, 2 * n)
    met = ma.MetricAtPoint.from_g(g)
    J = ma.compatible_projection(ma.random_acs(n, seed), met)
    S = ma.tangent_projection(rng.standard_normal((2 * n, 2 * n)), J, met)
    assert np.abs(J @ S + S @ J).max() <= 1e-10 * max(1, np.abs(S).max())
    assert np.abs(ma.g_transpose(S, met) + S).max() <= 1e-10 * max(1, np.abs(S).max())


def test_tangent_projection_examples():
    rng = np.random.default_rng(5)
    J = ma.compatible_projection(ma.random_acs(2, 5))
    S = ma.tangent_projection(J, J)
    assert np.abs(S @ J + J @ S).max() <= 1e-12
    assert np.abs(ma.tangent_projection(np.zeros((4, 4)), J)).max() == 0
    T = random_tangent(rng, J)
    assert np.abs(ma.tangent_projection(T, J) - 4 * T).max() <= 1e-12
    A, B = rng.standard_normal((2, 4, 4))
    lin = ma.tangent_projection(2 * A - B, J) - (2 * ma.tangent_projection(A, J) - ma.tangent_projection(B, J))
    assert np.abs(lin).max() <= 1e-12


@given(st.integers(0, 10 ** 6), st.integers(1, 3))
def test_homotopy_path(seed, n):
    rng = np.random.default_rng(seed)
    N = ma.random_acs(n, seed)
    g = ma.MetricAtPoint.from_g(random_spd(rng, 2 * n))
    assert np.abs(ma.homotopy_path(N, g, 0.0) - N).max() <= 1e-10 * max(1, np.abs(N).max())
    assert np.abs(ma.homotopy_path(N, g, 1.0) - ma.compatible_projection(N, g)).max() <= 1e-10
    worst = max(ma.acs_residual(ma.homotopy_path(N, g, t)) for t in np.linspace(0, 1, 11))
    assert worst <= 1e-10


def test_homotopy_rejects_bad_t():
    with pytest.raises(InvalidInputError):
        ma.homotopy_path(ma.standard_acs(1), None, 1.5)


def test_random_acs_properties():
    a = ma.random_acs(2, 7, 10)
    assert np.array_equal(a, ma.random_acs(2, 7, 10))
    assert ma.acs_residual(a) <= 1e-10
    rot = ma.random_acs(1, 3, 1.0)
    # orthogonal conjugation keeps it skew: a rotation of the standard structure
    assert np.abs(rot + rot.T).max() <= 1e-12
    assert np.allclose(np.abs(rot), np.abs(ma.standard_acs(1)))
    with pytest.raises(InvalidInputError):
        ma.random_acs(2, 0, 0.5)


def test_metric_at_point_invariants():
    rng = np.random.default_rng(1)
    g = random_spd(rng, 4)
    for factor in ("cholesky", "symmetric"):
        met = ma.MetricAtPoint.from_g(g, factor)
        assert np.abs(met.g @ met.g_inv - np.eye(4)).max() <= 1e-12
        assert np.abs(met.G @ met.G.T - met.g).max() <= 1e-12
        assert np.array_equal(met.g, met.g.T)
