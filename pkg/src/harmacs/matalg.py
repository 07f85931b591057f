"""Pointwise linear algebra for almost complex structures.

All functions accept a single ``(m, m)`` matrix or a stack ``(..., m, m)``
and broadcast over the leading axes.  Matrices follow the convention
``N[k, j] = N_j^k`` (row is the upper index).
"""

from dataclasses import dataclass

import numpy as np

from ._validation import (
    ChartOutOfRangeError,
    DomainError,
    InternalError,
    InvalidInputError,
    check_matrix_stack,
    check_same_dim,
)

ACS_INPUT_TOL = 1e-8
CHART_COND_MAX = 1e12


def _mT(a):
    return np.swapaxes(a, -1, -2)


def _eye_like(a):
    return np.broadcast_to(np.eye(a.shape[-1]), a.shape)


def _maxabs(a):
    return np.max(np.abs(a), axis=(-2, -1))


def standard_acs(n):
    """The standard structure with ``J0 e_i = e_{n+i}`` and ``J0 e_{n+i} = -e_i``."""
    if n < 1:
        raise InvalidInputError(f"n must be >= 1, got {n}")
    J0 = np.zeros((2 * n, 2 * n))
    for i in range(n):
        J0[n + i, i] = 1.0
        J0[i, n + i] = -1.0
    return J0


@dataclass(frozen=True)
class MetricAtPoint:
    """A metric tensor together with its inverse and a factor ``g = G G^T``.

    Arrays may carry leading batch axes.
    """

    g: np.ndarray
    g_inv: np.ndarray
    G: np.ndarray

    @classmethod
    def from_g(cls, g, factor="cholesky"):
        g = check_matrix_stack(g, "metric")
        if not np.array_equal(g, _mT(g)):
            # stored metrics must be exactly symmetric
            if _maxabs(g - _mT(g)).max() > 1e-12 * max(1.0, np.abs(g).max()):
                raise InvalidInputError("metric is not symmetric")
            g = 0.5 * (g + _mT(g))
        if factor == "cholesky":
            try:
                G = np.linalg.cholesky(g)
            except np.linalg.LinAlgError as exc:
                raise InvalidInputError("metric is not positive definite") from exc
        elif factor == "symmetric":
            G = spd_sqrt(g)
        else:
            raise InvalidInputError(f"unknown factor kind {factor!r}")
        return cls(g=g, g_inv=np.linalg.inv(g), G=G)

    @classmethod
    def euclidean(cls, m):
        eye = np.eye(m)
        return cls(g=eye, g_inv=eye.copy(), G=eye.copy())

    @property
    def dim(self):
        return self.g.shape[-1]


def _as_metric(g, m):
    if g is None:
        return MetricAtPoint.euclidean(m)
    if isinstance(g, MetricAtPoint):
        if g.dim != m:
            raise InvalidInputError(f"metric dimension {g.dim} does not match {m}")
        return g
    return MetricAtPoint.from_g(g)


def acs_residual(N):
    """``max |N N + id|`` per matrix."""
    N = np.asarray(N, dtype=float)
    return _maxabs(N @ N + _eye_like(N))


def g_transpose(N, g=None):
    """The g-transpose ``g N^T g^{-1}``."""
    N = check_matrix_stack(N)
    met = _as_metric(g, N.shape[-1])
    return met.g @ _mT(N) @ met.g_inv


def compatibility_residual(N, g=None):
    """``max |g N^T g^{-1} + N|`` per matrix (zero iff N is g-skew)."""
    N = np.asarray(N, dtype=float)
    met = _as_metric(g, N.shape[-1])
    return _maxabs(met.g @ _mT(N) @ met.g_inv + N)


def is_acs(N, tol=ACS_INPUT_TOL):
    if not tol > 0:
        raise InvalidInputError("tol must be positive")
    N = check_matrix_stack(N)
    return acs_residual(N) <= tol


def is_g_compatible(N, g=None, tol=ACS_INPUT_TOL):
    if not tol > 0:
        raise InvalidInputError("tol must be positive")
    N = check_matrix_stack(N)
    met = _as_metric(g, N.shape[-1])
    check_same_dim(N, met.g, "matrix and metric")
    return compatibility_residual(N, met) <= tol


def spd_sqrt(P):
    """Symmetric positive definite square root via the eigendecomposition.

    Being a spectral function of ``P``, the result commutes with everything
    that commutes with ``P``.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim < 2 or P.shape[-1] != P.shape[-2] or not np.all(np.isfinite(P)):
        raise DomainError("spd_sqrt needs finite square matrices")
    scale = np.maximum(_maxabs(P), 1.0)
    if np.any(_maxabs(P - _mT(P)) > 1e-12 * scale):
        raise DomainError("matrix is not symmetric")
    w, V = np.linalg.eigh(0.5 * (P + _mT(P)))
    if np.any(w <= 0):
        raise DomainError("matrix is not positive definite")
    Q = (V * np.sqrt(w)[..., None, :]) @ _mT(V)
    return 0.5 * (Q + _mT(Q))


def _frame(N, met):
    Ginv = np.linalg.inv(met.G)
    return Ginv @ N @ met.G, Ginv


def _skew_polar(M):
    # Q^{-1} A with Q = sqrt(-A^2): the orthogonal polar factor of the skew part.
    A = 0.5 * (M - _mT(M))
    try:
        Q = spd_sqrt(_mT(A) @ A)
    except DomainError as exc:
        raise InternalError("skew part is singular; cannot project") from exc
    K = np.linalg.solve(Q, A)
    return 0.5 * (K - _mT(K))


def compatible_projection(N, g=None, tol=ACS_INPUT_TOL):
    """Canonical g-compatible structure built from an almost complex structure.

    In the frame ``M = G^{-1} N G`` write ``M = S + A`` (symmetric plus skew).
    With ``Q`` the SPD root of ``id + S^2`` the result is ``G Q^{-1} A G^{-1}``.
    On inputs with ``N^2 = -id`` one has ``id + S^2 = -A^2``; the latter form
    is evaluated so that the output squares to ``-id`` to rounding even when
    the input is only accurate to ``tol``.
    """
    N = check_matrix_stack(N)
    met = _as_metric(g, N.shape[-1])
    bad = acs_residual(N) > tol
    if np.any(bad):
        where = tuple(int(i) for i in np.argwhere(np.atleast_1d(bad))[0]) if N.ndim > 2 else ()
        raise DomainError(f"input is not an almost complex structure at index {where}")
    M, Ginv = _frame(N, met)
    return met.G @ _skew_polar(M) @ Ginv


def reproject(M, g=None):
    """Project an arbitrary matrix near the constraint set back onto it.

    Same construction as :func:`compatible_projection` without requiring
    ``M^2 = -id``; used after explicit updates and interpolation.
    """
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise DomainError("non-finite entries")
    met = _as_metric(g, M.shape[-1])
    F, Ginv = _frame(M, met)
    try:
        return met.G @ _skew_polar(F) @ Ginv
    except InternalError as exc:
        raise DomainError(str(exc)) from exc


def _check_chart_pair(J, J0):
    J = check_matrix_stack(J, "J")
    J0 = check_matrix_stack(J0, "J0")
    check_same_dim(J, J0)
    return J, J0


def cayley_chart(J, J0):
    """Chart coordinate ``S = (J + J0)^{-1} (J - J0)``; anticommutes with J0."""
    J, J0 = _check_chart_pair(J, J0)
    if np.any(acs_residual(J) > ACS_INPUT_TOL) or np.any(acs_residual(J0) > ACS_INPUT_TOL):
        raise DomainError("chart arguments must square to -id")
    B = J + J0
    if np.any(~(np.linalg.cond(B) <= CHART_COND_MAX)):
        raise ChartOutOfRangeError("J + J0 is singular; J is outside the chart at J0")
    return np.linalg.solve(B, J - J0)


def cayley_chart_inv(S, J0):
    """Inverse chart ``J0 (id + S)(id - S)^{-1}``."""
    S, J0 = _check_chart_pair(S, J0)
    eye = _eye_like(S)
    B = eye - S
    if np.any(~(np.linalg.cond(B) <= CHART_COND_MAX)):
        raise ChartOutOfRangeError("id - S is singular")
    if np.any(_maxabs(S @ J0 + J0 @ S) > ACS_INPUT_TOL * np.maximum(1.0, _maxabs(S))):
        raise DomainError("S must anticommute with J0")
    # id + S and id - S commute
    return J0 @ np.linalg.solve(B, eye + S)


def tangent_projection(T, J, g=None):
    """Map an arbitrary endomorphism into the tangent space at ``J``.

    ``A = T + J T J`` anticommutes with J; subtracting its g-transpose makes it
    g-skew as well.  Tangent inputs are sent to ``4 T``.
    """
    T = check_matrix_stack(T, "T")
    J = check_matrix_stack(J, "J")
    check_same_dim(T, J)
    met = _as_metric(g, J.shape[-1])
    if np.any(compatibility_residual(J, met) > ACS_INPUT_TOL):
        raise DomainError("J is not compatible with the metric")
    A = T + J @ T @ J
    return A - met.g @ _mT(A) @ met.g_inv


def homotopy_path(J, g=None, t=0.0):
    """Point ``J(t)`` on the canonical path from ``J`` (t=0) to its projection (t=1).

    Worked in the orthonormal frame of ``g``: with ``Jbar = Q^{-1} A`` and
    ``N(t) = (1 - t) J + t Jbar`` one has ``N^2 = -P^2`` for
    ``P^2 = id + 2t(1-t)(Q - id)``, so ``P^{-1} N`` squares to ``-id``.
    """
    if not 0.0 <= t <= 1.0:
        raise InvalidInputError(f"t must lie in [0, 1], got {t}")
    J = check_matrix_stack(J, "J")
    met = _as_metric(g, J.shape[-1])
    if np.any(acs_residual(J) > ACS_INPUT_TOL):
        raise DomainError("J is not an almost complex structure")
    M, Ginv = _frame(J, met)
    eye = _eye_like(M)
    S = 0.5 * (M + _mT(M))
    A = 0.5 * (M - _mT(M))
    Q = spd_sqrt(eye + S @ S)
    Jbar = np.linalg.solve(Q, A)
    N = (1.0 - t) * M + t * Jbar
    P = spd_sqrt(eye + 2.0 * t * (1.0 - t) * (Q - eye))
    return met.G @ np.linalg.solve(P, N) @ Ginv


def random_acs(n, seed, cond_bound=10.0):
    """Seeded ``M J0 M^{-1}`` with ``cond(M) <= cond_bound``.

    ``M = U diag(s) V^T`` with Haar-random orthogonal U, V and singular values
    in ``[1, cond_bound]``, so the bound holds by construction.
    """
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    if not cond_bound >= 1:
        raise InvalidInputError("cond_bound must be >= 1")
    rng = np.random.default_rng(seed)
    m = 2 * n
    U = _haar_orthogonal(rng, m)
    V = _haar_orthogonal(rng, m)
    s = np.exp(rng.uniform(0.0, np.log(cond_bound), size=m))
    M = (U * s) @ V.T
    N = M @ standard_acs(n) @ np.linalg.inv(M)
    return N


def _haar_orthogonal(rng, m):
    Z = rng.standard_normal((m, m))
    Q, R = np.linalg.qr(Z)
    return Q * np.sign(np.diag(R))
