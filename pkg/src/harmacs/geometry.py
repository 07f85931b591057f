"""Conformally flat metric fields on chart domains of R^m.

Every metric here has the form ``g = exp(u) * id``; the Euclidean metric is
``u = 0`` and the round sphere in stereographic coordinates is
``u = log 4 - 2 log(1 + |x|^2)``.  Index layout for third-order arrays is
``dg[..., i, j, k] = d_i g_{jk}`` and ``gamma[..., k, i, j] = Gamma^k_{ij}``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from ._validation import InvalidInputError
from .matalg import MetricAtPoint

LOG4 = np.log(4.0)


def _points(x, m):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != m:
        raise InvalidInputError(f"points must have last axis {m}, got {x.shape}")
    return x


class MetricField:
    """A conformal metric ``exp(u) delta`` with analytic derivatives of ``u``.

    Parameters
    ----------
    kind : {"euclidean", "sphere_stereographic", "conformal"}
    dim : int
    u, du, d2u : callables
        Map points ``(..., m)`` to ``u`` ``(...)``, its gradient ``(..., m)``
        and Hessian ``(..., m, m)``.
    """

    def __init__(self, kind, dim, u, du, d2u, truncation=None, name=None):
        if dim < 2 or dim % 2:
            raise InvalidInputError(f"metric dimension must be even and >= 2, got {dim}")
        self.kind = kind
        self.dim = dim
        self._u = u
        self._du = du
        self._d2u = d2u
        self.truncation = truncation
        self.name = name or kind

    def __repr__(self):
        return f"MetricField(kind={self.kind!r}, dim={self.dim}, name={self.name!r})"

    @property
    def is_flat(self):
        return self.kind == "euclidean"

    def conformal_exponent(self, x):
        return self._u(_points(x, self.dim))

    def grad_exponent(self, x):
        return self._du(_points(x, self.dim))

    def hess_exponent(self, x):
        return self._d2u(_points(x, self.dim))

    def scale(self, x):
        """Conformal factor ``exp(u)``."""
        return np.exp(self.conformal_exponent(x))

    def sqrt_det(self, x):
        return np.exp(0.5 * self.dim * self.conformal_exponent(x))

    def g(self, x):
        return self.scale(x)[..., None, None] * np.eye(self.dim)

    def g_inv(self, x):
        return np.exp(-self.conformal_exponent(x))[..., None, None] * np.eye(self.dim)

    def at(self, x):
        """MetricAtPoint (batched over leading axes of ``x``)."""
        u = self.conformal_exponent(x)
        eye = np.eye(self.dim)
        return MetricAtPoint(
            g=np.exp(u)[..., None, None] * eye,
            g_inv=np.exp(-u)[..., None, None] * eye,
            G=np.exp(0.5 * u)[..., None, None] * eye,
        )

    def dg(self, x):
        """``d_i g_{jk} = u_i exp(u) delta_{jk}``."""
        x = _points(x, self.dim)
        du = self._du(x)
        eu = np.exp(self._u(x))
        return (eu[..., None] * du)[..., :, None, None] * np.eye(self.dim)

    def christoffel(self, x):
        """Closed form ``Gamma^k_{ij} = (delta_ik u_j + delta_jk u_i - delta_ij u_k) / 2``."""
        du = self.grad_exponent(x)
        eye = np.eye(self.dim)
        return 0.5 * (
            np.einsum("ki,...j->...kij", eye, du)
            + np.einsum("kj,...i->...kij", eye, du)
            - np.einsum("ij,...k->...kij", eye, du)
        )

    def christoffel_deriv(self, x):
        """``d_a Gamma^k_{ij}`` laid out as ``[..., a, k, i, j]``."""
        H = self.hess_exponent(x)
        eye = np.eye(self.dim)
        return 0.5 * (
            np.einsum("ki,...ja->...akij", eye, H)
            + np.einsum("kj,...ia->...akij", eye, H)
            - np.einsum("ij,...ka->...akij", eye, H)
        )


def euclidean(m):
    if m < 2 or m % 2:
        raise InvalidInputError(f"m must be even and >= 2, got {m}")

    def u(x):
        return np.zeros(x.shape[:-1])

    def du(x):
        return np.zeros(x.shape)

    def d2u(x):
        return np.zeros(x.shape + (m,))

    return MetricField("euclidean", m, u, du, d2u, name=f"euclidean:{m}")


def _sphere_u(x):
    return LOG4 - 2.0 * np.log1p(np.sum(x * x, axis=-1))


def _sphere_du(x):
    return -4.0 * x / (1.0 + np.sum(x * x, axis=-1))[..., None]


def _sphere_d2u(x):
    q = 1.0 + np.sum(x * x, axis=-1)
    m = x.shape[-1]
    return (
        -4.0 * np.eye(m) / q[..., None, None]
        + 8.0 * x[..., :, None] * x[..., None, :] / (q * q)[..., None, None]
    )


def sphere_stereographic(n, truncation=50.0):
    """Round metric ``4 / (1 + |x|^2)^2 ds^2`` on R^{2n}."""
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    return MetricField(
        "sphere_stereographic", 2 * n, _sphere_u, _sphere_du, _sphere_d2u,
        truncation=truncation, name=f"sphere:{n}",
    )


def _gaussian_bump(amplitude=0.5, width=1.0):
    a, w2 = amplitude, width * width

    def u(x):
        return a * np.exp(-np.sum(x * x, axis=-1) / w2)

    def du(x):
        return (-2.0 / w2) * u(x)[..., None] * x

    def d2u(x):
        m = x.shape[-1]
        e = u(x)[..., None, None]
        return e * ((4.0 / (w2 * w2)) * x[..., :, None] * x[..., None, :] - (2.0 / w2) * np.eye(m))

    return u, du, d2u


BUILTIN_EXPONENTS = {
    "sphere": lambda: (_sphere_u, _sphere_du, _sphere_d2u),
    "bump": _gaussian_bump,
}


def conformal(u, m, du=None, d2u=None, fd_step=1e-4):
    """Metric ``exp(u) delta`` on R^m.

    ``u`` is either the name of a built-in exponent (``"sphere"``, ``"bump"``)
    or a callable on points ``(..., m)``.  Missing derivatives of a callable
    are obtained by central differences with step ``fd_step``.
    """
    if m < 2 or m % 2:
        raise InvalidInputError(f"m must be even and >= 2, got {m}")
    name = "conformal"
    if isinstance(u, str):
        if u not in BUILTIN_EXPONENTS:
            raise InvalidInputError(
                f"unknown exponent {u!r}; choose from {sorted(BUILTIN_EXPONENTS)}"
            )
        name = f"conformal:{u}"
        u, du, d2u = BUILTIN_EXPONENTS[u]()
    if du is None:
        du = _fd_gradient(u, m, fd_step)
    if d2u is None:
        d2u = _fd_gradient(du, m, fd_step, vector=True)
    return MetricField("conformal", m, u, du, d2u, name=name)


def _fd_gradient(f, m, step, vector=False):
    eye = np.eye(m)

    def grad(x):
        cols = [(f(x + step * eye[a]) - f(x - step * eye[a])) / (2 * step) for a in range(m)]
        return np.stack(cols, axis=-1)

    return grad


def conformal_from_samples(grid, u_values):
    """Conformal metric from exponent samples on a grid.

    Derivatives are second-order differences of the samples; all three are
    then interpolated multilinearly between grid points.
    """
    from .field import axis_derivative  # local: field depends on geometry

    u_values = np.asarray(u_values, dtype=float)
    if u_values.shape != grid.extents:
        raise InvalidInputError("sample array does not match grid extents")
    m = grid.m
    periodic = grid.periodic
    du = np.stack([axis_derivative(u_values, a, grid.h, periodic) for a in range(m)], axis=-1)
    d2u = np.stack(
        [np.stack([axis_derivative(du[..., b], a, grid.h, periodic) for b in range(m)], axis=-1)
         for a in range(m)], axis=-2)
    d2u = 0.5 * (d2u + np.swapaxes(d2u, -1, -2))
    axes = grid.axes()

    def make(values):
        interp = RegularGridInterpolator(axes, values, bounds_error=False, fill_value=None)

        def f(x):
            x = np.asarray(x, dtype=float)
            if periodic:
                lo = np.array([a[0] for a in axes])
                x = lo + np.mod(x - lo, grid.period)
            return interp(x.reshape(-1, m)).reshape(x.shape[:-1] + values.shape[m:])

        return f

    return MetricField("conformal", m, make(u_values), make(du), make(d2u), name="conformal:samples")


def christoffel(g_field, x):
    """Levi-Civita symbols from the metric and its first derivatives.

    ``Gamma^k_{ij} = g^{kl} (d_i g_{jl} + d_j g_{il} - d_l g_{ij}) / 2``, using
    the analytic ``dg`` of the field.
    """
    x = _points(x, g_field.dim)
    dg = g_field.dg(x)
    g_inv = g_field.g_inv(x)
    lower = dg + np.swapaxes(dg, -3, -2) - np.moveaxis(dg, -3, -1)
    # lower[..., i, j, l] = d_i g_jl + d_j g_il - d_l g_ij
    return 0.5 * np.einsum("...kl,...ijl->...kij", g_inv, lower)


def christoffel_fd(g_field, x, step):
    """Levi-Civita symbols with ``dg`` replaced by central differences of ``g``."""
    x = _points(x, g_field.dim)
    m = g_field.dim
    eye = np.eye(m)
    dg = np.stack(
        [(g_field.g(x + step * eye[a]) - g_field.g(x - step * eye[a])) / (2 * step)
         for a in range(m)], axis=-3)
    lower = dg + np.swapaxes(dg, -3, -2) - np.moveaxis(dg, -3, -1)
    return 0.5 * np.einsum("...kl,...ijl->...kij", g_field.g_inv(x), lower)


@dataclass(frozen=True)
class ClosenessReport:
    delta_metric: float
    delta_dg: float
    delta_d2g: float
    requested_delta: float
    satisfied: bool

    @property
    def delta(self):
        """Smallest delta satisfying all three bounds."""
        return max(self.delta_metric, self.delta_dg, self.delta_d2g)


def closeness_check(g_field, points, delta, center=None, fd_step=1e-4):
    """Sample the near-Euclidean bounds on ``points``.

    The metric is first normalised by its value at ``center`` (default the
    origin), i.e. ``gt(x) = g(x) / exp(u(center))``, then the bounds
    ``(1 - d|y|^2) <= gt <= (1 + d|y|^2)``, ``|d gt| <= d|y|`` and
    ``|d^2 gt| + |d^3 gt| <= d`` are inverted for the smallest ``d``, with
    ``y = x - center``.  Third derivatives are central differences of the
    analytic second derivatives.
    """
    if not delta > 0:
        raise InvalidInputError("delta must be positive")
    m = g_field.dim
    pts = _points(points, m).reshape(-1, m)
    c = np.zeros(m) if center is None else np.asarray(center, dtype=float)
    y = pts - c
    r2 = np.sum(y * y, axis=-1)
    u0 = g_field.conformal_exponent(c)
    w = np.exp(g_field.conformal_exponent(pts) - u0)
    du = g_field.grad_exponent(pts)
    H = g_field.hess_exponent(pts)
    nz = r2 > 0
    dev = np.abs(w - 1.0)
    if np.any(~nz & (dev > 0)):
        d_metric = np.inf
    else:
        d_metric = float(np.max(dev[nz] / r2[nz], initial=0.0))
    # |d gt| with gt = w * id: sqrt(m) * w * |du|
    sq = np.sqrt(m)
    dg_norm = sq * w * np.linalg.norm(du, axis=-1)
    d_dg = float(np.max(dg_norm[nz] / np.sqrt(r2[nz]), initial=0.0))
    if np.any(~nz & (dg_norm > 0)):
        d_dg = np.inf

    def d2(x):
        wx = np.exp(g_field.conformal_exponent(x) - u0)
        return wx[..., None, None] * (g_field.hess_exponent(x) + g_field.grad_exponent(x)[..., :, None]
                                      * g_field.grad_exponent(x)[..., None, :])

    d2g = w[:, None, None] * (H + du[:, :, None] * du[:, None, :])
    d2_norm = sq * np.linalg.norm(d2g, axis=(-2, -1))
    eye = np.eye(m)
    d3 = np.stack([(d2(pts + fd_step * eye[a]) - d2(pts - fd_step * eye[a])) / (2 * fd_step)
                   for a in range(m)], axis=-3)
    d3_norm = sq * np.sqrt(np.sum(d3 * d3, axis=(-3, -2, -1)))
    d_d2g = float(np.max(d2_norm + d3_norm, initial=0.0))
    report = ClosenessReport(d_metric, d_dg, d_d2g, float(delta), False)
    return ClosenessReport(d_metric, d_dg, d_d2g, float(delta), bool(report.delta <= delta))


def parse_metric_spec(spec):
    """Parse ``euclidean:<m>``, ``sphere:<n>[:R=<trunc>]`` or ``conformal:<path>``."""
    parts = spec.split(":")
    kind = parts[0]
    try:
        if kind == "euclidean" and len(parts) == 2:
            return euclidean(int(parts[1]))
        if kind == "sphere" and len(parts) in (2, 3):
            trunc = 50.0
            if len(parts) == 3:
                key, _, val = parts[2].partition("=")
                if key != "R":
                    raise ValueError(parts[2])
                trunc = float(val)
            return sphere_stereographic(int(parts[1]), truncation=trunc)
        if kind == "conformal" and len(parts) >= 2:
            from .io import read_field

            path = ":".join(parts[1:])
            fld = read_field(path)
            # stored as the metric matrix exp(u) id at each point
            u = np.log(fld.values[..., 0, 0])
            return conformal_from_samples(fld.grid, u)
    except (ValueError, OSError) as exc:
        raise InvalidInputError(f"bad metric spec {spec!r}: {exc}") from exc
    raise InvalidInputError(
        f"bad metric spec {spec!r}; expected euclidean:<m>, sphere:<n>[:R=<r>] or conformal:<file>"
    )
