"""Matrix fields on uniform Cartesian grids and their differential operators.

A field stores one ``(m, m)`` matrix per grid point in an array of shape
``grid.extents + (m, m)``.  Spatial derivatives are second-order central
differences (one-sided second order at dirichlet edges); the Laplacian uses
the compact three-point second difference.  Metric contractions assume a
conformal metric ``exp(u) delta``, which covers every :class:`MetricField`.

Large grids are processed in slabs along axis 0 with a halo, so the
reductions never hold more than a few slab-sized temporaries.
"""

from dataclasses import dataclass, field as dc_field
from math import prod

import numpy as np
from scipy import ndimage

from ._validation import DegenerateScaleError, InvalidInputError
from .geometry import euclidean
from .matalg import acs_residual, reproject

BOUNDARIES = ("periodic", "dirichlet")
BLOCK_POINTS = 1 << 17


@dataclass(frozen=True)
class Grid:
    """Uniform grid; point ``idx`` sits at ``origin + idx * h``."""

    m: int
    extents: tuple
    h: float
    origin: tuple = None
    boundary: str = "periodic"

    def __post_init__(self):
        ext = tuple(int(e) for e in self.extents)
        object.__setattr__(self, "extents", ext)
        if self.m < 1 or len(ext) != self.m:
            raise InvalidInputError(f"need {self.m} extents, got {ext}")
        if min(ext) < 4:
            raise InvalidInputError("each extent must be >= 4")
        if not self.h > 0:
            raise InvalidInputError("h must be positive")
        origin = (0.0,) * self.m if self.origin is None else tuple(float(o) for o in self.origin)
        if len(origin) != self.m:
            raise InvalidInputError("origin has wrong length")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "h", float(self.h))
        if self.boundary not in BOUNDARIES:
            raise InvalidInputError(f"boundary must be one of {BOUNDARIES}")

    @classmethod
    def cube(cls, m, half_width, h, center=None, boundary="dirichlet"):
        """Cell-centred grid covering ``center + [-half_width, half_width]^m``."""
        n = int(round(2 * half_width / h))
        c = np.zeros(m) if center is None else np.asarray(center, dtype=float)
        return cls(m, (n,) * m, h, tuple(c - half_width + 0.5 * h), boundary)

    @classmethod
    def torus(cls, m, n, h, boundary="periodic"):
        return cls(m, (n,) * m, h, None, boundary)

    @property
    def periodic(self):
        return self.boundary == "periodic"

    @property
    def n_points(self):
        return prod(self.extents)

    @property
    def period(self):
        return np.array(self.extents) * self.h

    @property
    def cell_volume(self):
        return self.h ** self.m

    def axes(self):
        return [o + self.h * np.arange(n) for o, n in zip(self.origin, self.extents)]

    def points(self, axis0_index=None):
        axes = self.axes()
        if axis0_index is not None:
            axes[0] = axes[0][np.asarray(axis0_index) % self.extents[0]] if self.periodic \
                else axes[0][np.asarray(axis0_index)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def lower(self):
        return np.array(self.origin)

    def upper(self):
        return np.array(self.origin) + self.h * (np.array(self.extents) - 1)

    def interior_mask(self):
        mask = np.ones(self.extents, dtype=bool)
        if not self.periodic:
            for a in range(self.m):
                sl = [slice(None)] * self.m
                sl[a] = 0
                mask[tuple(sl)] = False
                sl[a] = -1
                mask[tuple(sl)] = False
        return mask

    def displacement(self, x, p):
        """``x - p`` with the minimal-image convention on periodic grids."""
        d = np.asarray(x, dtype=float) - np.asarray(p, dtype=float)
        if self.periodic:
            L = self.period
            d = d - L * np.round(d / L)
        return d

    def header_fields(self):
        return self.m, self.extents, self.h, self.origin, self.boundary


@dataclass
class AcsField:
    """Grid-indexed matrices.  Constraints are not enforced on construction."""

    grid: Grid
    values: np.ndarray
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        shape = self.grid.extents + (self.grid.m, self.grid.m)
        if self.values.shape != shape:
            raise InvalidInputError(f"values have shape {self.values.shape}, expected {shape}")

    @classmethod
    def constant(cls, grid, J):
        """Constant field backed by a read-only broadcast view (no copy)."""
        J = np.asarray(J, dtype=float)
        vals = np.broadcast_to(J, grid.extents + J.shape)
        return cls(grid, vals, {"constant": True})

    @property
    def m(self):
        return self.grid.m

    def copy(self):
        # the copy is writable, so it may stop being constant
        meta = {k: v for k, v in self.meta.items() if k != "constant"}
        return AcsField(self.grid, np.array(self.values), meta)

    def constraint_residual(self, g=None):
        """Pointwise max of ``|J^2 + id|`` and the g-skewness residual."""
        res = np.empty(self.grid.extents)
        for blk in _blocks(self.grid, 0):
            V = blk.take(self.values)
            r1 = acs_residual(V)
            skew = V + np.swapaxes(V, -1, -2)  # conformal metrics: g-skew == skew
            r2 = np.max(np.abs(skew), axis=(-2, -1))
            res[blk.out] = np.maximum(r1, r2)
        return res

    def max_constraint_residual(self, g=None):
        return float(self.constraint_residual(g).max())


# -- finite differences -------------------------------------------------------

def axis_derivative(arr, axis, h, periodic):
    """Second-order first derivative along ``axis``."""
    if periodic:
        return (np.roll(arr, -1, axis) - np.roll(arr, 1, axis)) / (2.0 * h)
    out = np.empty(arr.shape)
    n = arr.shape[axis]

    def s(a, b=None):
        sl = [slice(None)] * arr.ndim
        sl[axis] = slice(a, b) if b is not None or a is None else a
        return tuple(sl)

    out[s(1, n - 1)] = (arr[s(2, n)] - arr[s(0, n - 2)]) / (2.0 * h)
    out[s(0)] = (-3.0 * arr[s(0)] + 4.0 * arr[s(1)] - arr[s(2)]) / (2.0 * h)
    out[s(n - 1)] = (3.0 * arr[s(n - 1)] - 4.0 * arr[s(n - 2)] + arr[s(n - 3)]) / (2.0 * h)
    return out


def axis_second_derivative(arr, axis, h, periodic):
    """Compact second difference; one-sided second order at open edges."""
    if periodic:
        return (np.roll(arr, -1, axis) - 2.0 * arr + np.roll(arr, 1, axis)) / (h * h)
    out = np.empty(arr.shape)
    n = arr.shape[axis]

    def s(a, b=None):
        sl = [slice(None)] * arr.ndim
        sl[axis] = slice(a, b) if b is not None else a
        return tuple(sl)

    out[s(1, n - 1)] = (arr[s(2, n)] - 2.0 * arr[s(1, n - 1)] + arr[s(0, n - 2)]) / (h * h)
    out[s(0)] = (2.0 * arr[s(0)] - 5.0 * arr[s(1)] + 4.0 * arr[s(2)] - arr[s(3)]) / (h * h)
    out[s(n - 1)] = (2.0 * arr[s(n - 1)] - 5.0 * arr[s(n - 2)] + 4.0 * arr[s(n - 3)]
                     - arr[s(n - 4)]) / (h * h)
    return out


class _Block:
    """A slab of the grid along axis 0, optionally with a halo."""

    def __init__(self, grid, index, crop, out, periodic_axes):
        self.grid = grid
        self.index = index
        self.crop = crop
        self.out = out
        self.periodic_axes = periodic_axes
        self._points = None

    @property
    def whole(self):
        return self.index is None

    def take(self, arr):
        return arr if self.whole else arr[self.index]

    def cropped(self, arr):
        return arr if self.whole else arr[self.crop]

    @property
    def points(self):
        if self._points is None:
            self._points = self.grid.points(self.index)
        return self._points


def _blocks(grid, halo, max_points=None):
    max_points = BLOCK_POINTS if max_points is None else max_points
    n0 = grid.extents[0]
    rest = grid.n_points // n0
    step = max(1, max_points // rest)
    if step >= n0:
        yield _Block(grid, None, None, slice(None), (grid.periodic,) * grid.m)
        return
    # at least 4 rows per slab so the one-sided edge stencils fit
    nblk = max(1, min(-(-n0 // step), n0 // 4))
    if nblk == 1:
        yield _Block(grid, None, None, slice(None), (grid.periodic,) * grid.m)
        return
    cuts = np.linspace(0, n0, nblk + 1).astype(int)
    flags = (False,) + (grid.periodic,) * (grid.m - 1)
    for i0, i1 in zip(cuts[:-1], cuts[1:]):
        i0, i1 = int(i0), int(i1)
        if grid.periodic:
            idx = np.arange(i0 - halo, i1 + halo)
            crop = slice(halo, halo + i1 - i0)
            idx = idx % n0
        else:
            lo, hi = max(0, i0 - halo), min(n0, i1 + halo)
            idx = np.arange(lo, hi)
            crop = slice(i0 - lo, i0 - lo + i1 - i0)
        yield _Block(grid, idx, crop, slice(i0, i1), flags)


# -- metric helpers on blocks -------------------------------------------------

def _metric(g, m):
    return euclidean(m) if g is None else g


class _MetricBlock:
    """Conformal exponent and its derivatives on the points of a block.

    For ``g = exp(u) delta`` the matrix ``C_a = (Gamma^k_{al})_{kl}`` is
    ``u_a id / 2`` plus the skew rank-two part ``(e_a du^T - du e_a^T) / 2``;
    only the latter survives in commutators.
    """

    def __init__(self, g, blk):
        self.flat = g.is_flat
        self.m = g.dim
        if self.flat:
            return
        pts = blk.points
        self.u = g.conformal_exponent(pts)
        self.du = g.grad_exponent(pts)
        self._g = g
        self._pts = pts

    def hess(self):
        return self._g.hess_exponent(self._pts)

    @property
    def trace_gamma(self):
        # sum_a Gamma^c_{aa} = (1 - m/2) u_c
        return (1.0 - 0.5 * self.m) * self.du


def _skew_comm(y, a, X):
    """``[(e_a y^T - y e_a^T) / 2, X]`` for a vector field ``y`` and matrices ``X``."""
    out = np.einsum("...k,...j->...kj", -y, X[..., a, :])
    out -= np.einsum("...k,...j->...kj", X[..., :, a], y)
    out[..., a, :] += np.einsum("...kj,...k->...j", X, y)
    out[..., :, a] += np.einsum("...kj,...j->...k", X, y)
    out *= 0.5
    return out


def _sq(t):
    return np.einsum("...kj,...kj->...", t, t)


def _partials(V, h, periodic_axes, constant=False):
    if constant:
        return [np.zeros(V.shape) for _ in periodic_axes]
    return [axis_derivative(V, a, h, periodic_axes[a]) for a in range(len(periodic_axes))]


def _covariant(V, dV, mb):
    """List of ``nabla_a V = d_a V + [C_a, V]``."""
    if mb.flat:
        return dV
    return [d + _skew_comm(mb.du, a, V) for a, d in enumerate(dV)]


def _fields_on_block(J, g, blk, want):
    """Evaluate the requested pieces on one block (cropped to the block interior)."""
    V = blk.take(J.values)
    h = J.grid.h
    mb = _MetricBlock(g, blk)
    dV = _partials(V, h, blk.periodic_axes, J.meta.get("constant", False))
    nab = _covariant(V, dV, mb)
    res = {}
    inv = None if mb.flat else np.exp(-mb.u)
    if "edens" in want:
        e = sum(_sq(t) for t in nab)
        res["edens"] = blk.cropped(e if mb.flat else inv * e)
    if "flat_edens" in want:
        res["flat_edens"] = blk.cropped(sum(_sq(d) for d in dV))
    if "nabla" in want:
        res["nabla"] = blk.cropped(np.stack(nab, axis=-3))
    if "lap" in want or "nonlin" in want:
        NN = sum(t @ t for t in nab)
        nonlin = V @ NN
        if not mb.flat:
            nonlin = inv[..., None, None] * nonlin
        res["nonlin"] = blk.cropped(nonlin)
    if "lap" in want:
        lap = sum(axis_second_derivative(V, a, h, blk.periodic_axes[a]) for a in range(J.m))
        if not mb.flat:
            H = mb.hess()
            tg = mb.trace_gamma
            for a in range(J.m):
                # d_a C_a has the same skew structure with du replaced by H[:, a]
                lap = lap + _skew_comm(H[..., :, a], a, V) + _skew_comm(mb.du, a, dV[a]) \
                    + _skew_comm(mb.du, a, nab[a]) - tg[..., a, None, None] * nab[a]
            lap = inv[..., None, None] * lap
        res["lap"] = blk.cropped(lap)
    return res


def _assemble(J, g, want, halo=1):
    g = _metric(g, J.m)
    grid = J.grid
    m = J.m
    shapes = {"edens": (), "flat_edens": (), "nabla": (m, m, m), "lap": (m, m), "nonlin": (m, m)}
    out = {k: np.empty(grid.extents + shapes[k]) for k in want}
    for blk in _blocks(grid, halo):
        part = _fields_on_block(J, g, blk, want)
        for k in want:
            out[k][blk.out] = part[k]
    return out


# -- public operators ---------------------------------------------------------

def covariant_derivative(J, g=None):
    """Array ``[..., a, k, j] = nabla_a J_j^k`` over the grid."""
    return _assemble(J, g, ("nabla",))["nabla"]


def energy_density(J, g=None):
    """``|nabla J|^2`` with all indices contracted by the metric."""
    return _assemble(J, g, ("edens",))["edens"]


def flat_energy_density(J):
    """``|DJ|^2``: coordinate derivatives, Euclidean contraction."""
    return _assemble(J, None, ("flat_edens",))["flat_edens"]


def quadrature_weights(grid, g=None, block=None):
    """Midpoint weights ``sqrt(det g) h^m``; zero on a dirichlet edge layer."""
    g = _metric(g, grid.m)
    if g.is_flat:
        w = np.full(grid.extents, grid.cell_volume)
    else:
        w = np.exp(0.5 * grid.m * exponent_field(grid, g)) * grid.cell_volume
    if not grid.periodic:
        w = np.where(grid.interior_mask(), w, 0.0)
    return w


def _integrate(density, grid, g):
    # fixed summation order: reduce along the trailing axes first
    w = quadrature_weights(grid, g)
    return float(np.sum(density * w))


def energy(J, g=None):
    """Midpoint quadrature of the energy density."""
    return _integrate(energy_density(J, g), J.grid, g)


def p_energy(J, g=None, p=2.0, radius=None, center=None, edens=None):
    """Quadrature of ``|nabla J|^p dv``, optionally over the ball ``|x - center| <= radius``.

    ``edens`` may carry a precomputed energy density.
    """
    if not p >= 1:
        raise InvalidInputError("p must be >= 1")
    e = energy_density(J, g) if edens is None else edens
    dens = e if p == 2 else np.power(e, 0.5 * p)
    if radius is not None:
        dens = dens * ball_mask(J.grid, center, radius)
    return _integrate(dens, J.grid, g)


def ball_mask(grid, center, radius):
    c = np.zeros(grid.m) if center is None else np.asarray(center, dtype=float)
    mask = np.empty(grid.extents, dtype=bool)
    for blk in _blocks(grid, 0):
        d = grid.displacement(blk.points, c)
        mask[blk.out] = np.sum(d * d, axis=-1) <= radius * radius
    return mask


def rough_laplacian(J, g=None):
    """``g^{ab} nabla_a nabla_b J``, expanded with compact second differences."""
    return _assemble(J, g, ("lap",))["lap"]


def nonlinearity(J, g=None):
    """``g^{pq} J nabla_p J nabla_q J`` as a matrix product at each point."""
    return _assemble(J, g, ("nonlin",))["nonlin"]


@dataclass
class HarmonicResidual:
    field: np.ndarray
    sup: float
    commutator_sup: float


def harmonic_residual(J, g=None):
    """``Delta J - J nabla_p J nabla_p J`` and sup norms over interior points.

    Also reports the sup of ``[Delta J, J]``.
    """
    parts = _assemble(J, g, ("lap", "nonlin"))
    R = parts["lap"] - parts["nonlin"]
    V = J.values
    comm = parts["lap"] @ V - V @ parts["lap"]
    mask = J.grid.interior_mask()
    sup = float(np.max(np.abs(R), axis=(-2, -1))[mask].max())
    csup = float(np.max(np.abs(comm), axis=(-2, -1))[mask].max())
    return HarmonicResidual(R, sup, csup)


def weak_residual(J, g=None, T=None):
    """Discrete ``int <nabla J, nabla T> dv + int <J nabla_p J nabla_p J, T> dv``."""
    g = _metric(g, J.m)
    Tv = T.values if isinstance(T, AcsField) else np.asarray(T, dtype=float)
    if Tv.shape != J.values.shape:
        raise InvalidInputError("test field shape mismatch")
    Tf = AcsField(J.grid, Tv)
    parts = _assemble(J, g, ("nabla", "nonlin"))
    nT = _assemble(Tf, g, ("nabla",))["nabla"]
    dens = np.sum(parts["nabla"] * nT, axis=(-3, -2, -1))
    if not g.is_flat:
        dens = dens * np.exp(-exponent_field(J.grid, g))
    dens = dens + np.sum(parts["nonlin"] * Tv, axis=(-2, -1))
    return _integrate(dens, J.grid, g)


def first_variation(J, V, g=None):
    """Derivative of the energy along a variation with velocity ``V``: ``2 int <nabla V, nabla J> dv``."""
    g = _metric(g, J.m)
    Vf = AcsField(J.grid, np.asarray(V, dtype=float))
    nJ = covariant_derivative(J, g)
    nV = covariant_derivative(Vf, g)
    dens = np.sum(nJ * nV, axis=(-3, -2, -1))
    if not g.is_flat:
        dens = dens * np.exp(-exponent_field(J.grid, g))
    return 2.0 * _integrate(dens, J.grid, g)


def exponent_field(grid, g):
    """Conformal exponent ``u`` sampled on every grid point."""
    u = np.empty(grid.extents)
    for blk in _blocks(grid, 0):
        u[blk.out] = g.conformal_exponent(blk.points)
    return u


def second_derivatives(J):
    """Flat second differences ``[..., a, b, k, j]``; compact on the diagonal."""
    grid = J.grid
    m = J.m
    V = J.values
    P = grid.periodic
    out = np.empty(grid.extents + (m, m, m, m))
    d1 = [axis_derivative(V, a, grid.h, P) for a in range(m)]
    for a in range(m):
        out[..., a, a, :, :] = axis_second_derivative(V, a, grid.h, P)
        for b in range(a + 1, m):
            dab = axis_derivative(d1[b], a, grid.h, P)
            out[..., a, b, :, :] = dab
            out[..., b, a, :, :] = dab
    return out


# -- resampling ---------------------------------------------------------------

def _index_coords(grid, pts):
    return (pts - grid.lower()) / grid.h


def interpolate(J, pts, order=1):
    """Interpolate matrix entries at physical points ``pts`` ``(..., m)``."""
    grid = J.grid
    pts = np.asarray(pts, dtype=float)
    idx = _index_coords(grid, pts)
    if not grid.periodic:
        ext = np.array(grid.extents) - 1
        if np.any(idx < -1e-9) or np.any(idx > ext + 1e-9):
            raise InvalidInputError("interpolation point outside the grid")
        idx = np.clip(idx, 0, ext)
    coords = np.moveaxis(idx.reshape(-1, grid.m), -1, 0)
    mode = "grid-wrap" if grid.periodic else "nearest"
    m = grid.m
    out = np.empty((coords.shape[1], m, m))
    for k in range(m):
        for j in range(m):
            comp = np.ascontiguousarray(J.values[..., k, j])
            out[:, k, j] = ndimage.map_coordinates(comp, coords, order=order, mode=mode)
    return out.reshape(pts.shape[:-1] + (m, m))


def dilate(J, p, r, out_grid, g=None, order=1):
    """``z -> J(p + r z)`` on ``out_grid``, interpolated then reprojected."""
    if not r > 0:
        raise InvalidInputError("r must be positive")
    if out_grid.m != J.m:
        raise InvalidInputError("grid dimension mismatch")
    pts = np.asarray(p, dtype=float) + r * out_grid.points()
    vals = interpolate(J, pts, order=order)
    return AcsField(out_grid, reproject(vals))


def radial_cone(J, r, center=None, g=None, order=1):
    """Replace J inside ``B_r(center)`` by ``J(center + r (x - c)/|x - c|)``, reprojected.

    Cells closer than ``h`` to the centre take the projected average of
    their axis neighbours.
    """
    grid = J.grid
    if r < 3 * grid.h:
        raise DegenerateScaleError(f"radius {r} is below 3h = {3 * grid.h}")
    if g is not None and g.kind not in ("euclidean", "sphere_stereographic", "conformal"):
        raise InvalidInputError("unsupported metric")
    c = np.zeros(grid.m) if center is None else np.asarray(center, dtype=float)
    if not grid.periodic:
        if np.any(c - r < grid.lower() - 1e-12) or np.any(c + r > grid.upper() + 1e-12):
            raise InvalidInputError("ball leaves the grid")
    pts = grid.points()
    d = grid.displacement(pts, c)
    dist = np.sqrt(np.sum(d * d, axis=-1))
    inside = dist < r
    core = dist < grid.h
    move = inside & ~core
    src = c + r * d[move] / dist[move][:, None]
    out = np.array(J.values)
    out[move] = reproject(interpolate(J, src, order=order))
    if np.any(core):
        for idx in np.argwhere(core):
            acc = np.zeros((grid.m, grid.m))
            for a in range(grid.m):
                for s in (-1, 1):
                    nb = idx.copy()
                    nb[a] += s
                    if grid.periodic:
                        nb %= grid.extents
                    acc += out[tuple(nb)]
            out[tuple(idx)] = reproject(acc / (2 * grid.m))
    return AcsField(grid, out)
