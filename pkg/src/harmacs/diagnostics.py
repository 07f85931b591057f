"""Analytic quantities evaluated on discrete fields, plus the reference fixtures.

Densities use a sharp ball indicator on cell centres.  Radii below ``3 h``
are rejected.
"""

from dataclasses import dataclass
from math import gamma, pi

import numpy as np
from scipy import signal
from scipy.spatial import cKDTree

from ._validation import (
    ChiralityError,
    DegenerateScaleError,
    InvalidInputError,
    NotReducibleError,
    UnsupportedMetricError,
)
from .field import (
    AcsField,
    Grid,
    _blocks,
    _integrate,
    axis_derivative,
    axis_second_derivative,
    ball_mask,
    energy_density,
    exponent_field,
    flat_energy_density,
    quadrature_weights,
)
from .matalg import reproject, standard_acs, tangent_projection

# measured |nabla J0|^2 / |x|^2 for the sphere chart with n = 2
SPHERE_C2 = 8.0


def _check_radius(grid, r, what="radius"):
    if not r >= 3 * grid.h:
        raise DegenerateScaleError(f"{what} {r} is below 3h = {3 * grid.h}")


def _check_ball(grid, p, r):
    if grid.periodic:
        if np.any(2 * r >= grid.period):
            raise InvalidInputError("ball wraps onto itself on the periodic grid")
        return
    lo = grid.lower() + grid.h  # the frozen layer carries zero weight
    hi = grid.upper() - grid.h
    p = np.asarray(p, dtype=float)
    if np.any(p - r < lo - 0.5 * grid.h) or np.any(p + r > hi + 0.5 * grid.h):
        raise InvalidInputError(f"ball of radius {r} about {p.tolist()} leaves the domain")


def _center(grid, p):
    return np.zeros(grid.m) if p is None else np.asarray(p, dtype=float)


def ball_integral(dens, grid, g, p, r):
    return _integrate(dens * ball_mask(grid, p, r), grid, g)


def density(J, g=None, p=None, r=None, edens=None):
    """Normalised ball energy ``r^(2-m) int_{B_r(p)} |nabla J|^2 dv``."""
    grid = J.grid
    p = _center(grid, p)
    _check_radius(grid, r)
    _check_ball(grid, p, r)
    e = energy_density(J, g) if edens is None else edens
    return r ** (2 - grid.m) * ball_integral(e, grid, g, p, r)


def density_tilde(J, g=None, p=None, r=None, delta=0.0, c_n=SPHERE_C2, flat_edens=None):
    """``exp(c_n delta r) (r^(2-m) int_{B_r} |DJ|^2 dx + c_n delta^2 r^2)`` with coordinate derivatives."""
    if delta < 0:
        raise InvalidInputError("delta must be >= 0")
    grid = J.grid
    p = _center(grid, p)
    _check_radius(grid, r)
    _check_ball(grid, p, r)
    e = flat_energy_density(J) if flat_edens is None else flat_edens
    base = r ** (2 - grid.m) * ball_integral(e, grid, None, p, r)
    return float(np.exp(c_n * delta * r) * (base + c_n * delta ** 2 * r ** 2))


@dataclass
class DensityProfile:
    center: np.ndarray
    radii: np.ndarray
    theta: np.ndarray
    theta_tilde: np.ndarray
    monotone_violation: float

    def rows(self):
        return [(float(r), float(a), float(b)) for r, a, b in zip(self.radii, self.theta, self.theta_tilde)]


def density_profile(J, g=None, p=None, radii=(), delta=0.0, c_n=SPHERE_C2):
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or radii.size == 0 or np.any(np.diff(radii) <= 0):
        raise InvalidInputError("radii must be a strictly increasing list")
    p = _center(J.grid, p)
    e = energy_density(J, g)
    fe = flat_energy_density(J) if not (g is None or g.is_flat) else e
    theta = np.array([density(J, g, p, r, edens=e) for r in radii])
    tt = np.array([density_tilde(J, g, p, r, delta, c_n, flat_edens=fe) for r in radii])
    drops = -np.diff(tt)
    viol = float(max(0.0, drops.max())) if drops.size else 0.0
    return DensityProfile(p, radii, theta, tt, viol)


def homogeneity_gap(J, g=None, p=None, s=None, t=None, delta=0.0, c_n=SPHERE_C2):
    """``W(p, s, t)``: increase of the monotone density between scales s < t."""
    if not s < t:
        raise InvalidInputError("need s < t")
    fe = flat_energy_density(J)
    return (density_tilde(J, g, p, t, delta, c_n, flat_edens=fe)
            - density_tilde(J, g, p, s, delta, c_n, flat_edens=fe))


def radial_deficit(J, p=None, s=None, t=None):
    """``int_{s < |x-p| < t} |x-p|^(2-m) |d_r J|^2 dx`` (flat).

    For harmonic maps twice this equals the density increase between s and t.
    """
    grid = J.grid
    p = _center(grid, p)
    _check_radius(grid, s)
    _check_ball(grid, p, t)
    m = grid.m
    total = 0.0
    w = quadrature_weights(grid)
    for blk in _blocks(grid, 1):
        V = blk.take(J.values)
        dV = [blk.cropped(axis_derivative(V, a, grid.h, blk.periodic_axes[a])) for a in range(m)]
        d = grid.displacement(blk.cropped(blk.points), p)
        rr = np.sqrt(np.sum(d * d, axis=-1))
        sel = (rr > s) & (rr <= t)
        rsafe = np.where(rr > 0, rr, 1.0)
        dr = sum(dV[a] * (d[..., a] / rsafe)[..., None, None] for a in range(m))
        val = np.sum(dr * dr, axis=(-2, -1)) * rsafe ** (2 - m)
        total += float(np.sum(np.where(sel, val, 0.0) * w[blk.out]))
    return total


# -- regularity ---------------------------------------------------------------

def _hessian_norm(J, g=None):
    """``|nabla^2 J|`` from coordinate second differences, metric-scaled norms."""
    grid = J.grid
    m = J.m
    out = np.empty(grid.extents)
    for blk in _blocks(grid, 2):
        V = blk.take(J.values)
        per = blk.periodic_axes
        d1 = [axis_derivative(V, a, grid.h, per[a]) for a in range(m)]
        acc = 0.0
        for a in range(m):
            daa = axis_second_derivative(V, a, grid.h, per[a])
            acc = acc + np.sum(daa * daa, axis=(-2, -1))
            for b in range(a + 1, m):
                dab = axis_derivative(d1[b], a, grid.h, per[a])
                acc = acc + 2.0 * np.sum(dab * dab, axis=(-2, -1))
        out[blk.out] = blk.cropped(acc)
    if g is not None and not g.is_flat:
        out = out * np.exp(-2.0 * exponent_field(grid, g))
    return np.sqrt(out)


@dataclass
class RegularityMap:
    points: np.ndarray
    values: np.ndarray

    def below(self, r):
        """Sample points whose regularity scale does not exceed ``r``."""
        return self.points[self.values <= r]


def _regularity_fields(J, g):
    return np.sqrt(energy_density(J, g)), _hessian_norm(J, g)


def regularity_scale(J, p=None, radii=(1.0, 0.5, 0.25, 0.125), g=None, fields=None):
    """Largest listed ``r <= 1`` with ``sup_{B_r(p)} r |nabla J| + r^2 |nabla^2 J| <= 1``; 0 if none."""
    grid = J.grid
    p = _center(grid, p)
    grad, hess = _regularity_fields(J, g) if fields is None else fields
    inner = grid.interior_mask()
    best = 0.0
    for r in sorted((float(r) for r in radii if 0 < r <= 1), reverse=True):
        mask = ball_mask(grid, p, r) & inner
        if not mask.any():
            continue
        val = np.max(r * grad[mask] + r * r * hess[mask])
        if val <= 1.0 + 1e-12:
            best = r
            break
    return best


def regularity_map(J, g=None, radii=(1.0, 0.5, 0.25, 0.125), stride=4):
    grid = J.grid
    fields = _regularity_fields(J, g)
    idx = np.stack(np.meshgrid(*[np.arange(0, n, stride) for n in grid.extents], indexing="ij"),
                   axis=-1).reshape(-1, grid.m)
    pts = np.asarray(grid.origin) + grid.h * idx
    vals = np.array([regularity_scale(J, q, radii, g, fields) for q in pts])
    return RegularityMap(pts, vals)


def _ball_kernel(grid, r):
    k = int(np.floor(r / grid.h + 1e-9))
    off = np.arange(-k, k + 1) * grid.h
    mesh = np.meshgrid(*([off] * grid.m), indexing="ij")
    d2 = sum(x * x for x in mesh)
    return (d2 <= r * r).astype(float)


def ball_sums(dens, grid, g, r):
    """``int_{B_r(x)} dens dv`` for every grid point ``x`` (FFT convolution)."""
    w = dens * quadrature_weights(grid, g)
    K = _ball_kernel(grid, r)
    if grid.periodic:
        k = K.shape[0] // 2
        Kp = np.zeros(grid.extents)
        Kp[tuple(slice(0, 2 * k + 1) for _ in range(grid.m))] = K
        Kp = np.roll(Kp, [-k] * grid.m, axis=tuple(range(grid.m)))
        ax = tuple(range(grid.m))
        out = np.fft.irfftn(np.fft.rfftn(w) * np.fft.rfftn(Kp), s=grid.extents, axes=ax)
    else:
        out = signal.fftconvolve(w, K, mode="same")
    return np.maximum(out, 0.0)


def epsilon_regularity_scan(J, g=None, epsilon=None, r=None, edens=None):
    """Grid points whose density at scale r is at least epsilon.

    On dirichlet grids only points whose ball stays inside the domain are
    examined.
    """
    grid = J.grid
    _check_radius(grid, r)
    if not epsilon > 0:
        raise InvalidInputError("epsilon must be positive")
    e = energy_density(J, g) if edens is None else edens
    dens = r ** (2 - grid.m) * ball_sums(e, grid, g, r)
    ok = np.ones(grid.extents, dtype=bool)
    if not grid.periodic:
        k = int(np.ceil(r / grid.h - 1e-9)) + 1
        for a in range(grid.m):
            sl = [slice(None)] * grid.m
            sl[a] = slice(0, k)
            ok[tuple(sl)] = False
            sl[a] = slice(grid.extents[a] - k, None)
            ok[tuple(sl)] = False
    idx = np.argwhere(ok & (dens >= epsilon))
    return np.asarray(grid.origin) + grid.h * idx


def tubular_volume(points, r, grid, g=None):
    """Volume of the grid cells within distance r of a point set."""
    pts = np.asarray(points, dtype=float).reshape(-1, grid.m)
    if pts.shape[0] == 0:
        return 0.0
    lo = grid.lower()
    if grid.periodic:
        L = grid.period
        tree = cKDTree(np.mod(pts - lo, L), boxsize=L)
    else:
        tree = cKDTree(pts - lo)
    w = quadrature_weights(grid, g) if not grid.periodic else None
    total = 0.0
    for blk in _blocks(grid, 0):
        q = blk.points.reshape(-1, grid.m) - lo
        if grid.periodic:
            q = np.mod(q, grid.period)
        dist, _ = tree.query(q, k=1, distance_upper_bound=r * (1 + 1e-12))
        near = (dist <= r).reshape(blk.points.shape[:-1])
        if w is None:
            if g is None or g.is_flat:
                total += float(near.sum()) * grid.cell_volume
            else:
                sd = g.sqrt_det(blk.points)
                total += float(np.sum(np.where(near, sd, 0.0))) * grid.cell_volume
        else:
            total += float(np.sum(np.where(near, w[blk.out], 0.0)))
    return total


def ball_volume(m, r):
    return pi ** (m / 2) / gamma(m / 2 + 1) * r ** m


# -- Bochner identity ---------------------------------------------------------

@dataclass
class BochnerResult:
    field: np.ndarray
    sup: float
    u: np.ndarray
    lap_u: np.ndarray

    def fitted_constant(self):
        """Smallest C with ``Delta u >= -C (u^2 + sqrt(u))`` at every interior point."""
        rhs = self.u ** 2 + np.sqrt(self.u)
        deficit = np.maximum(-self.lap_u, 0.0)
        pos = rhs > 0
        if np.any(deficit[~pos] > 0):
            return float("inf")
        return float(np.max(deficit[pos] / rhs[pos])) if pos.any() else 0.0


def bochner_residual(J, g=None):
    """``1/2 Delta |DJ|^2 - |D^2 J|^2 + |D_p J D_p J|^2`` on a flat metric.

    All derivatives are central second-order stencils; the sup is over points
    at least two cells from a dirichlet edge.
    """
    if g is not None and not g.is_flat:
        raise UnsupportedMetricError("the Bochner residual is implemented for flat metrics only")
    grid = J.grid
    m = J.m
    h = grid.h
    P = grid.periodic
    V = J.values
    d1 = [axis_derivative(V, a, h, P) for a in range(m)]
    u = sum(np.sum(d * d, axis=(-2, -1)) for d in d1)
    lap_u = sum(axis_second_derivative(u, a, h, P) for a in range(m))
    hess2 = np.zeros(grid.extents)
    for a in range(m):
        daa = axis_second_derivative(V, a, h, P)
        hess2 += np.sum(daa * daa, axis=(-2, -1))
        for b in range(a + 1, m):
            dab = axis_derivative(d1[b], a, h, P)
            hess2 += 2.0 * np.sum(dab * dab, axis=(-2, -1))
    quad = sum(d @ d for d in d1)
    quad2 = np.sum(quad * quad, axis=(-2, -1))
    res = 0.5 * lap_u - hess2 + quad2
    mask = np.ones(grid.extents, dtype=bool)
    if not P:
        mask[...] = False
        mask[tuple(slice(2, -2) for _ in range(m))] = True
    sup = float(np.abs(res[mask]).max())
    return BochnerResult(res, sup, u[mask], lap_u[mask])


# -- dimension four -----------------------------------------------------------

CHIRALITIES = ("+", "-")


_SIGNS = {
    # (row, col, component, sign) for the upper triangle; the lower one is minus it
    "+": ((0, 1, 0, 1), (0, 2, 1, 1), (0, 3, 2, 1), (1, 2, 2, -1), (1, 3, 1, 1), (2, 3, 0, -1)),
    "-": ((0, 1, 0, 1), (0, 2, 1, 1), (0, 3, 2, 1), (1, 2, 2, 1), (1, 3, 1, -1), (2, 3, 0, 1)),
}


def _pattern(a, b, c, chirality):
    if chirality not in _SIGNS:
        raise InvalidInputError(f"chirality must be one of {CHIRALITIES}")
    comps = (a, b, c)
    out = np.zeros(np.shape(a) + (4, 4))
    for i, j, k, sgn in _SIGNS[chirality]:
        out[..., i, j] = sgn * comps[k]
        out[..., j, i] = -sgn * comps[k]
    return out


def dim4_lift(u, chirality="+", grid=None, tol=1e-8):
    """Structure on R^4 from a unit 3-vector field ``u`` of shape (..., 3).

    Returns an :class:`AcsField` when ``grid`` is given, else the raw array.
    """
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != 3:
        raise InvalidInputError("u must have trailing dimension 3")
    if np.any(np.abs(np.sum(u * u, axis=-1) - 1.0) > tol):
        raise InvalidInputError("u must take values on the unit sphere")
    J = _pattern(u[..., 0], u[..., 1], u[..., 2], chirality)
    return AcsField(grid, J) if grid is not None else J


def dim4_reduce(J, tol=1e-8):
    """Inverse of :func:`dim4_lift`; returns ``(u, chirality)``."""
    V = J.values if isinstance(J, AcsField) else np.asarray(J, dtype=float)
    if V.shape[-2:] != (4, 4):
        raise InvalidInputError("reduction needs 4x4 matrices")
    u = np.stack([V[..., 0, 1], V[..., 0, 2], V[..., 0, 3]], axis=-1)
    fits = {}
    for ch in CHIRALITIES:
        err = np.max(np.abs(_pattern(u[..., 0], u[..., 1], u[..., 2], ch) - V), axis=(-2, -1))
        fits[ch] = err <= tol
    unit = np.abs(np.sum(u * u, axis=-1) - 1.0) <= tol
    plus = fits["+"] & unit
    minus = fits["-"] & unit
    if not np.all(plus | minus):
        raise NotReducibleError("matrix matches neither sign pattern")
    if np.all(plus):
        return u, "+"
    if np.all(minus):
        return u, "-"
    raise ChiralityError("field mixes both sign patterns")


def dirichlet_energy_density(u, grid):
    """``|Du|^2`` for a vector field with components on the last axis."""
    P = grid.periodic
    return sum(np.sum(axis_derivative(u, a, grid.h, P) ** 2, axis=-1) for a in range(grid.m))


# -- fixtures -----------------------------------------------------------------

def sphere_fixture(n, grid):
    """The constant standard structure, compatible with the sphere chart metric."""
    if grid.m != 2 * n:
        raise InvalidInputError("grid dimension must be 2n")
    return AcsField.constant(grid, standard_acs(n))


def sphere_constant(grid, n=2, rmin=0.1, rmax=1.0):
    """``|nabla J0|^2 / |x|^2`` sampled over ``rmin <= |x| <= rmax``: (mean, relative spread)."""
    from .geometry import sphere_stereographic

    J = sphere_fixture(n, grid)
    e = energy_density(J, sphere_stereographic(n))
    pts = grid.points()
    r2 = np.sum(pts * pts, axis=-1)
    sel = (r2 >= rmin ** 2) & (r2 <= rmax ** 2) & grid.interior_mask()
    ratio = e[sel] / r2[sel]
    mean = float(ratio.mean())
    return mean, float((ratio.max() - ratio.min()) / mean)


def hopf_map(x):
    """Degree-zero homogeneous Hopf map ``R^4 \\ 0 -> S^2``."""
    x = np.asarray(x, dtype=float)
    x1, x2, x3, x4 = np.moveaxis(x, -1, 0)
    r2 = np.sum(x * x, axis=-1)
    a = (x1 * x1 + x2 * x2 - x3 * x3 - x4 * x4) / r2
    b = 2.0 * (x1 * x3 + x2 * x4) / r2
    c = 2.0 * (x2 * x3 - x1 * x4) / r2
    return np.stack([a, b, c], axis=-1)


def dim4_cone(grid, u_map=hopf_map, center=None, chirality="+"):
    """Lift of a homogeneous sphere-valued map about ``center``.

    The grid should be cell-centred about ``center`` so no sample hits it.
    Built slab by slab to keep temporaries small on large grids.
    """
    if grid.m != 4:
        raise InvalidInputError("cone fixture lives in dimension 4")
    c = _center(grid, center)
    vals = np.empty(grid.extents + (4, 4))
    for blk in _blocks(grid, 0):
        d = grid.displacement(blk.points, c)
        if np.any(np.sum(d * d, axis=-1) == 0):
            raise InvalidInputError("a grid point coincides with the cone vertex")
        u = u_map(d)
        u = u / np.linalg.norm(u, axis=-1, keepdims=True)
        vals[blk.out] = dim4_lift(u, chirality)
    return AcsField(grid, vals)


def geodesic_lift(grid, wave=(1, 1, 0, 0), chirality="+"):
    """Lift of ``u = (cos 2 pi k.x, sin 2 pi k.x, 0)``: a harmonic map into S^2."""
    k = np.asarray(wave, dtype=float)
    phase = 2 * pi * (grid.points() @ k)
    u = np.stack([np.cos(phase), np.sin(phase), np.zeros_like(phase)], axis=-1)
    return dim4_lift(u, chirality, grid)


def random_sphere_field(grid, seed, n_modes=3, amplitude=0.5):
    """Smooth periodic unit 3-vector field: normalised offset plus low Fourier modes."""
    rng = np.random.default_rng(seed)
    x = grid.points()
    L = grid.period
    base = rng.standard_normal(3)
    base *= 1.0 / np.linalg.norm(base)
    v = np.broadcast_to(base, grid.extents + (3,)).copy()
    for _ in range(n_modes):
        k = rng.integers(-2, 3, size=grid.m)
        if not k.any():
            k[0] = 1
        ph = rng.uniform(0, 2 * pi)
        amp = rng.standard_normal(3)
        amp *= amplitude / (n_modes * np.linalg.norm(amp))
        v += np.cos(2 * pi * (x @ (k / L)) + ph)[..., None] * amp
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def perturbed_structure(grid, base, amplitude=0.3, seed=0, n_modes=3, even=True):
    """``J0 (id + S)(id - S)^{-1}`` for a smooth tangent field ``S`` with ``max ||S||_2 = amplitude``.

    ``even`` restricts to even wave numbers on the periodic cell so the
    slowest Fourier modes stay empty.
    """
    base = np.asarray(base, dtype=float)
    rng = np.random.default_rng(seed)
    m = grid.m
    x = grid.points()
    L = grid.period
    S = np.zeros(grid.extents + (m, m))
    for _ in range(n_modes):
        T = tangent_projection(rng.standard_normal((m, m)), base) / 4.0
        T /= max(np.abs(T).max(), 1e-300)
        k = rng.integers(-1, 2, size=m) * (2 if even else 1)
        if not k.any():
            k[0] = 2 if even else 1
        ph = rng.uniform(0, 2 * pi)
        S += np.cos(2 * pi * (x @ (k / L)) + ph)[..., None, None] * T
    top = np.linalg.norm(S, 2, axis=(-2, -1)).max()
    if top > 0:
        S *= amplitude / top
    eye = np.eye(m)
    vals = base @ np.linalg.solve(eye - S, eye + S)
    return AcsField(grid, reproject(vals))


# -- calibration probe --------------------------------------------------------

@dataclass
class ProbeResult:
    eps: np.ndarray
    energy: np.ndarray
    slope: float
    window_slopes: tuple

    def rows(self):
        return [(float(e), float(E)) for e, E in zip(self.eps, self.energy)]


def infinite_energy_probe(eps_list, h=2.0 ** -10):
    """Flat energy of ``x / |x|`` over ``B_1 \\ B_eps`` in the plane.

    Returns energies, the least-squares slope against ``log(1/eps)`` (2 pi
    in the continuum) and the slopes over the two halves of the series.
    """
    eps = np.asarray(sorted(eps_list, reverse=True), dtype=float)
    if eps.size == 0:
        raise InvalidInputError("need at least one eps")
    if np.any(eps < 3 * h):
        raise DegenerateScaleError(f"eps below 3h = {3 * h}")
    if np.any(eps > 1):
        raise InvalidInputError("eps must be <= 1")
    grid = Grid.cube(2, 1.0 + 2 * h, h, boundary="dirichlet")
    x = grid.points()
    r = np.sqrt(np.sum(x * x, axis=-1))
    v = x / r[..., None]
    e = dirichlet_energy_density(v, grid)
    w = h * h
    energies = np.array([float(np.sum(e[(r >= ep) & (r <= 1.0)])) * w if ep < 1 else 0.0
                         for ep in eps])
    t = np.log(1.0 / eps)
    slope = float(np.polyfit(t, energies, 1)[0]) if eps.size >= 2 else float("nan")
    half = eps.size // 2 + 1
    wins = ()
    if eps.size >= 4:
        wins = (float(np.polyfit(t[:half], energies[:half], 1)[0]),
                float(np.polyfit(t[-half:], energies[-half:], 1)[0]))
    return ProbeResult(eps, energies, slope, wins)


def calibrated_epsilon(J, g=None, r=None, factor=10.0):
    """Default scan threshold: ``factor`` times the largest density at scale r."""
    e = energy_density(J, g)
    dens = r ** (2 - J.m) * ball_sums(e, J.grid, g, r)
    return factor * float(dens.max())
