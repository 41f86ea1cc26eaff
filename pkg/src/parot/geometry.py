"""Bounded domains, their lattice discretizations, defining functions and densities.

Every domain is discretized on the uniform lattice spanning its bounding box.
Nodes strictly inside the domain are *interior*; lattice neighbours (including
diagonal ones) of interior nodes that are not themselves inside form the
*boundary* ring; everything else is *exterior* and carried only for uniform
array layout.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DensityError, EvaluationError

INTERIOR, BOUNDARY, EXTERIOR = 0, 1, 2
KINDS = ("interval", "box", "disc", "ellipse")


@dataclass(frozen=True)
class DomainSpec:
    kind: str
    center: tuple
    half_extents: tuple
    r0: float = 0.1

    def __post_init__(self):
        center = tuple(float(c) for c in np.atleast_1d(self.center))
        half = tuple(float(a) for a in np.atleast_1d(self.half_extents))
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown domain kind {self.kind!r}")
        if len(half) == 1 and len(center) > 1:
            half = half * len(center)
        if len(half) != len(center):
            raise ConfigurationError("center and half_extents differ in length")
        if min(half) <= 0.0:
            raise ConfigurationError("half-extents must be strictly positive")
        if self.kind == "interval" and len(center) != 1:
            raise ConfigurationError("interval domains are one-dimensional")
        if self.kind in ("disc", "ellipse") and len(center) != 2:
            raise ConfigurationError(f"{self.kind} domains are two-dimensional")
        if self.kind == "disc" and half[0] != half[1]:
            raise ConfigurationError("disc needs equal half-extents (use ellipse)")
        if self.r0 < 0:
            raise ConfigurationError("r0 must be non-negative")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "half_extents", half)

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def volume(self) -> float:
        a = self.half_extents
        if self.kind in ("interval", "box"):
            return float(np.prod([2.0 * x for x in a]))
        return math.pi * a[0] * a[1]

    @property
    def surface_measure(self) -> float:
        a = self.half_extents
        if self.kind == "interval":
            return 2.0
        if self.kind == "box":
            sides = [2.0 * x for x in a]
            total = 0.0
            for k in range(len(sides)):
                total += 2.0 * float(np.prod(sides[:k] + sides[k + 1:]))
            return total
        if self.kind == "disc":
            return 2.0 * math.pi * a[0]
        # Ramanujan's second approximation; relative error ~1e-10 at moderate eccentricity.
        p, q = a
        hh = ((p - q) / (p + q)) ** 2
        return math.pi * (p + q) * (1 + 3 * hh / (10 + math.sqrt(4 - 3 * hh)))

    @property
    def diameter(self) -> float:
        a = np.asarray(self.half_extents)
        if self.kind in ("interval", "box"):
            return float(2.0 * np.linalg.norm(a))
        return float(2.0 * a.max())


def interval(a: float, b: float, r0: float = 0.1) -> DomainSpec:
    return DomainSpec("interval", (0.5 * (a + b),), (0.5 * (b - a),), r0)


def disc(center, radius: float, r0: float = 0.1) -> DomainSpec:
    return DomainSpec("disc", tuple(center), (radius, radius), r0)


# ---------------------------------------------------------------------------
# signed distance


def _box_sd(spec, pts):
    c = np.asarray(spec.center)
    half = np.asarray(spec.half_extents)
    rel = pts - c
    if pts.shape[-1] == 1:
        return np.abs(rel[:, 0]) - half[0], np.where(rel > 0, 1.0, -1.0)
    d = np.abs(rel) - half
    outside = np.maximum(d, 0.0)
    out_norm = np.linalg.norm(outside, axis=-1)
    dmax = d.max(axis=-1)
    h = out_norm + np.minimum(dmax, 0.0)
    sgn = np.where(rel > 0, 1.0, -1.0)  # ties at the centre go to the lower face
    grad = np.zeros_like(pts)
    out = out_norm > 0
    grad[out] = sgn[out] * outside[out] / out_norm[out, None]
    ins = ~out
    if np.any(ins):
        dm = d[ins]
        on_bdry = np.abs(dmax[ins]) <= 1e-14 * max(1.0, half.max())
        faces = np.zeros_like(dm)
        k = np.argmax(dm, axis=-1)
        faces[np.arange(len(k)), k] = 1.0
        # corner points on the boundary: average the active face normals
        corner = (np.abs(dm) <= 1e-14 * max(1.0, half.max())) & on_bdry[:, None]
        faces = np.where(on_bdry[:, None] & (corner.sum(-1, keepdims=True) > 1), corner.astype(float), faces)
        g = faces * sgn[ins]
        grad[ins] = g / np.linalg.norm(g, axis=-1, keepdims=True)
    return h, grad


def _disc_sd(spec, pts):
    c = np.asarray(spec.center)
    rel = pts - c
    r = np.linalg.norm(rel, axis=-1)
    h = r - spec.half_extents[0]
    with np.errstate(invalid="ignore", divide="ignore"):
        grad = rel / r[:, None]
    return h, grad


def _ellipse_root(r0, z0, z1, g, iters=200):
    # bisection for the Lagrange parameter of the nearest-point problem
    n0 = r0 * z0
    s0 = z1 - 1.0
    s1 = np.where(g < 0, 0.0, np.hypot(n0, z1) - 1.0)
    s = 0.5 * (s0 + s1)
    for _ in range(iters):
        s = 0.5 * (s0 + s1)
        ratio0 = n0 / (s + r0)
        ratio1 = z1 / (s + 1.0)
        gg = ratio0**2 + ratio1**2 - 1.0
        s0 = np.where(gg > 0, s, s0)
        s1 = np.where(gg < 0, s, s1)
    return s


def _ellipse_nearest_quadrant(e0, e1, y0, y1):
    """Nearest point on the ellipse (e0 >= e1) for first-quadrant points y."""
    x0 = np.empty_like(y0)
    x1 = np.empty_like(y1)
    with np.errstate(invalid="ignore", divide="ignore"):
        gen = (y1 > 0) & (y0 > 0)
        z0 = y0 / e0
        z1 = y1 / e1
        g = z0**2 + z1**2 - 1.0
        r0 = (e0 / e1) ** 2
        if np.any(gen):
            sbar = _ellipse_root(r0, z0[gen], z1[gen], g[gen])
            x0[gen] = r0 * y0[gen] / (sbar + r0)
            x1[gen] = y1[gen] / (sbar + 1.0)
        axis1 = (y1 > 0) & (y0 <= 0)
        x0[axis1] = 0.0
        x1[axis1] = e1
        axis0 = y1 <= 0
        numer0 = e0 * y0
        denom0 = e0**2 - e1**2
        inner = axis0 & (numer0 < denom0)
        xde0 = numer0[inner] / denom0
        x0[inner] = e0 * xde0
        x1[inner] = e1 * np.sqrt(np.maximum(1.0 - xde0**2, 0.0))
        outer = axis0 & ~(numer0 < denom0)
        x0[outer] = e0
        x1[outer] = 0.0
    return x0, x1


def _ellipse_sd(spec, pts):
    c = np.asarray(spec.center)
    a, b = spec.half_extents
    rel = pts - c
    swap = b > a
    if swap:
        rel = rel[:, ::-1]
        a, b = b, a
    s0 = np.where(rel[:, 0] < 0, -1.0, 1.0)
    s1 = np.where(rel[:, 1] < 0, -1.0, 1.0)
    y0 = np.abs(rel[:, 0])
    y1 = np.abs(rel[:, 1])
    x0, x1 = _ellipse_nearest_quadrant(a, b, y0, y1)
    near = np.stack([s0 * x0, s1 * x1], axis=-1)
    diff = rel - near
    d = np.linalg.norm(diff, axis=-1)
    inside = (rel[:, 0] / a) ** 2 + (rel[:, 1] / b) ** 2 < 1.0
    h = np.where(inside, -d, d)
    # outward normal at the nearest point
    nrm = np.stack([near[:, 0] / a**2, near[:, 1] / b**2], axis=-1)
    nrm /= np.linalg.norm(nrm, axis=-1, keepdims=True)
    grad = nrm
    if swap:
        grad = grad[:, ::-1]
    return h, grad


_SD = {"interval": _box_sd, "box": _box_sd, "disc": _disc_sd, "ellipse": _ellipse_sd}


def signed_distance(spec: DomainSpec, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized signed distance (negative inside) and its gradient.

    Returns NaN gradients at the disc/ellipse centre, where the distance is
    not differentiable.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, spec.dim)
    h, grad = _SD[spec.kind](spec, pts)
    if spec.kind in ("disc", "ellipse"):
        sing = np.all(pts == np.asarray(spec.center), axis=-1)
        grad = grad.copy()
        grad[sing] = np.nan
    return h, grad


def defining_function(spec: DomainSpec, x) -> tuple[float, np.ndarray]:
    x = np.asarray(x, dtype=float).reshape(1, spec.dim)
    h, g = signed_distance(spec, x)
    if not np.all(np.isfinite(g)):
        raise EvaluationError(f"defining-function gradient undefined at {x[0].tolist()}")
    return float(h[0]), g[0]


@dataclass(frozen=True)
class DefiningFunction:
    spec: DomainSpec

    def __call__(self, x):
        return defining_function(self.spec, x)

    def values(self, points):
        return signed_distance(self.spec, points)

    def project(self, points):
        """Nearest points on the boundary."""
        h, g = signed_distance(self.spec, points)
        return np.asarray(points, dtype=float).reshape(-1, self.spec.dim) - h[:, None] * g

    def shape_operator(self, points):
        """Tangential curvature matrices D(nu) at boundary points, shape (m, n, n)."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.spec.dim)
        n = self.spec.dim
        m = len(pts)
        if self.spec.kind in ("interval", "box"):
            return np.zeros((m, n, n))
        _, nu = signed_distance(self.spec, pts)
        tang = np.stack([-nu[:, 1], nu[:, 0]], axis=-1)
        if self.spec.kind == "disc":
            kappa = np.full(m, 1.0 / self.spec.half_extents[0])
        else:
            a, b = self.spec.half_extents
            rel = self.project(pts) - np.asarray(self.spec.center)
            # curvature of x^2/a^2 + y^2/b^2 = 1 at rel
            kappa = 1.0 / (a**2 * b**2 * ((rel[:, 0] / a**2) ** 2 + (rel[:, 1] / b**2) ** 2) ** 1.5)
        return kappa[:, None, None] * np.einsum("mi,mj->mij", tang, tang)


# ---------------------------------------------------------------------------
# grids


def _frozen(a):
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GridDomain:
    spec: DomainSpec
    shape: tuple
    lower: np.ndarray
    spacing: np.ndarray
    points: np.ndarray
    node_class: np.ndarray
    normals: np.ndarray
    boundary_points: np.ndarray
    weights: np.ndarray
    sd: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def h(self) -> float:
        return float(self.spacing.max())

    @property
    def size(self) -> int:
        return len(self.points)

    @cached_property
    def interior(self) -> np.ndarray:
        return _frozen(np.flatnonzero(self.node_class == INTERIOR))

    @cached_property
    def boundary(self) -> np.ndarray:
        return _frozen(np.flatnonzero(self.node_class == BOUNDARY))

    @cached_property
    def active(self) -> np.ndarray:
        return _frozen(np.flatnonzero(self.node_class != EXTERIOR))

    @property
    def strides(self) -> tuple:
        s = []
        acc = 1
        for k in reversed(self.shape):
            s.append(acc)
            acc *= k
        return tuple(reversed(s))

    def neighbor(self, idx, offset) -> np.ndarray:
        """Flat index of the lattice node at integer ``offset`` from ``idx``."""
        return np.asarray(idx) + int(np.dot(offset, self.strides))

    @property
    def volume_estimate(self) -> float:
        return float(self.weights.sum())

    def same_layout(self, other: "GridDomain") -> bool:
        return self.shape == other.shape and np.allclose(self.points, other.points, atol=1e-12, rtol=0)


def build_grid(spec: DomainSpec, resolution) -> GridDomain:
    n = spec.dim
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (n,))
    if np.any(res < 4):
        raise ConfigurationError(f"resolution must be >= 4 per axis, got {res.tolist()}")
    half = np.asarray(spec.half_extents)
    lower = np.asarray(spec.center) - half
    spacing = 2.0 * half / (res - 1)
    axes = [lower[k] + spacing[k] * np.arange(res[k]) for k in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=-1)
    # snap the last node exactly onto the upper face
    for k in range(n):
        top = np.isclose(points[:, k], lower[k] + 2 * half[k], rtol=0, atol=1e-12 * half[k])
        points[top, k] = lower[k] + 2 * half[k]
    sd, grad = signed_distance(spec, points)
    tol = 1e-12 * half.max()
    inside = sd < -tol
    if not inside.any():
        raise ConfigurationError("resolution too small to contain an interior node")
    shape = tuple(int(r) for r in res)
    inside_l = inside.reshape(shape)
    near = np.zeros(shape, dtype=bool)
    for off in itertools.product((-1, 0, 1), repeat=n):
        shifted = inside_l
        for k, o in enumerate(off):
            shifted = np.roll(shifted, o, axis=k)
            if o == 1:
                idx = [slice(None)] * n
                idx[k] = 0
                shifted[tuple(idx)] = False
            elif o == -1:
                idx = [slice(None)] * n
                idx[k] = -1
                shifted[tuple(idx)] = False
        near |= shifted
    cls = np.full(len(points), EXTERIOR, dtype=np.int8)
    cls[near.ravel()] = BOUNDARY
    cls[inside] = INTERIOR

    normals = np.full_like(points, np.nan)
    bidx = cls == BOUNDARY
    normals[bidx] = grad[bidx]
    bpoints = np.full_like(points, np.nan)
    bpoints[bidx] = points[bidx] - sd[bidx, None] * grad[bidx]

    if spec.kind in ("interval", "box"):
        w1 = []
        for k in range(n):
            w = np.full(res[k], spacing[k])
            w[0] = w[-1] = 0.5 * spacing[k]
            w1.append(w)
        weights = w1[0]
        for k in range(1, n):
            weights = np.multiply.outer(weights, w1[k])
        weights = np.asarray(weights).ravel().copy()
        weights[cls == EXTERIOR] = 0.0
    else:
        cell = float(np.prod(spacing))
        reach = 0.5 * spacing.sum()
        frac = np.zeros(len(points))
        frac[cls != EXTERIOR] = 1.0
        edge = (cls != EXTERIOR) & (sd > -reach)
        g = grad[edge]
        width = np.abs(g) @ spacing
        frac[edge] = np.clip(0.5 - sd[edge] / width, 0.0, 1.0)
        weights = cell * frac
    return GridDomain(
        spec=spec,
        shape=shape,
        lower=lower,
        spacing=spacing,
        points=points,
        node_class=cls,
        normals=normals,
        boundary_points=bpoints,
        weights=weights,
        sd=sd,
    )


# ---------------------------------------------------------------------------
# densities


@dataclass(frozen=True)
class DensitySpec:
    kind: str = "uniform"
    value: float = 1.0
    slope: tuple = ()
    amplitude: float = 0.0
    path: str | None = None


@dataclass(frozen=True, eq=False)
class DensityField:
    grid: GridDomain
    values: np.ndarray
    lam: float

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        act = vals[self.grid.active]
        if not np.all(np.isfinite(act)):
            raise DensityError("density has non-finite values on active nodes")
        if self.lam <= 0 or act.min() < self.lam * (1 - 1e-12) or act.max() > (1 + 1e-12) / self.lam:
            raise DensityError(
                f"density bounds violated: lambda={self.lam}, range=[{act.min()}, {act.max()}]"
            )

    @classmethod
    def from_values(cls, grid, values, lam=None):
        vals = np.asarray(values, dtype=float)
        act = vals[grid.active]
        if act.min() <= 0:
            raise DensityError("densities must be strictly positive")
        if lam is None:
            lam = min(float(act.min()), 1.0 / float(act.max()), 1.0)
        return cls(grid, vals, float(lam))

    @property
    def mass(self) -> float:
        return float(np.dot(self.grid.weights, self.values))

    def __call__(self, points) -> np.ndarray:
        """Multilinear interpolation on the lattice, clamped to [lam, 1/lam]."""
        g = self.grid
        pts = np.asarray(points, dtype=float).reshape(-1, g.dim)
        n = g.dim
        base = np.zeros(len(pts), dtype=int)
        frac = np.zeros((len(pts), n))
        strides = g.strides
        idx0 = []
        for k in range(n):
            f = (pts[:, k] - g.lower[k]) / g.spacing[k]
            f = np.clip(f, 0.0, g.shape[k] - 1)
            i = np.minimum(np.floor(f).astype(int), g.shape[k] - 2)
            idx0.append(i)
            frac[:, k] = f - i
            base += i * strides[k]
        out = np.zeros(len(pts))
        for corner in itertools.product((0, 1), repeat=n):
            wgt = np.ones(len(pts))
            off = 0
            for k, ck in enumerate(corner):
                wgt *= frac[:, k] if ck else 1.0 - frac[:, k]
                off += ck * strides[k]
            out += wgt * self.values[base + off]
        return np.clip(out, self.lam, 1.0 / self.lam)


def _read_density_csv(grid, path):
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                continue  # header
    data = np.asarray(rows)
    if data.ndim != 2 or data.shape[1] != grid.dim + 1:
        raise ConfigurationError(f"{path}: expected {grid.dim} coordinates plus a value per row")
    values = np.full(grid.size, np.nan)
    lookup = {tuple(np.round(p, 9)): i for i, p in enumerate(grid.points)}
    for r in data:
        key = tuple(np.round(r[:-1], 9))
        if key not in lookup:
            raise ConfigurationError(f"{path}: node {key} is not on the grid")
        values[lookup[key]] = r[-1]
    act = grid.active
    if np.any(np.isnan(values[act])):
        raise ConfigurationError(f"{path}: missing values for active nodes")
    missing = np.isnan(values)
    if missing.any():
        known = np.flatnonzero(~missing)
        d = np.linalg.norm(grid.points[missing][:, None, :] - grid.points[known][None], axis=-1)
        values[missing] = values[known[np.argmin(d, axis=1)]]
    return values


def density_from_spec(grid: GridDomain, spec: DensitySpec) -> DensityField:
    pts = grid.points
    c = np.asarray(grid.spec.center)
    if spec.kind == "uniform":
        vals = np.full(grid.size, float(spec.value))
    elif spec.kind == "linear":
        slope = np.broadcast_to(np.asarray(spec.slope or (0.0,), dtype=float), (grid.dim,))
        vals = spec.value + (pts - c) @ slope
    elif spec.kind == "cosine":
        half = grid.spec.half_extents[0]
        vals = spec.value + spec.amplitude * np.cos(math.pi * (pts[:, 0] - c[0]) / (2 * half))
    elif spec.kind == "csv":
        if not spec.path or not Path(spec.path).exists():
            raise ConfigurationError(f"density file {spec.path!r} not found")
        vals = _read_density_csv(grid, spec.path)
    else:
        raise ConfigurationError(f"unknown density kind {spec.kind!r}")
    return DensityField.from_values(grid, vals)


def normalize_densities(rho: DensityField, rho_star: DensityField) -> tuple[DensityField, DensityField]:
    """Rescale the target density by one constant so the discrete masses agree."""
    m, ms = rho.mass, rho_star.mass
    if m <= 0 or ms <= 0:
        raise ConfigurationError("densities must carry positive mass")
    if abs(m - ms) <= 1e-13 * m:
        return rho, rho_star
    scale = m / ms
    return rho, DensityField.from_values(rho_star.grid, rho_star.values * scale)
