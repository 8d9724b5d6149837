"""Convex domains, structured grids, quadrature and scalar fields.

Three domain kinds are supported: an interval (d=1), an axis-aligned
rectangle (d=2) and a disk (d=2).  Interval and rectangle use
vertex-centered tensor grids with trapezoidal quadrature; the disk uses a
masked cell-centered lattice whose boundary cells carry exact
cell/disk-intersection areas as quadrature weights (nodes sit at the exact
centroids of the cut cells, so every node lies in the closure of the
domain and linear functions are integrated exactly).

The inner region O0 consists of the nodes at distance >= margin from the
boundary; perturbation supports and L1 restrictions live there.
"""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass, field

import numpy as np

INTERVAL = "interval"
RECTANGLE = "rectangle"
DISK = "disk"

_KINDS = (INTERVAL, RECTANGLE, DISK)

# cells with a smaller volume fraction are dropped from the disk lattice;
# the lost area is restored by rescaling the remaining cut-cell weights
_DISK_DROP_FRAC = 1e-6


class DomainError(ValueError):
    """Invalid domain/grid construction request."""


class GridMismatchError(ValueError):
    """Two fields do not live on the same grid."""


@dataclass(frozen=True)
class Domain:
    """Geometric descriptor: kind, extents, dimension, volume and the
    margin that defines the compact inner subset O0."""

    kind: str
    bounds: tuple
    dim: int
    volume: float
    margin: float


class Grid:
    """Immutable structured grid with quadrature weights and masks.

    Attributes
    ----------
    nodes : (N, d) array of node coordinates (closure of the domain).
    weights : (N,) quadrature weights, summing to the domain volume.
    spacing : (d,) lattice spacing per axis.
    boundary_mask : nodes on (interval/rectangle) or within h of (disk)
        the boundary.
    inner_mask : nodes at distance >= margin from the boundary (O0).
    """

    def __init__(self, domain, nodes, weights, spacing, boundary_mask,
                 inner_mask, shape, lattice_index, axes=None, cell_frac=None):
        self.domain = domain
        self.nodes = _freeze(np.asarray(nodes, dtype=float))
        self.weights = _freeze(np.asarray(weights, dtype=float))
        self.spacing = tuple(float(s) for s in spacing)
        self.boundary_mask = _freeze(np.asarray(boundary_mask, dtype=bool))
        self.inner_mask = _freeze(np.asarray(inner_mask, dtype=bool))
        # full lattice shape and the lattice -> node-id map (-1 = inactive)
        self.shape = tuple(int(s) for s in shape)
        self.lattice_index = _freeze(np.asarray(lattice_index, dtype=np.int64))
        self.axes = None if axes is None else tuple(_freeze(np.asarray(a, float)) for a in axes)
        self.cell_frac = None if cell_frac is None else _freeze(np.asarray(cell_frac, float))
        self._key = None
        self._faces = None
        self._neighbors = None
        self._validate()

    # -- basic properties ------------------------------------------------

    @property
    def dim(self):
        return self.domain.dim

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def key(self):
        """Content fingerprint; two grids with equal keys are interchangeable."""
        if self._key is None:
            h = hashlib.sha256()
            h.update(self.domain.kind.encode())
            h.update(repr(self.domain.bounds).encode())
            h.update(np.ascontiguousarray(self.nodes).tobytes())
            h.update(np.ascontiguousarray(self.weights).tobytes())
            object.__setattr__ if False else setattr(self, "_key", h.hexdigest()[:16])
        return self._key

    def _validate(self):
        if not np.all(np.isfinite(self.nodes)) or not np.all(np.isfinite(self.weights)):
            raise DomainError("non-finite grid data")
        if np.any(self.weights <= 0):
            raise DomainError("quadrature weights must be positive")
        total = float(self.weights.sum())
        if abs(total - self.domain.volume) > 1e-10 * self.domain.volume:
            raise DomainError(
                f"quadrature weights sum to {total!r}, expected {self.domain.volume!r}")
        if np.any(self.inner_mask & self.boundary_mask):
            raise DomainError("inner mask overlaps boundary mask")
        if not self.inner_mask.any():
            raise DomainError("margin empties the inner region O0")

    # -- lattice connectivity ---------------------------------------------

    def neighbor_table(self):
        """(d, 2, N) node ids of the (-, +) lattice neighbor per axis, -1 if absent."""
        if self._neighbors is None:
            idx = self.lattice_index
            d = self.dim
            out = np.full((d, 2, self.n_nodes), -1, dtype=np.int64)
            if d == 1:
                n = self.shape[0]
                for i in range(n):
                    node = idx[i]
                    if node < 0:
                        continue
                    if i > 0 and idx[i - 1] >= 0:
                        out[0, 0, node] = idx[i - 1]
                    if i < n - 1 and idx[i + 1] >= 0:
                        out[0, 1, node] = idx[i + 1]
            else:
                nx, ny = self.shape
                for i in range(nx):
                    for j in range(ny):
                        node = idx[i, j]
                        if node < 0:
                            continue
                        if i > 0 and idx[i - 1, j] >= 0:
                            out[0, 0, node] = idx[i - 1, j]
                        if i < nx - 1 and idx[i + 1, j] >= 0:
                            out[0, 1, node] = idx[i + 1, j]
                        if j > 0 and idx[i, j - 1] >= 0:
                            out[1, 0, node] = idx[i, j - 1]
                        if j < ny - 1 and idx[i, j + 1] >= 0:
                            out[1, 1, node] = idx[i, j + 1]
            self._neighbors = _freeze(out)
        return self._neighbors

    def faces(self):
        """Flux faces as (node_a, node_b, factor) arrays.

        ``factor`` is transverse_measure / spacing, so the stiffness form is
        sum over faces of  f_face * factor * (u_b - u_a) * (v_b - v_a).
        """
        if self._faces is None:
            self._faces = tuple(_freeze(a) for a in self._build_faces())
        return self._faces

    def _build_faces(self):
        kind = self.domain.kind
        idx = self.lattice_index
        fa, fb, factor = [], [], []
        if kind == INTERVAL:
            h = self.spacing[0]
            n = self.shape[0]
            for i in range(n - 1):
                fa.append(idx[i])
                fb.append(idx[i + 1])
                factor.append(1.0 / h)
        elif kind == RECTANGLE:
            hx, hy = self.spacing
            nx, ny = self.shape
            wy = _trapezoid_weights(ny, hy)
            wx = _trapezoid_weights(nx, hx)
            for i in range(nx - 1):
                for j in range(ny):
                    fa.append(idx[i, j]); fb.append(idx[i + 1, j])
                    factor.append(wy[j] / hx)
            for i in range(nx):
                for j in range(ny - 1):
                    fa.append(idx[i, j]); fb.append(idx[i, j + 1])
                    factor.append(wx[i] / hy)
        else:  # disk: apertures are exact chord lengths of the open face
            h = self.spacing[0]
            n = self.shape[0]
            R = self.domain.bounds[0]
            xs = self.axes[0]
            for i in range(n - 1):
                for j in range(n):
                    a, b = idx[i, j], idx[i + 1, j]
                    if a < 0 or b < 0:
                        continue
                    xf = xs[i] + 0.5 * h
                    lo, hi = xs[j] - 0.5 * h, xs[j] + 0.5 * h
                    ap = _chord_overlap(xf, lo, hi, R)
                    if ap > 0:
                        fa.append(a); fb.append(b); factor.append(ap / h)
            for i in range(n):
                for j in range(n - 1):
                    a, b = idx[i, j], idx[i, j + 1]
                    if a < 0 or b < 0:
                        continue
                    yf = xs[j] + 0.5 * h
                    lo, hi = xs[i] - 0.5 * h, xs[i] + 0.5 * h
                    ap = _chord_overlap(yf, lo, hi, R)
                    if ap > 0:
                        fa.append(a); fb.append(b); factor.append(ap / h)
        return (np.asarray(fa, dtype=np.int64), np.asarray(fb, dtype=np.int64),
                np.asarray(factor, dtype=float))


@dataclass(frozen=True)
class ScalarField:
    """Real-valued field sampled at the grid nodes."""

    values: np.ndarray
    grid: Grid = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n_nodes,):
            raise GridMismatchError(
                f"field has {v.shape}, grid has {self.grid.n_nodes} nodes")
        if not np.all(np.isfinite(v)):
            raise DomainError("field contains non-finite values")
        object.__setattr__(self, "values", _freeze(v))

    def __add__(self, other):
        return ScalarField(self.values + _vals(other, self.grid), self.grid)

    def __sub__(self, other):
        return ScalarField(self.values - _vals(other, self.grid), self.grid)

    def __mul__(self, scalar):
        return ScalarField(self.values * float(scalar), self.grid)

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(-self.values, self.grid)


def _vals(other, grid):
    if isinstance(other, ScalarField):
        check_same_grid(other, grid)
        return other.values
    return float(other)


def _freeze(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def check_same_grid(u, grid_or_field):
    grid = grid_or_field.grid if isinstance(grid_or_field, ScalarField) else grid_or_field
    if u.grid is grid:
        return
    if u.grid.key != grid.key:
        raise GridMismatchError("fields live on different grids")


# ---------------------------------------------------------------------------
# construction


def build_domain(kind, extents, resolution, margin):
    """Build a (Domain, Grid) pair.

    extents: interval -> (a, b); rectangle -> ((ax, bx), (ay, by));
    disk -> radius.  resolution is the cell count per axis (>= 16);
    margin is the inner-region distance from the boundary.
    """
    if kind not in _KINDS:
        raise DomainError(f"unknown domain kind {kind!r}")
    resolution = int(resolution)
    if resolution < 16:
        raise DomainError("resolution must be at least 16 cells per axis")
    margin = float(margin)
    if margin <= 0:
        raise DomainError("margin must be positive")

    if kind == INTERVAL:
        return _build_interval(extents, resolution, margin)
    if kind == RECTANGLE:
        return _build_rectangle(extents, resolution, margin)
    return _build_disk(extents, resolution, margin)


def _trapezoid_weights(n_nodes, h):
    w = np.full(n_nodes, h)
    w[0] = w[-1] = 0.5 * h
    return w


def _build_interval(extents, n, margin):
    a, b = (float(extents[0]), float(extents[1]))
    if not b > a:
        raise DomainError("interval extents must satisfy a < b")
    if margin >= 0.5 * (b - a):
        raise DomainError("margin must be smaller than half the extent")
    h = (b - a) / n
    x = a + h * np.arange(n + 1)
    domain = Domain(INTERVAL, (a, b), 1, b - a, margin)
    weights = _trapezoid_weights(n + 1, h)
    dist = np.minimum(x - a, b - x)
    boundary = (dist <= 1e-12 * (b - a))
    inner = dist >= margin - 1e-12 * (b - a)
    grid = Grid(domain, x[:, None], weights, (h,), boundary, inner,
                (n + 1,), np.arange(n + 1), axes=(x,))
    return domain, grid


def _build_rectangle(extents, n, margin):
    (ax, bx), (ay, by) = extents
    ax, bx, ay, by = map(float, (ax, bx, ay, by))
    if not (bx > ax and by > ay):
        raise DomainError("rectangle extents must have positive lengths")
    if margin >= 0.5 * min(bx - ax, by - ay):
        raise DomainError("margin must be smaller than half the smallest extent")
    hx, hy = (bx - ax) / n, (by - ay) / n
    xs = ax + hx * np.arange(n + 1)
    ys = ay + hy * np.arange(n + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    wx = _trapezoid_weights(n + 1, hx)
    wy = _trapezoid_weights(n + 1, hy)
    weights = np.outer(wx, wy).ravel()
    domain = Domain(RECTANGLE, ((ax, bx), (ay, by)), 2,
                    (bx - ax) * (by - ay), margin)
    scale = max(bx - ax, by - ay)
    dist = np.minimum.reduce([nodes[:, 0] - ax, bx - nodes[:, 0],
                              nodes[:, 1] - ay, by - nodes[:, 1]])
    boundary = dist <= 1e-12 * scale
    inner = dist >= margin - 1e-12 * scale
    lattice = np.arange((n + 1) * (n + 1)).reshape(n + 1, n + 1)
    grid = Grid(domain, nodes, weights, (hx, hy), boundary, inner,
                (n + 1, n + 1), lattice, axes=(xs, ys))
    return domain, grid


def _build_disk(extents, n, margin):
    R = float(extents if np.isscalar(extents) else extents[0])
    if R <= 0:
        raise DomainError("disk radius must be positive")
    if margin >= R:
        raise DomainError("margin must be smaller than the radius")
    h = 2.0 * R / n
    centers = -R + h * (np.arange(n) + 0.5)
    frac = np.zeros((n, n))
    cx = np.zeros((n, n))
    cy = np.zeros((n, n))
    for i in range(n):
        x1, x2 = centers[i] - 0.5 * h, centers[i] + 0.5 * h
        for j in range(n):
            y1, y2 = centers[j] - 0.5 * h, centers[j] + 0.5 * h
            area, mx, my = _cell_disk_moments(x1, x2, y1, y2, R)
            frac[i, j] = area / (h * h)
            if area > 0:
                cx[i, j] = mx / area
                cy[i, j] = my / area

    active = frac > _DISK_DROP_FRAC
    # keep only the largest face-connected component so no node is isolated
    active = _largest_component(active)
    lattice = np.full((n, n), -1, dtype=np.int64)
    order = np.argwhere(active)
    for node, (i, j) in enumerate(order):
        lattice[i, j] = node
    nodes = np.column_stack([cx[active], cy[active]])
    weights = frac[active] * h * h
    cut = frac[active] < 1.0 - 1e-12
    # boundary-cell weight correction: restore the exact disk area lost to
    # dropped slivers by scaling the cut-cell weights
    target = math.pi * R * R
    deficit = target - weights.sum()
    wcut = weights[cut].sum()
    if wcut <= 0 or abs(deficit) > 1e-3 * target:
        raise DomainError("disk quadrature correction out of range")
    weights[cut] *= 1.0 + deficit / wcut
    r = np.hypot(nodes[:, 0], nodes[:, 1])
    inner = (R - r) >= margin - 1e-12 * R
    if np.any(inner & cut):
        raise DomainError("margin too small for the disk resolution")
    domain = Domain(DISK, (R,), 2, target, margin)
    grid = Grid(domain, nodes, weights, (h, h), cut, inner,
                (n, n), lattice, axes=(centers, centers), cell_frac=frac[active])
    return domain, grid


def _largest_component(active):
    from scipy.ndimage import label

    labels, count = label(active)
    if count <= 1:
        return active
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    return labels == sizes.argmax()


# -- exact circle/cell geometry ---------------------------------------------


def _sqrt_clip(v):
    return math.sqrt(v) if v > 0 else 0.0


def _g_antideriv(x, R):
    # antiderivative of sqrt(R^2 - x^2)
    x = min(max(x, -R), R)
    return 0.5 * (x * _sqrt_clip(R * R - x * x) + R * R * math.asin(x / R))


def _g2_antideriv(x, R):
    # antiderivative of (R^2 - x^2)
    return R * R * x - x ** 3 / 3.0


def _gx_antideriv(x, R):
    # antiderivative of x * sqrt(R^2 - x^2)
    x = min(max(x, -R), R)
    return -((R * R - x * x) ** 1.5) / 3.0


def _cell_disk_moments(x1, x2, y1, y2, R):
    """Exact (area, int x dA, int y dA) of [x1,x2]x[y1,y2] intersected
    with the disk of radius R centered at the origin."""
    lo, hi = max(x1, -R), min(x2, R)
    if lo >= hi:
        return 0.0, 0.0, 0.0
    cuts = {lo, hi}
    for y in (abs(y1), abs(y2)):
        if y < R:
            x = _sqrt_clip(R * R - y * y)
            for c in (x, -x):
                if lo < c < hi:
                    cuts.add(c)
    pts = sorted(cuts)
    area = mx = my = 0.0
    for p, q in zip(pts[:-1], pts[1:]):
        xm = 0.5 * (p + q)
        g = _sqrt_clip(R * R - xm * xm)
        top_is_g = g < y2
        bot_is_g = -g > y1
        top = g if top_is_g else y2
        bot = -g if bot_is_g else y1
        if top <= bot:
            continue
        # piecewise-exact integrals of (top - bot), x*(top - bot), (top^2 - bot^2)/2
        if top_is_g:
            i_top = _g_antideriv(q, R) - _g_antideriv(p, R)
            ix_top = _gx_antideriv(q, R) - _gx_antideriv(p, R)
            i2_top = 0.5 * (_g2_antideriv(q, R) - _g2_antideriv(p, R))
        else:
            i_top = y2 * (q - p)
            ix_top = y2 * 0.5 * (q * q - p * p)
            i2_top = 0.5 * y2 * y2 * (q - p)
        if bot_is_g:
            i_bot = -(_g_antideriv(q, R) - _g_antideriv(p, R))
            ix_bot = -(_gx_antideriv(q, R) - _gx_antideriv(p, R))
            i2_bot = 0.5 * (_g2_antideriv(q, R) - _g2_antideriv(p, R))
        else:
            i_bot = y1 * (q - p)
            ix_bot = y1 * 0.5 * (q * q - p * p)
            i2_bot = 0.5 * y1 * y1 * (q - p)
        area += i_top - i_bot
        mx += ix_top - ix_bot
        my += i2_top - i2_bot
    return area, mx, my


def _chord_overlap(c, lo, hi, R):
    """Length of {t in [lo, hi] : c^2 + t^2 <= R^2}."""
    disc = R * R - c * c
    if disc <= 0:
        return 0.0
    half = math.sqrt(disc)
    return max(0.0, min(hi, half) - max(lo, -half))


# ---------------------------------------------------------------------------
# quadrature functionals


def l2_inner(u: ScalarField, v: ScalarField) -> float:
    """Quadrature inner product sum(u * v * w)."""
    check_same_grid(u, v)
    return float(np.dot(u.values * v.values, u.grid.weights))


def l2_norm(u: ScalarField) -> float:
    return math.sqrt(max(l2_inner(u, u), 0.0))


def restrict_l1(u: ScalarField, region: str = "full") -> float:
    """L1 norm of u over the full domain or the inner region O0."""
    if region == "full":
        mask = slice(None)
    elif region == "inner":
        mask = u.grid.inner_mask
    else:
        raise ValueError(f"unknown region {region!r}")
    return float(np.dot(np.abs(u.values[mask]), u.grid.weights[mask]))


def weighted_mean(u: ScalarField) -> float:
    return l2_inner(u, constant_field(u.grid, 1.0)) / u.grid.domain.volume


def constant_field(grid: Grid, value: float) -> ScalarField:
    return ScalarField(np.full(grid.n_nodes, float(value)), grid)


def field_from_function(grid: Grid, fn) -> ScalarField:
    """Sample fn(x) (d=1) or fn(x, y) (d=2) at the grid nodes."""
    if grid.dim == 1:
        vals = fn(grid.nodes[:, 0])
    else:
        vals = fn(grid.nodes[:, 0], grid.nodes[:, 1])
    return ScalarField(np.broadcast_to(np.asarray(vals, float), (grid.n_nodes,)).copy(), grid)


# ---------------------------------------------------------------------------
# flat text serialization: header + one node record per line


def write_grid_field(fh, grid: Grid, field_values=None):
    d = grid.domain
    if d.kind == INTERVAL:
        ext = f"{d.bounds[0]:.17g},{d.bounds[1]:.17g}"
        res = grid.shape[0] - 1
    elif d.kind == RECTANGLE:
        (ax, bx), (ay, by) = d.bounds
        ext = f"{ax:.17g},{bx:.17g},{ay:.17g},{by:.17g}"
        res = grid.shape[0] - 1
    else:
        ext = f"{d.bounds[0]:.17g}"
        res = grid.shape[0]
    fh.write(f"kind {d.kind}\n")
    fh.write(f"extents {ext}\n")
    fh.write(f"resolution {res}\n")
    fh.write(f"margin {d.margin:.17g}\n")
    fh.write(f"nodes {grid.n_nodes}\n")
    vals = None if field_values is None else np.asarray(field_values, float)
    for i in range(grid.n_nodes):
        coords = ",".join(f"{c:.17g}" for c in grid.nodes[i])
        rec = (f"{coords} {grid.weights[i]:.17g} "
               f"{int(grid.boundary_mask[i])} {int(grid.inner_mask[i])}")
        if vals is not None:
            rec += f" {vals[i]:.17g}"
        fh.write(rec + "\n")


def read_grid_field(fh):
    """Rebuild (grid, values-or-None) from the flat text format."""
    header = {}
    for _ in range(5):
        key, _, val = fh.readline().strip().partition(" ")
        header[key] = val
    kind = header["kind"]
    ext = [float(t) for t in header["extents"].split(",")]
    res = int(header["resolution"])
    margin = float(header["margin"])
    n = int(header["nodes"])
    if kind == INTERVAL:
        extents = (ext[0], ext[1])
    elif kind == RECTANGLE:
        extents = ((ext[0], ext[1]), (ext[2], ext[3]))
    else:
        extents = ext[0]
    _, grid = build_domain(kind, extents, res, margin)
    if grid.n_nodes != n:
        raise DomainError("node count mismatch while reading grid file")
    values = np.empty(n)
    has_values = True
    for i in range(n):
        parts = fh.readline().split()
        if len(parts) < 4:
            raise DomainError("truncated grid file")
        if len(parts) >= 5:
            values[i] = float(parts[4])
        else:
            has_values = False
    return grid, (values if has_values else None)


def grid_to_text(grid: Grid, field_values=None) -> str:
    buf = io.StringIO()
    write_grid_field(buf, grid, field_values)
    return buf.getvalue()
