"""Centered finite-difference stencils on the structured grids.

These are deliberately independent of the flux-form operator assembly in
``spectral``: they provide the second route for product-rule checks,
finite-difference Sobolev norms, gradient floors and C1/C2 surrogates.
Centered differences are used wherever both lattice neighbors exist,
one-sided differences at lattice edges.
"""

from __future__ import annotations

import numpy as np

from .domain import Grid, ScalarField, check_same_grid


def _neighbor_values(grid: Grid, values: np.ndarray, axis: int):
    """(minus, plus, has_minus, has_plus) neighbor value arrays along axis."""
    nb = grid.neighbor_table()
    minus_idx = nb[axis, 0]
    plus_idx = nb[axis, 1]
    has_minus = minus_idx >= 0
    has_plus = plus_idx >= 0
    vm = np.where(has_minus, values[np.clip(minus_idx, 0, None)], 0.0)
    vp = np.where(has_plus, values[np.clip(plus_idx, 0, None)], 0.0)
    return vm, vp, has_minus, has_plus


def axis_derivative(grid: Grid, values: np.ndarray, axis: int) -> np.ndarray:
    """First derivative along axis: centered inside, one-sided at edges."""
    h = grid.spacing[axis]
    vm, vp, hm, hp = _neighbor_values(grid, values, axis)
    out = np.zeros_like(values)
    both = hm & hp
    out[both] = (vp[both] - vm[both]) / (2.0 * h)
    only_p = hp & ~hm
    out[only_p] = (vp[only_p] - values[only_p]) / h
    only_m = hm & ~hp
    out[only_m] = (values[only_m] - vm[only_m]) / h
    return out


def axis_second_derivative(grid: Grid, values: np.ndarray, axis: int) -> np.ndarray:
    """Three-point second derivative along axis; nearest interior value is
    copied where the centered stencil does not fit."""
    h = grid.spacing[axis]
    vm, vp, hm, hp = _neighbor_values(grid, values, axis)
    out = np.zeros_like(values)
    both = hm & hp
    out[both] = (vp[both] - 2.0 * values[both] + vm[both]) / (h * h)
    # propagate from the neighbor that exists (flat extension)
    nb = grid.neighbor_table()
    for side, has in ((1, hp & ~hm), (0, hm & ~hp)):
        src = nb[axis, side][has]
        out[has] = out[src]
    return out


def centered_mask(grid: Grid, order: int = 1) -> np.ndarray:
    """Nodes whose full centered stencil (all axes) exists."""
    nb = grid.neighbor_table()
    ok = np.ones(grid.n_nodes, dtype=bool)
    for axis in range(grid.dim):
        ok &= (nb[axis, 0] >= 0) & (nb[axis, 1] >= 0)
    return ok


def gradient(grid: Grid, values: np.ndarray) -> np.ndarray:
    """(d, N) array of first derivatives."""
    return np.stack([axis_derivative(grid, values, a) for a in range(grid.dim)])


def gradient_sq(grid: Grid, values: np.ndarray) -> np.ndarray:
    g = gradient(grid, values)
    return (g * g).sum(axis=0)


def laplacian(grid: Grid, values: np.ndarray) -> np.ndarray:
    return sum(axis_second_derivative(grid, values, a) for a in range(grid.dim))


def divergence(grid: Grid, components) -> np.ndarray:
    """Divergence of a vector field given per-axis component value arrays."""
    if len(components) != grid.dim:
        raise ValueError("component count does not match grid dimension")
    return sum(axis_derivative(grid, np.asarray(c, float), a)
               for a, c in enumerate(components))


def second_differences(grid: Grid, values: np.ndarray) -> list:
    """All second-order stencils D_a D_b (a <= b) as value arrays."""
    out = []
    for a in range(grid.dim):
        out.append(axis_second_derivative(grid, values, a))
    for a in range(grid.dim):
        for b in range(a + 1, grid.dim):
            out.append(axis_derivative(grid, axis_derivative(grid, values, a), b))
    return out


def sup_second_difference(grid: Grid, values: np.ndarray, mask=None) -> float:
    """Sup norm of all second differences, optionally over a node mask."""
    mask = slice(None) if mask is None else mask
    return max(float(np.abs(d[mask]).max()) for d in second_differences(grid, values))


def fd_sobolev_norm(u: ScalarField, k: int) -> float:
    """Finite-difference H^k norm (k in {1, 2}) with quadrature weights."""
    if k not in (1, 2):
        raise ValueError("finite-difference Sobolev norm implemented for k in {1, 2}")
    grid = u.grid
    w = grid.weights
    total = float(np.dot(u.values ** 2, w))
    for a in range(grid.dim):
        da = axis_derivative(grid, u.values, a)
        total += float(np.dot(da * da, w))
    if k == 2:
        for d2 in second_differences(grid, u.values):
            total += float(np.dot(d2 * d2, w))
    return float(np.sqrt(total))


def c1_norm(u: ScalarField, mask=None) -> float:
    """Discrete C1 norm sup(|u| + |grad u|) over a node mask."""
    grid = u.grid
    mask = slice(None) if mask is None else mask
    mag = np.abs(u.values) + np.sqrt(gradient_sq(grid, u.values))
    return float(mag[mask].max())
