"""Discrete Neumann operator -div(f grad), eigenanalysis and semigroup.

The operator is assembled in flux form: every lattice face carries the
average of f at its two nodes, so the stiffness form

    a_f(u, v) = sum_faces f_face * factor * (u_b - u_a)(v_b - v_a)

is symmetric, positive semidefinite, annihilates constants exactly, is
*linear in f*, and encodes the zero-flux boundary condition by simply
having no faces across the boundary.  The generator acting on fields is
L_f u = -W^{-1} A_f u with W the diagonal quadrature weights, so the
eigenproblem A_f e = lambda W e yields the L2(O)-orthonormal eigenpairs
0 = lambda_0 < lambda_1 <= ... used everywhere else in the package.

Degenerate eigenvalue clusters (the square and the disk have a double
first eigenvalue) are detected with a relative threshold and their basis
is canonicalized by weighted Gram-Schmidt against coordinate-moment
functionals, making every downstream audit reproducible.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse

from .domain import (Grid, ScalarField, check_same_grid, constant_field,
                     l2_inner, l2_norm)

CLUSTER_RTOL = 1e-6          # |l_i - l_j| <= CLUSTER_RTOL*(1+l_i) groups modes
SOBOLEV_S_MAX = 6.0
TAIL_ENERGY_LIMIT = 1e-2     # spectral norms refuse fields with >1% unresolved energy


class SpectralError(ValueError):
    """Assembly or eigensolve contract violation."""


class TruncationError(SpectralError):
    """Requested operation needs more resolved modes than available."""


# ---------------------------------------------------------------------------
# diffusivity fields


@dataclass(frozen=True)
class DiffusivityField:
    """Positive scalar coefficient of the divergence-form operator."""

    field: ScalarField
    f_min: float
    sup_norm: float
    agrees_with_reference_off_inner: bool = False

    @property
    def grid(self):
        return self.field.grid

    @property
    def values(self):
        return self.field.values


def diffusivity_field(f: ScalarField, f_min=None, reference=None) -> DiffusivityField:
    """Wrap a positive field, recording its lower bound and whether it
    coincides with ``reference`` outside the inner region."""
    vmin = float(f.values.min())
    if vmin <= 0:
        raise SpectralError(f"diffusivity must be positive, found min {vmin}")
    if f_min is None:
        f_min = vmin
    if vmin < float(f_min):
        raise SpectralError(f"diffusivity drops to {vmin}, below declared bound {f_min}")
    agrees = False
    if reference is not None:
        ref = reference.field if isinstance(reference, DiffusivityField) else reference
        check_same_grid(f, ref)
        outside = ~f.grid.inner_mask
        agrees = bool(np.array_equal(f.values[outside], ref.values[outside]))
    return DiffusivityField(f, float(f_min), float(np.abs(f.values).max()), agrees)


def _coeff_values(f):
    if isinstance(f, DiffusivityField):
        return f.field.values, f.grid
    if isinstance(f, ScalarField):
        return f.values, f.grid
    raise TypeError("expected a ScalarField or DiffusivityField")


# ---------------------------------------------------------------------------
# assembly


def stiffness_matrix(coeff, grid: Grid = None) -> scipy.sparse.csr_matrix:
    """Flux-form stiffness matrix A for the coefficient field.

    A is symmetric with vanishing row sums; the (positive) operator
    -div(coeff grad) acts on node vectors as W^{-1} A.  The coefficient may
    change sign (transport audits rely on that); turning a sign-changing
    field into a generator is the caller's responsibility.
    """
    vals, g = _coeff_values(coeff) if grid is None else (np.asarray(coeff, float), grid)
    fa, fb, factor = g.faces()
    cf = 0.5 * (vals[fa] + vals[fb]) * factor
    n = g.n_nodes
    rows = np.concatenate([fa, fb, fa, fb])
    cols = np.concatenate([fa, fb, fb, fa])
    data = np.concatenate([cf, cf, -cf, -cf])
    A = scipy.sparse.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    return A


def assemble_neumann(f: DiffusivityField) -> scipy.sparse.csr_matrix:
    """Stiffness matrix of -div(f grad) for a valid (positive) diffusivity."""
    if not isinstance(f, DiffusivityField):
        f = diffusivity_field(f)
    return stiffness_matrix(f)


def apply_neumann(f, u: ScalarField) -> ScalarField:
    """Apply the positive operator -div(f grad) to a field."""
    vals, g = _coeff_values(f)
    check_same_grid(u, g)
    A = stiffness_matrix(vals, g)
    return ScalarField((A @ u.values) / g.weights, g)


def divergence_form_apply(h, u: ScalarField) -> ScalarField:
    """Apply div(h grad .) to u in flux form; h may change sign."""
    vals, g = _coeff_values(h)
    check_same_grid(u, g)
    A = stiffness_matrix(vals, g)
    return ScalarField(-(A @ u.values) / g.weights, g)


# ---------------------------------------------------------------------------
# eigensystem


@dataclass(frozen=True)
class EigenSystem:
    """Ordered eigenpairs of the discrete Neumann operator for one f.

    ``modes`` holds the eigenfields row-wise ((count, N) array), orthonormal
    in the quadrature inner product; eigenvalue 0 with the constant mode is
    always index 0.
    """

    eigenvalues: np.ndarray
    modes: np.ndarray = field(repr=False)
    grid: Grid = field(repr=False)
    count: int
    f_hash: str

    def field(self, k: int) -> ScalarField:
        return ScalarField(self.modes[k], self.grid)

    def coefficients(self, g: ScalarField) -> np.ndarray:
        """Spectral coefficients <g, e_k> for all resolved modes."""
        check_same_grid(g, self.grid)
        return self.modes @ (self.grid.weights * g.values)

    def synthesize(self, coeffs) -> ScalarField:
        return ScalarField(np.asarray(coeffs, float) @ self.modes, self.grid)


def _field_hash(values) -> str:
    return hashlib.sha256(np.ascontiguousarray(values, dtype=float).tobytes()).hexdigest()[:16]


def default_mode_limit(grid: Grid) -> int:
    """Default resolved-mode budget: (cells_per_axis / 4) per axis."""
    per_axis = min(s - 1 if grid.domain.kind != "disk" else s for s in grid.shape)
    return max(4, (per_axis // 4) ** grid.dim)


def eigensolve(f, J: int, enforce_limit: bool = True) -> EigenSystem:
    """Solve for the lowest J eigenpairs of -div(f grad) with Neumann walls.

    The whitened dense symmetric problem is solved with LAPACK; J may be
    trimmed by a few modes so that a degenerate cluster is never split.
    """
    if not isinstance(f, DiffusivityField):
        f = diffusivity_field(f)
    g = f.grid
    n = g.n_nodes
    J = int(J)
    if J < 1:
        raise SpectralError("need at least one mode")
    if J > n:
        raise SpectralError(f"J={J} exceeds the {n}-node grid")
    if enforce_limit and J > max(default_mode_limit(g), 1):
        raise SpectralError(
            f"J={J} above the resolved budget {default_mode_limit(g)} "
            f"for this grid; pass enforce_limit=False for identity-level work")
    A = stiffness_matrix(f).toarray()
    rootw = np.sqrt(g.weights)
    C = A / rootw[:, None] / rootw[None, :]
    C = 0.5 * (C + C.T)
    want = min(n, J + 8) if J < n else n
    if want >= int(0.6 * n):
        lam, U = scipy.linalg.eigh(C)
        lam, U = lam[:want], U[:, :want]
    else:
        lam, U = scipy.linalg.eigh(C, subset_by_index=(0, want - 1))
    V = U / rootw[:, None]

    # never cut through a near-degenerate cluster
    keep = min(J, want)
    while 0 < keep < want and _same_cluster(lam[keep - 1], lam[keep]):
        keep -= 1
    if keep < 1:
        raise SpectralError("cluster at the truncation point spans the whole request")
    lam = lam[:keep].copy()
    V = V[:, :keep].copy()
    lam[0] = max(lam[0], 0.0)
    V = _canonicalize(g, lam, V)

    es = EigenSystem(_ro(lam), _ro(V.T), g, keep, _field_hash(f.field.values))
    _validate_eigensystem(es)
    return es


def _same_cluster(a, b):
    return abs(b - a) <= CLUSTER_RTOL * (1.0 + abs(a))


def eigen_clusters(eigenvalues) -> list:
    """Group mode indices into near-degenerate clusters."""
    groups = [[0]]
    for i in range(1, len(eigenvalues)):
        if _same_cluster(eigenvalues[i - 1], eigenvalues[i]):
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def _moment_fields(grid: Grid, count):
    """Coordinate-moment functionals used to fix degenerate-cluster bases."""
    x = grid.nodes
    if grid.dim == 1:
        gens = [x[:, 0] ** p for p in range(1, count + 3)]
    else:
        gens = []
        deg = 1
        while len(gens) < count + 4:
            for px in range(deg, -1, -1):
                gens.append(x[:, 0] ** px * x[:, 1] ** (deg - px))
            deg += 1
    return gens


def _canonicalize(grid: Grid, lam, V):
    """Deterministic basis inside each cluster + sign normalization."""
    w = grid.weights
    for cluster in eigen_clusters(lam):
        if len(cluster) > 1:
            idx = np.asarray(cluster)
            block = V[:, idx]
            a = len(cluster)
            moments = _moment_fields(grid, a)
            basis = []
            for mu in moments:
                c = block.T @ (w * mu)
                for b in basis:
                    c = c - np.dot(b, c) * b
                nrm = np.linalg.norm(c)
                if nrm > 1e-8 * np.sqrt(float(np.dot(mu, w * mu))):
                    basis.append(c / nrm)
                if len(basis) == a:
                    break
            if len(basis) == a:
                V[:, idx] = block @ np.column_stack(basis)
    rootw = np.sqrt(w)
    for k in range(V.shape[1]):
        s = V[:, k] * rootw
        big = np.abs(s) > 1e-10 * np.abs(s).max()
        first = int(np.argmax(big))
        if s[first] < 0:
            V[:, k] = -V[:, k]
    return V


def _ro(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _validate_eigensystem(es: EigenSystem):
    lam = es.eigenvalues
    if np.any(np.diff(lam) < -1e-9 * (1.0 + np.abs(lam[:-1]))):
        raise SpectralError("eigenvalues not nondecreasing")
    if es.count > 1:
        if lam[0] > 1e-8 * lam[1]:
            raise SpectralError(f"zero mode not resolved: l0={lam[0]}, l1={lam[1]}")
        e0 = es.modes[0]
        dev = np.abs(e0 - e0.mean()).max() / abs(e0.mean())
        if dev > 1e-6:
            raise SpectralError(f"constant mode deviates by {dev}")
    gram = es.modes @ (es.grid.weights[:, None] * es.modes.T)
    err = np.abs(gram - np.eye(es.count)).max()
    if err > 1e-8:
        raise SpectralError(f"eigenfield Gram defect {err}")


# ---------------------------------------------------------------------------
# audits and norms


def weyl_audit(es: EigenSystem) -> dict:
    """lambda_k * k^(-2/d) over the nonzero modes, with its min/max band."""
    if es.count < 11:
        raise SpectralError("Weyl audit needs at least 10 nonzero modes")
    d = es.grid.dim
    ks = np.arange(1, es.count)
    ratios = es.eigenvalues[1:] * ks.astype(float) ** (-2.0 / d)
    return {"k": ks, "ratio": ratios,
            "min": float(ratios.min()), "max": float(ratios.max())}


def bar_sobolev_norm(g: ScalarField, es: EigenSystem, s: float) -> float:
    """Spectral Sobolev norm sqrt(sum_j lambda_j^s <g, e_j>^2), j >= 1.

    g must be mean zero (projected with a warning if it is not); fails if
    more than 1% of the field's energy lies beyond the resolved modes.
    """
    if not (-2.0 <= s <= SOBOLEV_S_MAX):
        raise SpectralError(f"Sobolev exponent {s} outside [-2, {SOBOLEV_S_MAX}]")
    c = es.coefficients(g)
    nrm = l2_norm(g)
    if nrm == 0.0:
        return 0.0
    if abs(c[0]) > 1e-8 * nrm:
        warnings.warn("field is not mean zero; projecting onto the mean-zero space")
    energy = nrm * nrm - c[0] ** 2
    captured = float(np.dot(c[1:], c[1:]))
    if energy > 0 and energy - captured > TAIL_ENERGY_LIMIT * energy:
        raise TruncationError(
            f"unresolved tail energy {(energy - captured) / energy:.3%} exceeds 1%")
    lam = es.eigenvalues[1:]
    return float(np.sqrt(np.sum(lam ** s * c[1:] ** 2)))


# ---------------------------------------------------------------------------
# semigroup and transition density


@dataclass(frozen=True)
class SemigroupOperator:
    """Spectral heat semigroup exp(t L_f) truncated to the resolved modes."""

    time: float
    eigen: EigenSystem
    truncation: int

    def __post_init__(self):
        if self.time < 0:
            raise SpectralError("semigroup time must be nonnegative")
        if not (1 <= self.truncation <= self.eigen.count):
            raise SpectralError("truncation outside the resolved mode range")

    @property
    def coefficients(self):
        return np.exp(-self.time * self.eigen.eigenvalues[:self.truncation])


def semigroup(es: EigenSystem, t: float, truncation=None) -> SemigroupOperator:
    return SemigroupOperator(float(t), es, es.count if truncation is None else int(truncation))


def semigroup_apply(op: SemigroupOperator, phi: ScalarField) -> ScalarField:
    """sum_k exp(-t lambda_k) <e_k, phi> e_k over the truncated modes."""
    es = op.eigen
    c = es.coefficients(phi)[:op.truncation]
    return es.synthesize(op.coefficients * c)


@dataclass(frozen=True)
class TransitionDensity:
    """Node x node table of p_t(x, y); rows integrate to one."""

    matrix: np.ndarray = field(repr=False)
    time: float
    clipped_mass: float
    eigen: EigenSystem = field(repr=False)


def spectral_tail_bound(es: EigenSystem, t: float) -> float:
    """Upper bound on sum_{k >= count} exp(-t lambda_k) assuming the
    eigenvalues keep growing at the observed k^(2/d) rate."""
    J = es.count
    lamJ = es.eigenvalues[-1]
    d = es.grid.dim
    total, k = 0.0, 0
    while True:
        ks = np.arange(J + k, J + k + 512, dtype=float)
        terms = np.exp(-t * lamJ * (ks / J) ** (2.0 / d))
        total += float(terms.sum())
        if terms[-1] < 1e-24 or total > 1.0:
            return total
        k += 512


def transition_density(es: EigenSystem, t: float) -> TransitionDensity:
    """Spectral kernel p_t(x,y) = sum_k exp(-t lambda_k) e_k(x) e_k(y)."""
    if t <= 0:
        raise SpectralError("transition density requires t > 0")
    tail = spectral_tail_bound(es, t)
    if tail > 1e-6:
        raise TruncationError(
            f"spectral tail {tail:.2e} above 1e-6: demand larger J or t")
    decay = np.exp(-t * es.eigenvalues)
    P = (es.modes.T * decay) @ es.modes
    w = es.grid.weights
    rowsum = P @ w
    if np.abs(rowsum - 1.0).max() > 1e-4:
        raise SpectralError("transition density rows do not integrate to one")
    neg = np.minimum(P, 0.0)
    clipped = float(-(w @ neg @ w) / es.grid.domain.volume)
    if clipped > 0:
        P = np.maximum(P, 0.0)
    return TransitionDensity(_ro(P), float(t), clipped, es)


# ---------------------------------------------------------------------------
# norm equivalence audit


def norm_equivalence_audit(es: EigenSystem, samples, orders=(1, 2),
                           require_inner: bool = True) -> dict:
    """Ratio statistics of the spectral H^k norm against the
    finite-difference H^k norm over sample fields."""
    from .stencil import fd_sobolev_norm

    out = {}
    ratios = {k: [] for k in orders}
    for g in samples:
        if require_inner:
            outside = ~g.grid.inner_mask
            if np.abs(g.values[outside]).max() > 1e-12 * (np.abs(g.values).max() + 1e-300):
                raise SpectralError("audit sample not supported in the inner region")
        for k in orders:
            bar = bar_sobolev_norm(g, es, float(k))
            fd = fd_sobolev_norm(g, k)
            ratios[k].append(bar / fd)
    for k in orders:
        arr = np.asarray(ratios[k])
        out[k] = {"ratios": arr, "min": float(arr.min()), "max": float(arr.max())}
    return out
