"""Level set parameterization on Wendland C2 kernels.

The level set is ``phi = A @ alpha`` where ``A[n, i]`` is the compactly
supported kernel of knot ``i`` evaluated at node ``n``. Knots sit on the FE
node lattice, so ``A`` is square, symmetric and positive definite.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

if TYPE_CHECKING:
    from microcell.cell_mesh import CellGrid


class InterpolationError(RuntimeError):
    """Raised when the kernel system cannot be solved to tolerance."""


def wendland_c2(r):
    """(1 - r)^4 (4r + 1) on [0, 1), zero beyond."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("kernel radius must be non-negative")
    s = np.clip(1.0 - r, 0.0, None)
    out = s**4 * (4.0 * r + 1.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class KnotSet:
    positions: np.ndarray
    support_radius: float

    @property
    def n_knots(self) -> int:
        return len(self.positions)


def default_support_radius(grid: CellGrid) -> float:
    return 3.0 * max(grid.hx, grid.hy)


def grid_knots(grid: CellGrid, support_radius: float | None = None) -> KnotSet:
    """Knots coincident with the FE nodes."""
    d = default_support_radius(grid) if support_radius is None else float(support_radius)
    if d <= max(grid.hx, grid.hy):
        raise ValueError(f"support radius {d} must exceed the element size")
    return KnotSet(grid.node_coords.copy(), d)


def build_interpolation(knots: KnotSet, grid: CellGrid) -> sp.csr_matrix:
    """Sparse kernel matrix A[node, knot]."""
    d = knots.support_radius
    if not d > 0:
        raise ValueError("support radius must be positive")
    nodes = grid.node_coords
    if nodes.shape != knots.positions.shape or not np.allclose(nodes, knots.positions):
        raise ValueError("knots must coincide with the grid nodes")
    tree = cKDTree(nodes)
    pairs = tree.query_pairs(d, output_type="ndarray")
    dist = np.linalg.norm(nodes[pairs[:, 0]] - nodes[pairs[:, 1]], axis=1)
    keep = dist < d * (1.0 - 1e-12)          # pairs at exactly d only differ by round-off
    pairs, vals = pairs[keep], wendland_c2(dist[keep] / d)
    n = len(nodes)
    diag = np.arange(n)
    rows = np.concatenate([diag, pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([diag, pairs[:, 1], pairs[:, 0]])
    data = np.concatenate([np.ones(n), vals, vals])
    A = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    A.sort_indices()
    return A


def evaluate_lsf(A: sp.spmatrix, alpha: np.ndarray) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float).ravel()
    if alpha.size != A.shape[1]:
        raise ValueError(f"expected {A.shape[1]} coefficients, got {alpha.size}")
    return A @ alpha


def fit_coefficients(A: sp.spmatrix, phi0: np.ndarray, rtol: float = 1e-8) -> np.ndarray:
    """Solve A alpha = phi0 for the expansion coefficients."""
    phi0 = np.asarray(phi0, dtype=float).ravel()
    if phi0.size != A.shape[0]:
        raise ValueError(f"expected {A.shape[0]} nodal values, got {phi0.size}")
    norm = np.linalg.norm(phi0)
    if norm == 0.0:
        return np.zeros(A.shape[1])
    try:
        lu = spla.splu(sp.csc_matrix(A))
    except RuntimeError as exc:
        raise InterpolationError(f"kernel matrix is singular: {exc}") from exc
    alpha = lu.solve(phi0)
    res = np.linalg.norm(A @ alpha - phi0) / norm
    if not res <= rtol:
        inv = spla.LinearOperator(A.shape, matvec=lu.solve, rmatvec=lambda v: lu.solve(v, trans="T"))
        cond = spla.onenormest(sp.csc_matrix(A)) * spla.onenormest(inv)
        raise InterpolationError(f"relative residual {res:.3e} > {rtol:.1e} (1-norm condition ~{cond:.3e})")
    return alpha


@dataclass(frozen=True)
class HeavisideParams:
    eta: float = 0.001
    delta: float = 0.006

    def __post_init__(self):
        if not 0 < self.eta < 1:
            raise ValueError(f"eta must lie in (0, 1), got {self.eta}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")


def default_bandwidth(grid: CellGrid) -> float:
    return 0.6 * max(grid.hx, grid.hy)


def heaviside(phi, hp: HeavisideParams):
    """Smoothed characteristic function with floor eta and half-width delta."""
    phi = np.asarray(phi, dtype=float)
    s = np.clip(phi / hp.delta, -1.0, 1.0)
    out = 0.75 * (1.0 - hp.eta) * (s - s**3 / 3.0) + 0.5 * (1.0 + hp.eta)
    return out if out.ndim else float(out)


def dirac(phi, hp: HeavisideParams):
    """Derivative of :func:`heaviside` with respect to phi."""
    phi = np.asarray(phi, dtype=float)
    s = phi / hp.delta
    out = np.where(np.abs(s) <= 1.0, 0.75 * (1.0 - hp.eta) / hp.delta * (1.0 - s**2), 0.0)
    return out if out.ndim else float(out)


# Hole layouts, in fractions of the cell size: (cx, cy, radius).
_R = 0.35 / 3


def _lattice(n: int, r: float) -> list[tuple[float, float, float]]:
    return [((i + 0.5) / n, (j + 0.5) / n, r) for j in range(n) for i in range(n)]


_INTERIOR_3X3 = _lattice(3, _R)
_BOUNDARY = [
    (0.5, 0.0, _R), (0.5, 1.0, _R), (0.0, 0.5, _R), (1.0, 0.5, _R),
    (0.0, 0.0, _R), (1.0, 0.0, _R), (0.0, 1.0, _R), (1.0, 1.0, _R),
]

HOLE_LAYOUTS: dict[str, list[tuple[float, float, float]]] = {
    "interior_3x3": _INTERIOR_3X3,
    "boundary_holes": _BOUNDARY,
    "combined": _INTERIOR_3X3 + _BOUNDARY,
    # orthotropic starts (x and y mirror symmetric)
    "npr_case1": _lattice(4, 0.09) + [(0.5, 0.0, 0.1), (0.5, 1.0, 0.1)],
    "npr_case2": [(0.25, 0.5, 0.15), (0.75, 0.5, 0.15), (0.5, 0.2, 0.08), (0.5, 0.8, 0.08),
                  (0.0, 0.0, 0.12), (1.0, 0.0, 0.12), (0.0, 1.0, 0.12), (1.0, 1.0, 0.12)],
    "npr_case3": _INTERIOR_3X3 + [(0.0, 0.5, _R), (1.0, 0.5, _R)],
    # isotropic starts (square and diagonal symmetric)
    "npr_case4": _lattice(4, 0.09) + [(0.5, 0.5, 0.06)],
    "npr_case5": _INTERIOR_3X3 + [(0.0, 0.0, 0.08), (1.0, 0.0, 0.08), (0.0, 1.0, 0.08), (1.0, 1.0, 0.08)],
    "npr_case6": [(0.5, 0.5, 0.18), (0.0, 0.0, 0.18), (1.0, 0.0, 0.18), (0.0, 1.0, 0.18), (1.0, 1.0, 0.18),
                  (0.5, 0.0, 0.08), (0.5, 1.0, 0.08), (0.0, 0.5, 0.08), (1.0, 0.5, 0.08)],
}

PATTERNS = ("full_solid",) + tuple(HOLE_LAYOUTS)

# full_solid level in units of delta: inside the band so sensitivities are
# nonzero, yet H(phi) rounds to one.
FULL_SOLID_LEVEL = 0.999


def initial_design(pattern: str, grid: CellGrid, hp: HeavisideParams,
                   holes: list[tuple[float, float, float]] | None = None,
                   clamp: float | None = None) -> np.ndarray:
    """Nodal level set of a starting design.

    Holed patterns use the signed distance to the union of circular holes
    (negative inside), optionally clamped to +-``clamp`` delta. ``full_solid``
    is a uniform field at the top of the Heaviside band so that every node
    starts with a nonzero shape sensitivity while the cell is solid to
    round-off. ``holes`` overrides the layout of a holed pattern.
    """
    if pattern == "full_solid":
        return np.full(grid.n_nodes, FULL_SOLID_LEVEL * hp.delta)
    if pattern not in HOLE_LAYOUTS:
        raise ValueError(f"unknown initial design {pattern!r}; choose from {', '.join(PATTERNS)}")
    layout = HOLE_LAYOUTS[pattern] if holes is None else holes
    xy = grid.node_coords
    scale = np.array([grid.width, grid.height])
    dist = np.full(len(xy), np.inf)
    for cx, cy, r in layout:
        c = np.array([cx, cy]) * scale
        dist = np.minimum(dist, np.linalg.norm(xy - c, axis=1) - r * grid.width)
    if clamp is None:
        return dist
    return np.clip(dist, -clamp * hp.delta, clamp * hp.delta)


SYMMETRY_KINDS = ("none", "orthotropic", "isotropic")


@dataclass(frozen=True)
class SymmetrySpec:
    """Mirror symmetry of the knot lattice, stored as an orbit label per knot."""

    kind: str
    orbit: np.ndarray = field(repr=False)

    @property
    def n_orbits(self) -> int:
        return int(self.orbit.max()) + 1


def symmetry_spec(kind: str, grid: CellGrid) -> SymmetrySpec:
    if kind not in SYMMETRY_KINDS:
        raise ValueError(f"unknown symmetry {kind!r}; choose from {', '.join(SYMMETRY_KINDS)}")
    nx = grid.nelx + 1
    j, i = np.divmod(np.arange(grid.n_nodes), nx)
    images = [(i, j)]
    if kind in ("orthotropic", "isotropic"):
        images += [(grid.nelx - i, j), (i, grid.nely - j), (grid.nelx - i, grid.nely - j)]
    if kind == "isotropic":
        if grid.nelx != grid.nely or not np.isclose(grid.width, grid.height):
            raise ValueError("isotropic symmetry needs a square cell and mesh")
        images += [(b, a) for a, b in images]
    rep = np.min(np.stack([jj * nx + ii for ii, jj in images]), axis=0)
    _, orbit = np.unique(rep, return_inverse=True)
    return SymmetrySpec(kind, orbit.ravel())


def symmetrize(vec: np.ndarray, sym: SymmetrySpec) -> np.ndarray:
    """Replace every entry by the mean over its symmetry orbit."""
    vec = np.asarray(vec, dtype=float).ravel()
    if vec.size != sym.orbit.size:
        raise ValueError(f"symmetry map covers {sym.orbit.size} knots, got {vec.size} values")
    if sym.kind == "none":
        return vec.copy()
    sums = np.bincount(sym.orbit, weights=vec)
    counts = np.bincount(sym.orbit)
    return (sums / counts)[sym.orbit]
