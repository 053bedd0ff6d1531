"""Periodic unit-cell grid, Q4 element stiffness and the ersatz density map.

Nodes are numbered row by row, ``node = j * (nelx + 1) + i`` with ``i`` the
x-index and ``j`` the y-index, so a nodal array reshaped to
``(nely + 1, nelx + 1)`` is a row-major picture of the cell (row 0 at y = 0).
Elements follow the same convention with ``e = ey * nelx + ex``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from microcell.rbf_levelset import HeavisideParams, heaviside


@dataclass(frozen=True)
class CellGrid:
    """Uniform lattice of bilinear quadrilaterals covering the unit cell."""

    nelx: int
    nely: int
    width: float = 1.0
    height: float = 1.0

    def __post_init__(self):
        if int(self.nelx) != self.nelx or int(self.nely) != self.nely:
            raise ValueError("element counts must be integers")
        if self.nelx < 2 or self.nely < 2:
            raise ValueError(f"need at least 2x2 elements, got {self.nelx}x{self.nely}")
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"cell dimensions must be positive, got {self.width}x{self.height}")

    @property
    def hx(self) -> float:
        return self.width / self.nelx

    @property
    def hy(self) -> float:
        return self.height / self.nely

    @property
    def area(self) -> float:
        """Cell measure |Y|."""
        return self.width * self.height

    @property
    def element_area(self) -> float:
        return self.hx * self.hy

    @property
    def n_nodes(self) -> int:
        return (self.nelx + 1) * (self.nely + 1)

    @property
    def n_elements(self) -> int:
        return self.nelx * self.nely

    @property
    def node_shape(self) -> tuple[int, int]:
        return (self.nely + 1, self.nelx + 1)

    @property
    def element_shape(self) -> tuple[int, int]:
        return (self.nely, self.nelx)

    @cached_property
    def node_coords(self) -> np.ndarray:
        x = np.linspace(0.0, self.width, self.nelx + 1)
        y = np.linspace(0.0, self.height, self.nely + 1)
        xx, yy = np.meshgrid(x, y)
        return np.column_stack([xx.ravel(), yy.ravel()])

    @cached_property
    def connectivity(self) -> np.ndarray:
        """(n_elements, 4) node ids, counterclockwise from the lower-left corner."""
        ex, ey = np.meshgrid(np.arange(self.nelx), np.arange(self.nely))
        n0 = (ey * (self.nelx + 1) + ex).ravel()
        return np.column_stack([n0, n0 + 1, n0 + self.nelx + 2, n0 + self.nelx + 1])

    @cached_property
    def edof(self) -> np.ndarray:
        """(n_elements, 8) DOF ids ordered (u0, v0, u1, v1, ...)."""
        conn = self.connectivity
        out = np.empty((self.n_elements, 8), dtype=np.int64)
        out[:, 0::2] = 2 * conn
        out[:, 1::2] = 2 * conn + 1
        return out

    @cached_property
    def nodal_weights(self) -> np.ndarray:
        """Quarter element area per adjacent element, summed at each node."""
        w = np.zeros(self.n_nodes)
        np.add.at(w, self.connectivity.ravel(), 0.25 * self.element_area)
        return w


def build_grid(nelx: int, nely: int, width: float = 1.0, height: float = 1.0) -> CellGrid:
    return CellGrid(nelx, nely, width, height)


@dataclass(frozen=True)
class MaterialSpec:
    """Isotropic solid phase plus a weak void phase."""

    E_solid: float = 1.0
    E_void: float = 0.001
    nu: float = 0.3
    plane_strain: bool = False
    penalty: float = 1.0

    def __post_init__(self):
        if not (self.E_solid > self.E_void > 0):
            raise ValueError("require E_solid > E_void > 0")
        if not self.penalty >= 1:
            raise ValueError(f"penalty exponent must be >= 1, got {self.penalty}")
        if not (0 <= self.nu < 0.5):
            raise ValueError(f"Poisson's ratio must lie in [0, 0.5), got {self.nu}")

    @property
    def eta(self) -> float:
        """Stiffness floor implied by the void phase."""
        return self.E_void / self.E_solid

    def constitutive(self, E: float = 1.0) -> np.ndarray:
        """3x3 Voigt matrix (11, 22, 12) with engineering shear strain."""
        nu = self.nu
        if self.plane_strain:
            c = E / ((1 + nu) * (1 - 2 * nu))
            return c * np.array([[1 - nu, nu, 0.0], [nu, 1 - nu, 0.0], [0.0, 0.0, (1 - 2 * nu) / 2]])
        c = E / (1 - nu**2)
        return c * np.array([[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, (1 - nu) / 2]])


_GAUSS = np.array([-1.0, 1.0]) / np.sqrt(3.0)
_XI = np.array([-1.0, 1.0, 1.0, -1.0])
_ETA = np.array([-1.0, -1.0, 1.0, 1.0])


def strain_displacement(hx: float, hy: float, xi: float, eta: float) -> np.ndarray:
    """B matrix (3x8) of a rectangular Q4 at natural coordinates (xi, eta)."""
    dn_dxi = 0.25 * _XI * (1 + eta * _ETA)
    dn_deta = 0.25 * _ETA * (1 + xi * _XI)
    dn_dx = dn_dxi * 2.0 / hx
    dn_dy = dn_deta * 2.0 / hy
    B = np.zeros((3, 8))
    B[0, 0::2] = dn_dx
    B[1, 1::2] = dn_dy
    B[2, 0::2] = dn_dy
    B[2, 1::2] = dn_dx
    return B


def base_element_stiffness(mat: MaterialSpec, hx: float, hy: float) -> np.ndarray:
    """Unit-modulus Q4 stiffness from 2x2 Gauss quadrature.

    Thickness is one. Element moduli scale this matrix during assembly.
    """
    if not (hx > 0 and hy > 0):
        raise ValueError("element size must be positive")
    C = mat.constitutive(1.0)
    detJ = hx * hy / 4.0
    k0 = np.zeros((8, 8))
    for xi in _GAUSS:
        for eta in _GAUSS:
            B = strain_displacement(hx, hy, xi, eta)
            k0 += B.T @ C @ B * detJ
    return 0.5 * (k0 + k0.T)


def ersatz_density(phi: np.ndarray, grid: CellGrid, hp: HeavisideParams) -> np.ndarray:
    """Element material fraction: mean of H(phi) over the element's four nodes."""
    phi = np.asarray(phi, dtype=float).ravel()
    if phi.size != grid.n_nodes:
        raise ValueError(f"level set has {phi.size} values, grid has {grid.n_nodes} nodes")
    return heaviside(phi, hp)[grid.connectivity].mean(axis=1)


def element_modulus(rho, mat: MaterialSpec, check: bool = True):
    """Ersatz modulus of an element with material fraction rho.

    With the default ``penalty = 1`` this is the linear rule
    E_e = rho_e * E_solid. Larger exponents interpolate
    E_void + (E_solid - E_void) * s**p with s = (rho - eta) / (1 - eta), which
    keeps both end points and makes partially filled elements softer.
    """
    rho = np.asarray(rho, dtype=float)
    eta = mat.eta
    if check and (np.any(rho < eta - 1e-12) or np.any(rho > 1 + 1e-12)):
        raise ValueError(f"element fraction outside [{eta}, 1]")
    if mat.penalty == 1.0:
        return rho * mat.E_solid
    s = np.clip((rho - eta) / (1.0 - eta), 0.0, 1.0)
    return mat.E_void + (mat.E_solid - mat.E_void) * s**mat.penalty


def element_modulus_derivative(rho, mat: MaterialSpec):
    """d E_e / d rho_e."""
    rho = np.asarray(rho, dtype=float)
    if mat.penalty == 1.0:
        return np.full_like(rho, mat.E_solid)
    eta = mat.eta
    s = np.clip((rho - eta) / (1.0 - eta), 0.0, 1.0)
    return (mat.E_solid - mat.E_void) / (1.0 - eta) * mat.penalty * s ** (mat.penalty - 1)
