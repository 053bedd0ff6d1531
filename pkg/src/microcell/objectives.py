"""Objectives over the homogenized tensor and their coefficient sensitivities.

Tensor entries use Voigt indices 0, 1, 2 for 11, 22, 12, so ``EH[0, 1]`` is
E_1122 and ``EH[2, 2]`` is E_1212.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from microcell.cell_mesh import CellGrid, MaterialSpec, element_modulus_derivative
from microcell.ebhm import InducedDisplacementSet, element_energies
from microcell.rbf_levelset import HeavisideParams, dirac, heaviside

OBJECTIVE_KINDS = ("bulk", "shear", "weighted", "npr")


def bulk_modulus(EH) -> float:
    EH = np.asarray(EH)
    return float(EH[0, 0] + EH[0, 1] + EH[1, 0] + EH[1, 1]) / 4.0


def shear_modulus(EH) -> float:
    return float(np.asarray(EH)[2, 2])


def poisson_ratios(EH) -> tuple[float, float]:
    """Stiffness-ratio Poisson's ratios (E_1122 / E_1111, E_1122 / E_2222)."""
    EH = np.asarray(EH)
    if EH[0, 0] == 0 or EH[1, 1] == 0:
        raise ZeroDivisionError("Poisson's ratio undefined for a zero normal stiffness")
    return float(EH[0, 1] / EH[0, 0]), float(EH[0, 1] / EH[1, 1])


@dataclass(frozen=True)
class ObjectiveSpec:
    """Which combination of tensor entries is maximized.

    ``npr_coupling`` picks the entry penalized by the auxetic objective:
    ``"1122"`` (default) or ``"1212"``.
    """

    kind: str = "bulk"
    omega1: float = 0.5
    omega2: float = 0.5
    beta: float = 0.03
    npr_coupling: str = "1122"

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ValueError(f"unknown objective {self.kind!r}; choose from {', '.join(OBJECTIVE_KINDS)}")
        if self.npr_coupling not in ("1122", "1212"):
            raise ValueError(f"npr_coupling must be '1122' or '1212', got {self.npr_coupling!r}")
        w = (self.omega1, self.omega2, self.beta)
        if not all(np.isfinite(w)):
            raise ValueError("objective weights must be finite")
        if self.kind == "weighted":
            total = self.omega1 + self.omega2
            if total <= 0:
                raise ValueError("weights must have a positive sum")
            object.__setattr__(self, "omega1", self.omega1 / total)
            object.__setattr__(self, "omega2", self.omega2 / total)

    @property
    def weights(self) -> np.ndarray:
        """Symmetric 3x3 table W with J = sum(W * EH)."""
        bulk = np.zeros((3, 3))
        bulk[:2, :2] = 0.25
        shear = np.zeros((3, 3))
        shear[2, 2] = 1.0
        if self.kind == "bulk":
            return bulk
        if self.kind == "shear":
            return shear
        if self.kind == "weighted":
            return self.omega1 * bulk + self.omega2 * shear
        W = np.diag([self.beta, self.beta, 0.0])
        if self.npr_coupling == "1122":
            W[0, 1] = W[1, 0] = -0.5
        else:
            W[2, 2] = -1.0
        return W


def weighted_objective(EH, spec: ObjectiveSpec) -> float:
    return spec.omega1 * bulk_modulus(EH) + spec.omega2 * shear_modulus(EH)


def npr_objective(EH, spec: ObjectiveSpec) -> float:
    EH = np.asarray(EH)
    coupling = EH[0, 1] if spec.npr_coupling == "1122" else EH[2, 2]
    return float(-coupling + spec.beta * (EH[0, 0] + EH[1, 1]))


def evaluate_objective(EH, spec: ObjectiveSpec) -> float:
    if spec.kind == "bulk":
        return bulk_modulus(EH)
    if spec.kind == "shear":
        return shear_modulus(EH)
    if spec.kind == "weighted":
        return weighted_objective(EH, spec)
    return npr_objective(EH, spec)


def _band_to_knots(nodal: np.ndarray, phi: np.ndarray, A: sp.spmatrix, hp: HeavisideParams) -> np.ndarray:
    # d/d alpha_n of sum_m nodal_m * H(phi_m) = sum_m nodal_m * delta(phi_m) * A[m, n]
    weighted = nodal * dirac(phi, hp)[:, None] if nodal.ndim == 2 else nodal * dirac(phi, hp)
    return A.T @ weighted


def tensor_sensitivity(u: InducedDisplacementSet, A: sp.spmatrix, phi: np.ndarray, hp: HeavisideParams,
                       grid: CellGrid, mat: MaterialSpec, k0: np.ndarray,
                       rho: np.ndarray | None = None) -> np.ndarray:
    """d EH / d alpha, returned as (n_knots, 3, 3).

    ``rho`` is only needed when the ersatz rule is nonlinear.
    """
    phi = np.asarray(phi, dtype=float).ravel()
    if phi.size != grid.n_nodes or A.shape[0] != grid.n_nodes or u.u.shape[0] != 2 * grid.n_nodes:
        raise ValueError("inconsistent field dimensions")
    if mat.penalty == 1.0:
        dE = np.full(grid.n_elements, mat.E_solid)
    else:
        if rho is None:
            raise ValueError("a nonlinear ersatz rule needs the element densities")
        dE = element_modulus_derivative(rho, mat)
    q = element_energies(u, grid, k0).reshape(grid.n_elements, 9) * (dE / grid.area)[:, None]
    conn = grid.connectivity.ravel()
    nodal = np.empty((grid.n_nodes, 9))
    for c in range(9):
        nodal[:, c] = np.bincount(conn, weights=np.repeat(0.25 * q[:, c], 4), minlength=grid.n_nodes)
    return _band_to_knots(nodal, phi, A, hp).reshape(-1, 3, 3)


def volume_and_sensitivity(phi: np.ndarray, A: sp.spmatrix, hp: HeavisideParams,
                           grid: CellGrid) -> tuple[float, np.ndarray]:
    """Material fraction and its gradient with respect to the coefficients."""
    phi = np.asarray(phi, dtype=float).ravel()
    H = heaviside(phi, hp)
    V = float(H @ grid.nodal_weights) / grid.area
    dV = _band_to_knots(grid.nodal_weights / grid.area, phi, A, hp)
    return V, dV


def volume_fraction(phi: np.ndarray, grid: CellGrid, hp: HeavisideParams) -> float:
    return float(heaviside(np.asarray(phi).ravel(), hp) @ grid.nodal_weights) / grid.area


def objective_sensitivity(tensor_sens: np.ndarray, spec: ObjectiveSpec) -> np.ndarray:
    return np.einsum("nab,ab->n", tensor_sens, spec.weights)
