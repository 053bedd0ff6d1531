import numpy as np
import pytest

from microcell.cell_mesh import MaterialSpec, base_element_stiffness, build_grid, ersatz_density
from microcell.ebhm import build_periodic_map, homogenize
from microcell.objectives import (
    ObjectiveSpec,
    bulk_modulus,
    evaluate_objective,
    npr_objective,
    objective_sensitivity,
    poisson_ratios,
    shear_modulus,
    tensor_sensitivity,
    volume_and_sensitivity,
    volume_fraction,
    weighted_objective,
)
from microcell.rbf_levelset import HeavisideParams, build_interpolation, default_bandwidth, fit_coefficients, grid_knots

EH_T1 = np.array([[0.142, 0.046, 0.0], [0.046, 0.142, 0.0], [0.0, 0.0, 0.026]])


def test_moduli_formulas():
    assert bulk_modulus(EH_T1) == pytest.approx(0.094)
    assert shear_modulus(EH_T1) == pytest.approx(0.026)
    n12, n21 = poisson_ratios(EH_T1)
    assert n12 == pytest.approx(0.046 / 0.142) and n21 == pytest.approx(n12)
    with pytest.raises(ZeroDivisionError):
        poisson_ratios(np.zeros((3, 3)))


def test_weighted_normalizes_weights():
    spec = ObjectiveSpec("weighted", 2.0, 2.0)
    assert (spec.omega1, spec.omega2) == (0.5, 0.5)
    assert weighted_objective(EH_T1, spec) == pytest.approx(0.5 * 0.094 + 0.5 * 0.026)


def test_npr_objective_forms():
    EH = np.array([[0.2, -0.1, 0.0], [-0.1, 0.3, 0.0], [0.0, 0.0, 0.05]])
    assert npr_objective(EH, ObjectiveSpec("npr")) == pytest.approx(0.1 + 0.03 * 0.5)
    assert npr_objective(EH, ObjectiveSpec("npr", npr_coupling="1212")) == pytest.approx(-0.05 + 0.03 * 0.5)


@pytest.mark.parametrize("spec", [ObjectiveSpec("bulk"), ObjectiveSpec("shear"), ObjectiveSpec("weighted", 0.3, 0.7),
                                  ObjectiveSpec("npr"), ObjectiveSpec("npr", npr_coupling="1212")])
def test_weight_table_reproduces_objective(spec, rng):
    M = rng.normal(size=(3, 3))
    EH = M + M.T
    assert np.sum(spec.weights * EH) == pytest.approx(evaluate_objective(EH, spec))


@pytest.mark.parametrize("kwargs", [dict(kind="stiff"), dict(kind="npr", npr_coupling="12"),
                                    dict(kind="weighted", omega1=0.0, omega2=0.0), dict(beta=np.nan)])
def test_spec_validation(kwargs):
    with pytest.raises(ValueError):
        ObjectiveSpec(**kwargs)


class Pipeline:
    """alpha -> EH and V through the full discrete chain."""

    def __init__(self, n=10, penalty=1.0, seed=3):
        rng = np.random.default_rng(seed)
        self.grid = build_grid(n, n)
        self.mat = MaterialSpec(penalty=penalty)
        self.hp = HeavisideParams(0.001, default_bandwidth(self.grid))
        self.A = build_interpolation(grid_knots(self.grid), self.grid)
        self.pmap = build_periodic_map(self.grid)
        self.k0 = base_element_stiffness(self.mat, self.grid.hx, self.grid.hy)
        phi0 = rng.uniform(-1.5, 1.5, self.grid.n_nodes) * self.hp.delta
        self.alpha = fit_coefficients(self.A, phi0)

    def tensor(self, alpha):
        rho = ersatz_density(self.A @ alpha, self.grid, self.hp)
        EH, u = homogenize(self.grid, rho, self.mat, self.pmap)
        return EH, u, rho

    def volume(self, alpha):
        return volume_fraction(self.A @ alpha, self.grid, self.hp)


def _largest(a, k=20):
    flat = np.abs(a).ravel()
    return np.argsort(flat)[-k:]


@pytest.fixture(scope="module", params=[1.0, 3.0], ids=["linear", "penalized"])
def pipe(request):
    return Pipeline(penalty=request.param)


@pytest.fixture(scope="module")
def fd_tensor(pipe):
    """Central differences of EH for every coefficient, (n, 3, 3)."""
    h = 1e-6 * np.abs(pipe.alpha).max()
    out = np.empty((pipe.alpha.size, 3, 3))
    for i in range(pipe.alpha.size):
        d = np.zeros_like(pipe.alpha)
        d[i] = h
        out[i] = (pipe.tensor(pipe.alpha + d)[0] - pipe.tensor(pipe.alpha - d)[0]) / (2 * h)
    return out


def test_tensor_sensitivity_matches_fd(pipe, fd_tensor):
    EH, u, rho = pipe.tensor(pipe.alpha)
    dEH = tensor_sensitivity(u, pipe.A, pipe.A @ pipe.alpha, pipe.hp, pipe.grid, pipe.mat, pipe.k0, rho)
    assert dEH.shape == (pipe.alpha.size, 3, 3)
    for a in range(3):
        for b in range(3):
            ref = fd_tensor[:, a, b]
            if np.abs(ref).max() < 1e-8:
                continue
            idx = _largest(ref)
            np.testing.assert_allclose(dEH[idx, a, b], ref[idx], rtol=1e-3)


@pytest.mark.parametrize("spec", [ObjectiveSpec("bulk"), ObjectiveSpec("shear"), ObjectiveSpec("weighted"),
                                  ObjectiveSpec("npr")])
def test_objective_sensitivity_matches_fd(pipe, fd_tensor, spec):
    EH, u, rho = pipe.tensor(pipe.alpha)
    dEH = tensor_sensitivity(u, pipe.A, pipe.A @ pipe.alpha, pipe.hp, pipe.grid, pipe.mat, pipe.k0, rho)
    dJ = objective_sensitivity(dEH, spec)
    ref = np.einsum("nab,ab->n", fd_tensor, spec.weights)
    idx = _largest(ref)
    np.testing.assert_allclose(dJ[idx], ref[idx], rtol=1e-3)


def test_volume_sensitivity_matches_fd(pipe):
    V, dV = volume_and_sensitivity(pipe.A @ pipe.alpha, pipe.A, pipe.hp, pipe.grid)
    assert V == pytest.approx(pipe.volume(pipe.alpha))
    h = 1e-6 * np.abs(pipe.alpha).max()
    ref = np.empty_like(dV)
    for i in range(dV.size):
        d = np.zeros_like(dV)
        d[i] = h
        ref[i] = (pipe.volume(pipe.alpha + d) - pipe.volume(pipe.alpha - d)) / (2 * h)
    idx = _largest(ref)
    np.testing.assert_allclose(dV[idx], ref[idx], rtol=1e-6)


def test_volume_matches_mean_density():
    # nodal quarter weights make the volume equal to the mean element density
    p = Pipeline(n=7, seed=11)
    phi = p.A @ p.alpha
    assert volume_fraction(phi, p.grid, p.hp) == pytest.approx(ersatz_density(phi, p.grid, p.hp).mean())


def test_sensitivity_shape_checks():
    p = Pipeline(n=4)
    EH, u, rho = p.tensor(p.alpha)
    with pytest.raises(ValueError):
        tensor_sensitivity(u, p.A, np.zeros(3), p.hp, p.grid, p.mat, p.k0)
    with pytest.raises(ValueError):
        tensor_sensitivity(u, p.A, p.A @ p.alpha, p.hp, p.grid, MaterialSpec(penalty=2.0), p.k0)
