import csv
from pathlib import Path

import numpy as np
import pytest

from microcell.cell_mesh import MaterialSpec
from microcell.driver import (
    ConfigError,
    RunConfig,
    config_from_dict,
    evaluate_only,
    load_config,
    read_pgm,
    read_tensor_report,
    run_optimization,
    write_pgm,
)
from microcell.ebhm import homogenize


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    cfg = RunConfig(nelx=20, nely=20, max_iter=6, output_dir=str(tmp_path_factory.mktemp("run")))
    return cfg, run_optimization(cfg)


def test_minimal_config_fills_defaults(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("objective: bulk\nVmax: 0.3\n")
    cfg = load_config(path)
    assert (cfg.nelx, cfg.nely) == (100, 100)
    assert cfg.move_limit == 0.01 and cfg.damping == 0.3
    assert cfg.tol_J == 1e-3 and cfg.max_iter == 100


@pytest.mark.parametrize("data, name", [
    ({"Vmax": 1.5}, "Vmax"),
    ({"Vmax": 0.0}, "Vmax"),
    ({"initial_design": "stars"}, "initial_design"),
    ({"symmetry": "cubic"}, "symmetry"),
    ({"objective": "volume"}, "objective"),
    ({"nelx": 1}, "nelx"),
    ({"move_limit": 2.0}, "oc"),
    ({"nu": 0.7}, "material"),
])
def test_invalid_values_name_the_field(data, name):
    with pytest.raises(ConfigError, match=name):
        config_from_dict(data)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="Vmx"):
        config_from_dict({"Vmx": 0.3})


def test_non_mapping_rejected(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_isotropic_npr_config_is_valid():
    cfg = config_from_dict({"objective": "npr", "symmetry": "isotropic", "Vmax": 0.35,
                            "initial_design": "npr_case4"})
    assert cfg.objective_spec().kind == "npr"


def test_isotropic_needs_square_mesh():
    with pytest.raises(ConfigError, match="symmetry"):
        config_from_dict({"symmetry": "isotropic", "nelx": 20, "nely": 10})


def test_overrides_win(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("nelx: 40\noutput_dir: a\n")
    cfg = load_config(path, nelx=12, output_dir=None)
    assert cfg.nelx == 12 and cfg.output_dir == "a"


def test_artifacts_exist_and_reparse(small_run):
    cfg, result = small_run
    assert set(result.files) == {"history.csv", "timing.csv", "tensor.txt", "phi.txt", "rho.txt", "cell.pgm", "tiled3x3.pgm"}
    for path in result.files.values():
        assert path.exists()
    rows = list(csv.DictReader(open(result.files["history.csv"])))
    assert len(rows) == result.iterations
    assert list(rows[0]) == ["step", "J", "V", "lambda", "max_dabar"]
    assert float(rows[-1]["J"]) == pytest.approx(result.J, rel=1e-8)
    timing = list(csv.DictReader(open(result.files["timing.csv"])))
    assert [int(r["step"]) for r in timing] == list(range(1, result.iterations + 1))
    assert all(float(r["seconds"]) > 0 for r in timing)
    EH, scalars = read_tensor_report(result.files["tensor.txt"])
    np.testing.assert_allclose(EH, result.EH, rtol=1e-8)
    assert scalars["K"] == pytest.approx(result.K, rel=1e-8)
    assert scalars["V"] == pytest.approx(result.V, rel=1e-8)


def test_images_are_p5(small_run):
    cfg, result = small_run
    cell = read_pgm(result.files["cell.pgm"])
    tiled = read_pgm(result.files["tiled3x3.pgm"])
    assert cell.shape == (cfg.nely, cfg.nelx)
    assert tiled.shape == (3 * cfg.nely, 3 * cfg.nelx)
    assert result.files["cell.pgm"].read_bytes().startswith(b"P5\n20 20\n255\n")
    np.testing.assert_array_equal(tiled[:cfg.nely, :cfg.nelx], cell)


def test_pgm_maps_density_range(tmp_path):
    rho = np.array([[0.001, 1.0], [0.001 + 0.999 * 0.6, 1.0]])
    write_pgm(tmp_path / "x.pgm", rho, 0.001)
    img = read_pgm(tmp_path / "x.pgm")
    # top image row is the top of the cell
    assert img.tolist() == [[153, 255], [0, 255]]


def test_rho_dump_reproduces_tensor(small_run):
    cfg, result = small_run
    rho = np.loadtxt(result.files["rho.txt"]).ravel()
    EH, _ = homogenize(cfg.grid, rho, cfg.material())
    np.testing.assert_allclose(EH, result.EH, rtol=0, atol=1e-10)


def test_history_matches_result(small_run):
    _, result = small_run
    assert result.iterations == len(result.history)
    assert result.reason in ("objective", "max-iter")
    assert result.history[-1].J == result.J


def test_deterministic_history(tmp_path):
    paths = []
    for name in ("a", "b"):
        cfg = RunConfig(nelx=16, nely=16, max_iter=5, output_dir=str(tmp_path / name))
        paths.append(run_optimization(cfg).files["history.csv"])
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_max_iter_reason(tmp_path):
    cfg = RunConfig(nelx=16, nely=16, max_iter=2, output_dir=str(tmp_path))
    result = run_optimization(cfg)
    assert result.iterations == 2
    assert result.reason == "max-iter" and not result.converged


def test_no_emit(tmp_path):
    cfg = RunConfig(nelx=12, nely=12, max_iter=2, output_dir=str(tmp_path / "none"))
    result = run_optimization(cfg, emit=False)
    assert result.files == {}
    assert not (tmp_path / "none").exists()


@pytest.mark.parametrize("kind", ["phi", "rho"])
def test_evaluate_full_solid(tmp_path, kind):
    cfg = RunConfig(nelx=8, nely=8)
    shape = cfg.grid.node_shape if kind == "phi" else cfg.grid.element_shape
    path = tmp_path / f"{kind}.txt"
    np.savetxt(path, np.ones(shape))
    result = evaluate_only(cfg, path)
    np.testing.assert_allclose(result.EH, MaterialSpec().constitutive(1.0), rtol=1e-10, atol=1e-12)


def test_evaluate_uniform_half(tmp_path):
    cfg = RunConfig(nelx=8, nely=8)
    path = tmp_path / "rho.txt"
    np.savetxt(path, np.full(cfg.grid.element_shape, 0.5))
    result = evaluate_only(cfg, path)
    np.testing.assert_allclose(result.EH, 0.5 * MaterialSpec().constitutive(1.0), rtol=1e-10, atol=1e-12)
    assert result.V == pytest.approx(0.5)


def test_evaluate_wrong_shape(tmp_path):
    cfg = RunConfig(nelx=8, nely=8)
    path = tmp_path / "rho.txt"
    np.savetxt(path, np.ones((5, 5)))
    with pytest.raises(ValueError, match="matches neither"):
        evaluate_only(cfg, path)


@pytest.mark.parametrize("path", sorted((Path(__file__).parents[1] / "configs").glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_configs_load(path):
    cfg = load_config(path)
    assert cfg.nelx == 100 and cfg.output_dir.startswith("out/")
