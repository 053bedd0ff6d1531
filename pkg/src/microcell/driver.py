"""Run configuration, the optimization loop and result files."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from microcell.cell_mesh import CellGrid, MaterialSpec, base_element_stiffness, ersatz_density
from microcell.ebhm import (
    REFERENCE_HS_BULK_V03,
    assemble_stiffness,
    build_periodic_map,
    homogenize,
    homogenized_tensor,
    hs_bulk_upper,
    solve_induced_fields,
)
from microcell.objectives import (
    ObjectiveSpec,
    bulk_modulus,
    evaluate_objective,
    objective_sensitivity,
    poisson_ratios,
    shear_modulus,
    tensor_sensitivity,
    volume_and_sensitivity,
    volume_fraction,
)
from microcell.oc import (
    IterationState,
    OCParams,
    bisect_lambda,
    converged,
    de_regularize,
    regularize,
)
from microcell.rbf_levelset import (
    PATTERNS,
    SYMMETRY_KINDS,
    HeavisideParams,
    build_interpolation,
    default_bandwidth,
    default_support_radius,
    evaluate_lsf,
    fit_coefficients,
    grid_knots,
    initial_design,
    symmetrize,
    symmetry_spec,
)

log = logging.getLogger(__name__)

FMT = "%.9g"


class ConfigError(ValueError):
    pass


class RunError(RuntimeError):
    def __init__(self, iteration: int, cause: Exception):
        super().__init__(f"iteration {iteration}: {cause}")
        self.iteration = iteration
        self.cause = cause


@dataclass
class RunConfig:
    objective: str = "bulk"
    omega1: float = 0.5
    omega2: float = 0.5
    beta: float = 0.03
    npr_coupling: str = "1122"
    Vmax: float = 0.3
    nelx: int = 100
    nely: int = 100
    width: float = 1.0
    height: float = 1.0
    initial_design: str = "interior_3x3"
    symmetry: str = "none"
    E_solid: float = 1.0
    E_void: float = 0.001
    nu: float = 0.3
    plane_strain: bool = False
    penalty: float = 1.0
    eta: float | None = None      # defaults to E_void / E_solid
    delta: float | None = None    # defaults to 0.6 * element size
    d_ml: float | None = None     # defaults to 3 * element size
    phi0_clamp: float | None = None  # in units of delta; null keeps the raw signed distance
    normalize: bool = True
    move_limit: float = 0.01
    damping: float = 0.3
    mu: float = 1e-9
    abar_lo: float = 0.001
    abar_hi: float = 1.0
    lambda_lo: float = 1e-9
    lambda_hi: float = 1e9
    lambda_tol: float = 1e-6
    descent_fraction: float = 0.5
    tol_J: float = 1e-3
    max_iter: int = 100
    output_dir: str = "out"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def fail(name, msg):
            raise ConfigError(f"{name}: {msg}")

        if not 0 < self.Vmax < 1:
            fail("Vmax", f"must lie in (0, 1), got {self.Vmax}")
        if self.initial_design not in PATTERNS:
            fail("initial_design", f"unknown pattern {self.initial_design!r}")
        if self.symmetry not in SYMMETRY_KINDS:
            fail("symmetry", f"unknown symmetry {self.symmetry!r}")
        for name in ("nelx", "nely"):
            if int(getattr(self, name)) < 2:
                fail(name, "must be at least 2")
        for name in ("width", "height"):
            if not getattr(self, name) > 0:
                fail(name, "must be positive")
        if self.symmetry == "isotropic" and (self.nelx != self.nely or self.width != self.height):
            fail("symmetry", "isotropic symmetry needs a square cell and mesh")
        for name, build in (("objective", self.objective_spec), ("material", self.material),
                            ("oc", self.oc_params), ("heaviside", self.heaviside_params)):
            try:
                build()
            except ConfigError:
                raise
            except (ValueError, TypeError) as exc:
                fail(name, str(exc))
        if self.d_ml is not None and not self.d_ml > max(self.width / self.nelx, self.height / self.nely):
            fail("d_ml", "must exceed the element size")

    @property
    def grid(self) -> CellGrid:
        return CellGrid(int(self.nelx), int(self.nely), self.width, self.height)

    def material(self) -> MaterialSpec:
        return MaterialSpec(self.E_solid, self.E_void, self.nu, self.plane_strain, self.penalty)

    def objective_spec(self) -> ObjectiveSpec:
        return ObjectiveSpec(self.objective, self.omega1, self.omega2, self.beta, self.npr_coupling)

    def oc_params(self) -> OCParams:
        return OCParams(move_limit=self.move_limit, damping=self.damping, mu=self.mu,
                        abar_lo=self.abar_lo, abar_hi=self.abar_hi, lambda_lo=self.lambda_lo,
                        lambda_hi=self.lambda_hi, lambda_tol=self.lambda_tol,
                        descent_fraction=self.descent_fraction, tol_J=self.tol_J,
                        max_iter=int(self.max_iter))

    def heaviside_params(self) -> HeavisideParams:
        eta = self.E_void / self.E_solid if self.eta is None else self.eta
        delta = default_bandwidth(self.grid) if self.delta is None else self.delta
        return HeavisideParams(eta, delta)

    def support_radius(self) -> float:
        return default_support_radius(self.grid) if self.d_ml is None else self.d_ml


CONFIG_KEYS = {f.name for f in fields(RunConfig)}


def config_from_dict(data: dict, **overrides) -> RunConfig:
    data = dict(data or {})
    unknown = sorted(set(data) - CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, **overrides) -> RunConfig:
    """Read a flat YAML mapping; unset keys take their defaults."""
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a key-value mapping")
    return config_from_dict(data or {}, **overrides)


@dataclass
class HistoryRow:
    step: int
    J: float
    V: float
    lam: float
    max_dabar: float
    seconds: float


@dataclass
class Design:
    """Everything the loop carries between iterations."""

    grid: CellGrid
    A: object
    alpha: np.ndarray
    phi: np.ndarray
    rho: np.ndarray


@dataclass
class RunResult:
    EH: np.ndarray
    J: float
    K: float
    G: float
    nu12: float | None
    nu21: float | None
    V: float
    iterations: int
    reason: str
    hs_bound: float
    files: dict[str, Path] = field(default_factory=dict)
    history: list[HistoryRow] = field(default_factory=list)
    design: Design | None = None

    @property
    def converged(self) -> bool:
        return self.reason == "objective"


def _summary(EH, V, cfg: RunConfig, spec: ObjectiveSpec) -> dict:
    try:
        nu12, nu21 = poisson_ratios(EH)
    except ZeroDivisionError:
        nu12 = nu21 = None
    return dict(EH=EH, J=evaluate_objective(EH, spec), K=bulk_modulus(EH), G=shear_modulus(EH),
                nu12=nu12, nu21=nu21, V=V, hs_bound=hs_bulk_upper(V, cfg.material()) if V > 0 else 0.0)


def boundary_slope(phi: np.ndarray, grid: CellGrid) -> float:
    """Mean |grad phi| over elements crossed by the zero contour."""
    pe = phi[grid.connectivity]
    cut = (pe.min(axis=1) < 0) & (pe.max(axis=1) > 0)
    if not cut.any():
        return 1.0
    p = pe[cut]
    gx = 0.5 * ((p[:, 1] - p[:, 0]) + (p[:, 2] - p[:, 3])) / grid.hx
    gy = 0.5 * ((p[:, 3] - p[:, 0]) + (p[:, 2] - p[:, 1])) / grid.hy
    return float(np.mean(np.hypot(gx, gy)))


def run_optimization(cfg: RunConfig, emit: bool = True, callback=None) -> RunResult:
    """Optimize the cell described by ``cfg``.

    Each iteration evaluates the level set, homogenizes the ersatz density,
    forms the objective and volume gradients, projects them onto the
    symmetric subspace, and takes one bisected OC step.
    """
    grid = cfg.grid
    mat = cfg.material()
    hp = cfg.heaviside_params()
    spec = cfg.objective_spec()
    params = cfg.oc_params()
    A = build_interpolation(grid_knots(grid, cfg.support_radius()), grid)
    sym = symmetry_spec(cfg.symmetry, grid)
    pmap = build_periodic_map(grid)
    k0 = base_element_stiffness(mat, grid.hx, grid.hy)

    alpha = fit_coefficients(A, initial_design(cfg.initial_design, grid, hp, clamp=cfg.phi0_clamp))
    alpha = symmetrize(alpha, sym)

    def project(a):
        a = symmetrize(a, sym)
        if cfg.normalize:
            a = a / max(1.0, boundary_slope(A @ a, grid))
        return a

    state = IterationState(cfg.Vmax)
    history: list[HistoryRow] = []
    reason = ""
    while True:
        t0 = time.perf_counter()
        k = state.k + 1
        try:
            phi = evaluate_lsf(A, alpha)
            rho = ersatz_density(phi, grid, hp)
            system = assemble_stiffness(grid, rho, mat, pmap, k0)
            u = solve_induced_fields(system, pmap)
            EH = homogenized_tensor(u, grid, rho, mat, k0)
            J = evaluate_objective(EH, spec)
            V, dV = volume_and_sensitivity(phi, A, hp, grid)
            state.record(J, V, alpha)
            done, reason = converged(state, params)
            if done:
                history.append(HistoryRow(k, J, V, 0.0, 0.0, time.perf_counter() - t0))
                break
            dJ = objective_sensitivity(tensor_sensitivity(u, A, phi, hp, grid, mat, k0, rho), spec)
            dJ, dV = symmetrize(dJ, sym), symmetrize(dV, sym)
            rv = regularize(alpha, params)
            step = bisect_lambda(rv, dJ, dV, lambda a: volume_fraction(A @ a, grid, hp), cfg.Vmax,
                                 params, current_volume=V, project=project)
        except Exception as exc:
            raise RunError(k, exc) from exc
        alpha = project(de_regularize(step.rv))
        max_move = float(np.max(np.abs(step.rv.abar - rv.abar)))
        history.append(HistoryRow(k, J, V, step.lam, max_move, time.perf_counter() - t0))
        log.info("it %3d  J %.6f  V %.4f  lam %.3e%s", k, J, V, step.lam, " (sat)" if step.saturated else "")
        if callback is not None:
            callback(k, EH, V, alpha)

    design = Design(grid, A, alpha, phi, rho)
    result = RunResult(iterations=state.k, reason=reason, history=history, design=design,
                       **_summary(EH, V, cfg, spec))
    if emit:
        result.files = emit_artifacts(result, history, design, cfg)
    return result


def write_matrix(path, values: np.ndarray) -> None:
    np.savetxt(path, np.atleast_2d(values), fmt=FMT, delimiter=" ")


def write_pgm(path, rho: np.ndarray, eta: float) -> None:
    """Binary P5 image, void black and solid white, top row at the top of the cell."""
    img = np.rint(255.0 * (np.asarray(rho) - eta) / (1.0 - eta))
    img = np.clip(img, 0, 255).astype(np.uint8)[::-1]
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: expected maxval 255, got {maxval}")
    pixels = np.frombuffer(data[pos + 1:pos + 1 + w * h], dtype=np.uint8)
    return pixels.reshape(h, w)


def format_tensor_report(result: RunResult, cfg: RunConfig) -> str:
    def num(x):
        return "nan" if x is None else FMT % x

    lines = [" ".join(FMT % v for v in row) for row in result.EH]
    lines += [
        f"K {num(result.K)}",
        f"G {num(result.G)}",
        f"nu12 {num(result.nu12)}",
        f"nu21 {num(result.nu21)}",
        f"V {num(result.V)}",
        f"J {num(result.J)}",
        f"hs_bulk_upper {num(result.hs_bound)}",
        f"hs_bulk_reference_v0.3 {num(REFERENCE_HS_BULK_V03)}",
    ]
    return "\n".join(lines) + "\n"


def read_tensor_report(path) -> tuple[np.ndarray, dict[str, float]]:
    rows = Path(path).read_text().splitlines()
    EH = np.array([[float(v) for v in r.split()] for r in rows[:3]])
    scalars = {}
    for r in rows[3:]:
        key, val = r.split()
        scalars[key] = float(val)
    return EH, scalars


def emit_artifacts(result: RunResult, history: list[HistoryRow], design: Design, cfg: RunConfig) -> dict[str, Path]:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = design.grid
    eta = cfg.heaviside_params().eta
    files = {name: out / name for name in
             ("history.csv", "timing.csv", "tensor.txt", "phi.txt", "rho.txt", "cell.pgm",
              "tiled3x3.pgm")}

    with open(files["history.csv"], "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "J", "V", "lambda", "max_dabar"])
        for row in history:
            writer.writerow([row.step, FMT % row.J, FMT % row.V, FMT % row.lam, FMT % row.max_dabar])
    # wall time lives apart so that history.csv stays reproducible byte for byte
    with open(files["timing.csv"], "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "seconds"])
        for row in history:
            writer.writerow([row.step, FMT % row.seconds])
    files["tensor.txt"].write_text(format_tensor_report(result, cfg))
    rho_img = design.rho.reshape(grid.element_shape)
    write_matrix(files["phi.txt"], design.phi.reshape(grid.node_shape))
    write_matrix(files["rho.txt"], rho_img)
    write_pgm(files["cell.pgm"], rho_img, eta)
    write_pgm(files["tiled3x3.pgm"], np.tile(rho_img, (3, 3)), eta)
    return files


def load_field(path, grid: CellGrid, hp: HeavisideParams) -> np.ndarray:
    """Element densities from a dumped level set (node grid) or density (element grid)."""
    data = np.loadtxt(path, ndmin=2)
    if data.shape == grid.node_shape:
        return ersatz_density(data.ravel(), grid, hp)
    if data.shape == grid.element_shape:
        return data.ravel()
    raise ValueError(f"{path}: shape {data.shape} matches neither {grid.node_shape} nodes "
                     f"nor {grid.element_shape} elements")


def evaluate_only(cfg: RunConfig, field_path) -> RunResult:
    """Homogenize a supplied level set or density field without optimizing."""
    grid = cfg.grid
    rho = load_field(field_path, grid, cfg.heaviside_params())
    EH, _ = homogenize(grid, rho, cfg.material())
    V = float(rho.mean())
    return RunResult(iterations=0, reason="evaluate", **_summary(EH, V, cfg, cfg.objective_spec()))


def with_overrides(cfg: RunConfig, **kw) -> RunConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
