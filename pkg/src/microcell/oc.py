"""Optimality-criteria update of the expansion coefficients."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)


class InfeasibleConstraintError(RuntimeError):
    """No multiplier moves the volume toward its bound."""


class DegenerateDesignError(ValueError):
    """Coefficients carry no range to normalize against."""


@dataclass(frozen=True)
class OCParams:
    move_limit: float = 0.01
    damping: float = 0.3
    mu: float = 1e-9
    abar_lo: float = 0.001
    abar_hi: float = 1.0
    lambda_lo: float = 1e-9
    lambda_hi: float = 1e9
    lambda_tol: float = 1e-6
    volume_tol: float = 1e-4
    descent_fraction: float = 0.5
    tol_J: float = 1e-3
    max_iter: int = 100

    def __post_init__(self):
        if not 0 < self.move_limit < 1:
            raise ValueError("move_limit must lie in (0, 1)")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if not self.abar_lo < self.abar_hi:
            raise ValueError("abar_lo must be below abar_hi")
        if not 0 < self.lambda_lo < self.lambda_hi:
            raise ValueError("need 0 < lambda_lo < lambda_hi")
        if not 0 < self.descent_fraction <= 1:
            raise ValueError("descent_fraction must lie in (0, 1]")
        if self.mu <= 0 or self.lambda_tol <= 0 or self.tol_J <= 0 or self.max_iter < 1:
            raise ValueError("mu, lambda_tol, tol_J and max_iter must be positive")


@dataclass(frozen=True)
class RegularizedVars:
    abar: np.ndarray
    alpha_min: float
    alpha_max: float


def scaling_bounds(alpha: np.ndarray) -> tuple[float, float]:
    """Twice the extreme coefficients.

    A one-signed vector would not bracket zero, so its missing side mirrors
    the other one; this keeps sign changes of the level set reachable.
    """
    lo, hi = 2.0 * float(alpha.min()), 2.0 * float(alpha.max())
    if lo >= 0:
        lo = -hi
    if hi <= 0:
        hi = -lo
    return lo, hi


def regularize(alpha: np.ndarray, params: OCParams = OCParams()) -> RegularizedVars:
    alpha = np.asarray(alpha, dtype=float).ravel()
    if not np.all(np.isfinite(alpha)):
        raise ValueError("coefficients must be finite")
    lo, hi = scaling_bounds(alpha)
    if not hi > lo:
        raise DegenerateDesignError("coefficient range is empty (constant zero field)")
    abar = (alpha - lo) / (hi - lo)
    return RegularizedVars(np.clip(abar, params.abar_lo, params.abar_hi), lo, hi)


def de_regularize(rv: RegularizedVars) -> np.ndarray:
    return rv.abar * (rv.alpha_max - rv.alpha_min) + rv.alpha_min


def update_factor(dJ: np.ndarray, dV: np.ndarray, lam: float, params: OCParams = OCParams()) -> np.ndarray:
    """Ratio of floored objective and weighted volume sensitivities."""
    if not lam > 0:
        raise ValueError("multiplier must be positive")
    return np.maximum(params.mu, dJ) / np.maximum(params.mu, lam * dV)


def oc_step(rv: RegularizedVars, D: np.ndarray, params: OCParams = OCParams()) -> RegularizedVars:
    a = rv.abar
    lower = np.maximum(a - params.move_limit, params.abar_lo)
    upper = np.minimum(a + params.move_limit, params.abar_hi)
    trial = D**params.damping * a
    return RegularizedVars(np.clip(trial, lower, upper), rv.alpha_min, rv.alpha_max)


@dataclass
class BisectionResult:
    lam: float
    rv: RegularizedVars
    volume: float
    saturated: bool = False
    evaluations: int = 0


def bisect_lambda(rv: RegularizedVars, dJ: np.ndarray, dV: np.ndarray,
                  volume_of: Callable[[np.ndarray], float], vmax: float,
                  params: OCParams = OCParams(), current_volume: float | None = None,
                  project: Callable[[np.ndarray], np.ndarray] | None = None) -> BisectionResult:
    """Find the volume multiplier by bisection in log space.

    ``volume_of`` maps updated coefficients to the volume fraction and
    ``project`` (optional) is applied to the coefficients after each trial
    update. When no multiplier reaches ``vmax`` in one move-limited step the
    result is flagged ``saturated`` and the multiplier instead targets the
    volume ``descent_fraction`` of the way from the current volume to the
    strongest reachable reduction. The limit step shrinks every band knot by
    the full move limit regardless of its sensitivity, so stopping short
    keeps the step sensitivity-driven. If no multiplier lowers the volume at
    all, the constraint is reported infeasible.
    """
    project = project or (lambda a: a)
    count = 0

    def trial(lam):
        nonlocal count
        count += 1
        new = oc_step(rv, update_factor(dJ, dV, lam, params), params)
        alpha = project(de_regularize(new))
        return new, alpha, volume_of(alpha)

    lo = params.lambda_lo
    new, alpha, v = trial(lo)
    if v <= vmax:
        return BisectionResult(lo, new, v, evaluations=count)

    hi = params.lambda_hi
    new_hi, _, v_hi = trial(hi)
    doublings = 0
    while v_hi > vmax and doublings < 60:
        hi *= 2.0
        doublings += 1
        new_hi, _, v_hi = trial(hi)
    if v_hi > vmax:
        reference = v if current_volume is None else current_volume
        if v_hi >= reference:
            raise InfeasibleConstraintError(
                f"volume {v_hi:.6f} cannot be brought toward {vmax} by any multiplier")
        log.debug("bisection saturated: best volume %.6f > %.6f", v_hi, vmax)
        if params.descent_fraction == 1.0:
            return BisectionResult(hi, new_hi, v_hi, saturated=True, evaluations=count)
        target = reference - params.descent_fraction * (reference - v_hi)
        if v <= target:
            return BisectionResult(lo, new, v, saturated=True, evaluations=count)
    else:
        target = vmax

    best = (hi, new_hi, v_hi)
    while (hi - lo) > params.lambda_tol * hi:
        mid = np.sqrt(lo * hi)
        new, _, v = trial(mid)
        if v > target:
            lo = mid
        else:
            hi = mid
            best = (mid, new, v)
            if target - v <= params.volume_tol:
                break
    lam, new, v = best
    return BisectionResult(lam, new, v, saturated=target != vmax, evaluations=count)


@dataclass
class IterationState:
    vmax: float
    k: int = 0
    J: list[float] = field(default_factory=list)
    V: list[float] = field(default_factory=list)
    alpha: np.ndarray | None = None
    converged: bool = False
    reason: str = ""

    def record(self, J: float, V: float, alpha: np.ndarray | None = None) -> None:
        self.k += 1
        self.J.append(float(J))
        self.V.append(float(V))
        if alpha is not None:
            self.alpha = np.array(alpha, copy=True)


def converged(state: IterationState, params: OCParams = OCParams()) -> tuple[bool, str]:
    """Stopping rule: objective stalled on a feasible design, or iteration cap."""
    if len(state.J) >= 2:
        if abs(state.J[-1] - state.J[-2]) < params.tol_J and state.V[-1] <= state.vmax + 1e-3:
            return True, "objective"
    if state.k >= params.max_iter:
        return True, "max-iter"
    return False, ""
