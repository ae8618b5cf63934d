"""
CEEI prices by convex potential minimization.

Chain of thought:
1. With unit budgets and prices p = e^y, a type θ buys the good maximizing log θⱼ − yⱼ
2. The potential Ψ(y) = ∫ maxⱼ (log θⱼ − yⱼ) dG + Σⱼ sⱼe^{yⱼ} is strictly convex and coercive,
   and ∂Ψ/∂yᵢ = −mᵢ(y) + sᵢe^{yᵢ}, so its minimizer clears every market
3. Minimize with damped Newton: Hessian from central differences of the gradient, Cholesky solve,
   gradient-descent fallback when the estimate is indefinite or ill-conditioned, Armijo backtracking on Ψ
4. The solution yields the pure-option menu {qᵢeᵢ}, the regions Γᵢ and the indifference type θ⁰
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import structlog
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ..config.settings import settings
from ..utils.integration import Estimate
from .evaluator import Menu
from .measures import MeasureLike, TypeMeasure, as_measure
from .model import ModelDomainError, SimplexPoint

logger = structlog.get_logger(__name__)

# allowance for roundoff in Ψ during the Armijo test
_ROUNDOFF = 10.0 * np.finfo(float).eps


@dataclass
class CeeiOptions:
    """Solver controls; unset tolerances follow the integration backend."""

    tol_grad: Optional[float] = None
    tol_clear: float = 1e-3
    max_iters: int = 100
    hessian_step: float = 1e-5
    armijo: float = 1e-4
    backtrack: float = 0.5
    min_step: float = 1e-10
    max_condition: float = 1e12
    max_newton_step: float = 5.0
    y0: Optional[np.ndarray] = None

    @classmethod
    def from_settings(cls, **overrides) -> "CeeiOptions":
        base = settings.solver
        values = dict(
            tol_clear=base.tol_clear,
            max_iters=base.max_iters,
            hessian_step=base.hessian_step,
            armijo=base.armijo,
            backtrack=base.backtrack,
            min_step=base.min_step,
            max_condition=base.max_condition,
            max_newton_step=base.max_newton_step,
        )
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def gradient_tolerance(self, measure: TypeMeasure) -> float:
        if self.tol_grad is not None:
            return self.tol_grad
        return settings.solver.tol_grad_quadrature if measure.exact else settings.solver.tol_grad_mc


@dataclass(frozen=True)
class CeeiIteration:
    """One accepted Newton or gradient step."""

    iteration: int
    potential: float
    gradient_norm: float
    step: float
    direction: str


@dataclass
class CeeiSolution:
    """CEEI log-prices with the induced quantities and diagnostics."""

    y: np.ndarray
    p: np.ndarray
    q: np.ndarray
    theta0: SimplexPoint
    region_masses: np.ndarray
    clearing_residual: float
    iterations: int
    gradient_norm: float
    integration_error_estimate: float
    supplies: np.ndarray
    converged: bool = True
    history: List[CeeiIteration] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "y": self.y,
            "p": self.p,
            "q": self.q,
            "theta0": list(self.theta0.coords),
            "region_masses": self.region_masses,
            "clearing_residual": self.clearing_residual,
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
            "integration_error_estimate": self.integration_error_estimate,
            "supplies": self.supplies,
            "converged": self.converged,
        }


class CeeiConvergenceError(Exception):
    """Custom exception for CEEI solves that stop short of the tolerances."""

    def __init__(self, message: str, best: CeeiSolution):
        super().__init__(message)
        self.best = best


def _check_supplies(s: Sequence[float], n_goods: int) -> np.ndarray:
    supplies = np.asarray(s, dtype=float)
    if supplies.shape != (n_goods,):
        raise ModelDomainError(f"expected {n_goods} supplies, got {supplies.size}")
    if np.any(~np.isfinite(supplies)) or np.any(supplies <= 0.0):
        raise ModelDomainError("supplies must be strictly positive")
    return supplies


def potential_estimate(model: MeasureLike, s: Sequence[float], y: Sequence[float]) -> Estimate:
    """Ψ(y) with the integration error estimate of its integral part."""
    measure = as_measure(model)
    supplies = _check_supplies(s, measure.n_goods)
    y = np.asarray(y, dtype=float)
    integral = measure.potential_integral(y)
    return Estimate(integral.value + float(np.dot(supplies, np.exp(y))), integral.stderr)


def potential(model: MeasureLike, s: Sequence[float], y: Sequence[float]) -> float:
    """Ψ(y) = ∫ maxⱼ (log θⱼ − yⱼ) dG + Σⱼ sⱼe^{yⱼ}."""
    return potential_estimate(model, s, y).value


def potential_gradient(model: MeasureLike, s: Sequence[float], y: Sequence[float]) -> np.ndarray:
    """∂Ψ/∂yᵢ = −mᵢ(y) + sᵢe^{yᵢ}."""
    measure = as_measure(model)
    supplies = _check_supplies(s, measure.n_goods)
    y = np.asarray(y, dtype=float)
    return -measure.potential_masses(y) + supplies * np.exp(y)


def region_of(theta: Union[SimplexPoint, Sequence[float]], q: Sequence[float]) -> int:
    """Index of the pure option a type picks: argmaxⱼ θⱼqⱼ, lowest on ties (0-based)."""
    point = theta.array if isinstance(theta, SimplexPoint) else np.asarray(theta, dtype=float)
    quantities = np.asarray(q, dtype=float)
    if np.any(quantities <= 0.0):
        raise ModelDomainError("quantities must be strictly positive")
    return int(np.argmax(point * quantities))


def indifference_type(q: Sequence[float]) -> SimplexPoint:
    """θ⁰ with θ⁰ᵢ ∝ 1/qᵢ, indifferent among all pure options."""
    inverse = 1.0 / np.asarray(q, dtype=float)
    theta = inverse / inverse.sum()
    theta[-1] = max(0.0, 1.0 - theta[:-1].sum())
    return SimplexPoint(tuple(theta))


def clearing_residual(model: MeasureLike, s: Sequence[float], q: Sequence[float]) -> float:
    """maxᵢ |qᵢmᵢ − sᵢ| / sᵢ at the region masses induced by q."""
    measure = as_measure(model)
    supplies = _check_supplies(s, measure.n_goods)
    quantities = np.asarray(q, dtype=float)
    masses = measure.region_masses(quantities)
    return float(np.max(np.abs(quantities * masses - supplies) / supplies))


def _finite_difference_hessian(gradient, y: np.ndarray, step: float) -> np.ndarray:
    n = y.size
    hessian = np.empty((n, n))
    for j in range(n):
        shift = np.zeros(n)
        shift[j] = step
        hessian[:, j] = (gradient(y + shift) - gradient(y - shift)) / (2.0 * step)
    return 0.5 * (hessian + hessian.T)


def _newton_direction(hessian: np.ndarray, grad: np.ndarray, max_condition: float):
    try:
        if np.linalg.cond(hessian) > max_condition:
            raise LinAlgError("Hessian estimate is ill-conditioned")
        factor = cho_factor(hessian)
        return -cho_solve(factor, grad), "newton"
    except LinAlgError:
        return -grad, "gradient"


def _solution(
    measure: TypeMeasure,
    supplies: np.ndarray,
    y: np.ndarray,
    iterations: int,
    converged: bool,
    history: List[CeeiIteration],
) -> CeeiSolution:
    q = np.exp(-y)
    masses = measure.region_masses(q)
    grad = -measure.potential_masses(y) + supplies * np.exp(y)
    return CeeiSolution(
        y=y.copy(),
        p=np.exp(y),
        q=q,
        theta0=indifference_type(q),
        region_masses=masses,
        clearing_residual=float(np.max(np.abs(q * masses - supplies) / supplies)),
        iterations=iterations,
        gradient_norm=float(np.max(np.abs(grad))),
        integration_error_estimate=measure.potential_integral(y).stderr,
        supplies=supplies,
        converged=converged,
        history=list(history),
    )


def solve_ceei(model: MeasureLike, s: Sequence[float], opts: Optional[CeeiOptions] = None) -> CeeiSolution:
    """
    Find the CEEI prices by minimizing Ψ.

    Args:
        model: A TypeMeasure, or a model integrated with the default backend
        s: Supplies, strictly positive
        opts: Solver options (defaults from settings)

    Returns:
        CeeiSolution at the minimizer

    Raises:
        ModelDomainError: If a supply is not strictly positive
        CeeiConvergenceError: If the tolerances are not met within max_iters
    """
    opts = opts or CeeiOptions.from_settings()
    measure = as_measure(model)
    supplies = _check_supplies(s, measure.n_goods)
    tol_grad = opts.gradient_tolerance(measure)

    def psi(y: np.ndarray) -> float:
        return measure.potential_integral(y).value + float(np.dot(supplies, np.exp(y)))

    def gradient(y: np.ndarray) -> np.ndarray:
        return -measure.potential_masses(y) + supplies * np.exp(y)

    if opts.y0 is not None:
        y = np.asarray(opts.y0, dtype=float).copy()
    else:
        y = np.log(1.0 / (measure.n_goods * supplies))
    history: List[CeeiIteration] = []
    best_y, best_norm = y.copy(), np.inf

    logger.info("Solving CEEI", goods=measure.n_goods, supplies=supplies.tolist(), tol_grad=tol_grad)
    for iteration in range(opts.max_iters + 1):
        value = psi(y)
        grad = gradient(y)
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm < best_norm:
            best_y, best_norm = y.copy(), grad_norm

        if grad_norm <= tol_grad:
            solution = _solution(measure, supplies, y, iteration, True, history)
            if solution.clearing_residual <= opts.tol_clear:
                logger.info(
                    "CEEI converged",
                    iterations=iteration,
                    q=solution.q.tolist(),
                    clearing_residual=solution.clearing_residual,
                )
                return solution
            break
        if iteration == opts.max_iters:
            break

        hessian = _finite_difference_hessian(gradient, y, opts.hessian_step)
        direction, kind = _newton_direction(hessian, grad, opts.max_condition)
        slope = float(np.dot(grad, direction))
        if slope >= 0.0:
            direction, kind = -grad, "gradient"
            slope = -float(np.dot(grad, grad))
        longest = float(np.max(np.abs(direction)))
        if longest > opts.max_newton_step:
            direction = direction * (opts.max_newton_step / longest)
            slope = float(np.dot(grad, direction))

        step = 1.0
        allowance = _ROUNDOFF * abs(value)
        while psi(y + step * direction) > value + opts.armijo * step * slope + allowance:
            step *= opts.backtrack
            if step < opts.min_step:
                break
        if step < opts.min_step:
            logger.warning("Line search stalled", iteration=iteration, gradient_norm=grad_norm)
            break

        y = y + step * direction
        history.append(CeeiIteration(iteration + 1, psi(y), grad_norm, step, kind))
        logger.debug("CEEI step", iteration=iteration + 1, gradient_norm=grad_norm, step=step, direction=kind)

    best = _solution(measure, supplies, best_y, len(history), False, history)
    raise CeeiConvergenceError(
        f"CEEI solve stopped with gradient norm {best.gradient_norm:.3e} (tol {tol_grad:.1e}) "
        f"and clearing residual {best.clearing_residual:.3e} (tol {opts.tol_clear:.1e})",
        best,
    )


def ceei_menu(sol: CeeiSolution) -> Menu:
    """Pure-option menu {qᵢeᵢ}."""
    n_goods = sol.q.size
    bundles = [tuple(float(sol.q[i]) if j == i else 0.0 for j in range(n_goods)) for i in range(n_goods)]
    return Menu.from_bundles(bundles, [f"good_{i}" for i in range(n_goods)])
