"""
Shadow costs of supply at the CEEI point.

Chain of thought:
1. Region moments: Mᵢ = G(Γᵢ) and Aᵢ = ∫_{Γᵢ} θᵢλ dG at the CEEI quantities q
2. Switching densities Tᵢⱼ measure how fast agents move from Γⱼ into Γᵢ as qᵢ grows; they come from the
   interface geometry (two or three goods) or from finite differences of region masses
3. J has Jᵢᵢ = Mᵢ + qᵢΣⱼTᵢⱼ and Jᵢⱼ = −qⱼTᵢⱼ; the shadow costs solve Jc = A
4. Positivity is certified through H = J·diag(1/q), which has nonpositive off-diagonals and row
   margins Mᵢ/qᵢ, so it is a strictly diagonally dominant M-matrix
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Literal, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy.linalg import lu_factor, lu_solve

from ..config.settings import settings
from ..utils.integration import gauss_legendre
from .measures import MeasureLike, as_measure
from .model import ModelDomainError

logger = structlog.get_logger(__name__)

Method = Literal["auto", "geometric", "finite_difference"]
Convention = Literal["barycentric", "switching"]


class ShadowCostError(Exception):
    """Custom exception for shadow-cost failures."""
    pass


class SingularShadowSystemError(ShadowCostError):
    """Custom exception for a numerically singular J."""
    pass


class ShadowInvariantError(ShadowCostError):
    """Custom exception for shadow costs that break the positivity certificate."""
    pass


class UnsupportedMethodError(ShadowCostError):
    """Custom exception for switching-density methods that cannot handle a model."""
    pass


@dataclass(frozen=True)
class ShadowSolve:
    """Solution of Jc = A with its positivity certificate."""

    c: np.ndarray
    diag_dominance_margin: float
    condition_number: float


@dataclass
class ShadowCostReport:
    """Moments, switching densities, J and shadow costs at one quantity vector."""

    q: np.ndarray
    M: np.ndarray
    A: np.ndarray
    T: np.ndarray
    J: np.ndarray
    c: np.ndarray
    diag_dominance_margin: float
    condition_number: float
    stationarity_residual: np.ndarray
    method_tags: Dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "q": self.q,
            "M": self.M,
            "A": self.A,
            "T": self.T,
            "J": self.J,
            "c": self.c,
            "diagnostics": {
                "diag_dominance_margin": self.diag_dominance_margin,
                "condition_number": self.condition_number,
                "stationarity_residual": self.stationarity_residual,
                "method": self.method_tags.get("method"),
                "convention": self.method_tags.get("convention"),
            },
        }


def _positive(q: Sequence[float]) -> np.ndarray:
    quantities = np.asarray(q, dtype=float)
    if np.any(quantities <= 0.0):
        raise ModelDomainError("quantities must be strictly positive")
    return quantities


def region_moments(model: MeasureLike, q: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """(M, A) with Mᵢ = G(Γᵢ) and Aᵢ = ∫_{Γᵢ} θᵢλ dG for the regions induced by q."""
    return as_measure(model).region_moments(_positive(q))


def _interface_norm(qi: float, qj: float, n_goods: int) -> float:
    return math.sqrt(qi * qi + qj * qj - (qi - qj) ** 2 / n_goods)


def _convention_factor(convention: Convention, n_goods: int) -> float:
    # 'barycentric' plugs the barycentric density into the interface formula;
    # 'switching' uses the density on the embedded simplex, smaller by √N
    return 1.0 if convention == "barycentric" else 1.0 / math.sqrt(n_goods)


def _geometric(measure, q: np.ndarray, convention: Convention) -> np.ndarray:
    n_goods = q.size
    renorm = measure.renormalized
    if renorm is None:
        raise UnsupportedMethodError("geometric method needs a model with a density; use finite_difference")
    kappa = _convention_factor(convention, n_goods)
    theta0 = (1.0 / q) / np.sum(1.0 / q)
    T = np.zeros((n_goods, n_goods))
    if n_goods == 2:
        g0 = float(renorm.g(theta0[None, :])[0])
        for i, j in ((0, 1), (1, 0)):
            T[i, j] = kappa * g0 * theta0[i] / _interface_norm(q[i], q[j], n_goods)
        return T

    nodes, weights = gauss_legendre(renorm.ray_nodes)
    u = 0.5 * (nodes + 1.0)
    w = 0.5 * weights
    for i in range(n_goods):
        for j in range(n_goods):
            if i == j:
                continue
            # interface Γᵢ∩Γⱼ runs from θ⁰ to the edge point where the third good drops out
            edge = np.zeros(n_goods)
            edge[i] = q[j] / (q[i] + q[j])
            edge[j] = q[i] / (q[i] + q[j])
            path = theta0[None, :] + u[:, None] * (edge - theta0)[None, :]
            length = float(np.linalg.norm(edge - theta0))
            line = float(np.dot(w, renorm.g(path) * path[:, i]))
            T[i, j] = kappa * length * line / _interface_norm(q[i], q[j], n_goods)
    return T


def _finite_difference(measure, q: np.ndarray, step: float, convention: Convention) -> np.ndarray:
    n_goods = q.size
    T = np.zeros((n_goods, n_goods))
    for i in range(n_goods):
        down, up = q.copy(), q.copy()
        down[i] *= 1.0 - step
        up[i] *= 1.0 + step
        # same point set on both sides, so sampling noise cancels
        moved = measure.transition_masses(down, up)
        for j in range(n_goods):
            if j != i:
                T[i, j] = moved[i, j] / (2.0 * step * q[i])
    if convention == "barycentric":
        T *= math.sqrt(n_goods)
    return T


def switching_densities(
    model: MeasureLike,
    q: Sequence[float],
    method: Method = "geometric",
    convention: Optional[Convention] = None,
    fd_step: Optional[float] = None,
) -> np.ndarray:
    """
    Off-diagonal switching densities Tᵢⱼ (zero diagonal).

    'geometric' integrates the density along the interface Γᵢ∩Γⱼ (N ≤ 3); 'finite_difference'
    measures the mass moving from Γⱼ into Γᵢ between qᵢ(1−δ) and qᵢ(1+δ) on a common point set.

    Raises:
        UnsupportedMethodError: If geometric is requested with N ≥ 4
    """
    quantities = _positive(q)
    measure = as_measure(model)
    convention = convention or settings.shadow.convention
    if method == "auto":
        method = "geometric" if measure.n_goods <= 3 and measure.renormalized is not None else "finite_difference"
    if method == "geometric":
        if measure.n_goods > 3:
            raise UnsupportedMethodError("geometric method requires N ≤ 3")
        return _geometric(measure, quantities, convention)
    if method == "finite_difference":
        return _finite_difference(measure, quantities, fd_step or settings.shadow.fd_step, convention)
    raise UnsupportedMethodError(f"unknown switching-density method: {method}")


def assemble_J(M: Sequence[float], T: np.ndarray, q: Sequence[float]) -> np.ndarray:
    """Jᵢᵢ = Mᵢ + qᵢΣ_{j≠i}Tᵢⱼ, Jᵢⱼ = −qⱼTᵢⱼ."""
    M = np.asarray(M, dtype=float)
    T = np.array(T, dtype=float)
    quantities = np.asarray(q, dtype=float)
    if T.shape != (M.size, M.size) or quantities.size != M.size:
        raise ShadowCostError(f"inconsistent dimensions: M {M.shape}, T {T.shape}, q {quantities.shape}")
    np.fill_diagonal(T, 0.0)
    J = -T * quantities[None, :]
    J[np.diag_indices_from(J)] = M + quantities * T.sum(axis=1)
    return J


def solve_shadow_costs(J: np.ndarray, A: Sequence[float], q: Sequence[float]) -> ShadowSolve:
    """
    Solve Jc = A by partial-pivot LU and certify c > 0.

    Raises:
        SingularShadowSystemError: If a pivot of J vanishes numerically
        ShadowInvariantError: If H = J·diag(1/q) is not a strictly diagonally dominant M-matrix or c ≤ 0
    """
    J = np.asarray(J, dtype=float)
    A = np.asarray(A, dtype=float)
    quantities = _positive(q)

    lu, piv = lu_factor(J, check_finite=True)
    pivots = np.abs(np.diag(lu))
    scale = max(float(np.max(np.abs(J))), 1e-300)
    small = np.flatnonzero(pivots <= 1e3 * np.finfo(float).eps * scale)
    if small.size:
        raise SingularShadowSystemError(
            f"J is numerically singular: pivot {int(small[0])} is {pivots[small[0]]:.3e}"
        )
    c = lu_solve((lu, piv), A)
    condition = float(np.linalg.cond(J))

    H = J / quantities[None, :]
    off = H - np.diag(np.diag(H))
    margins = np.diag(H) - np.abs(off).sum(axis=1)
    margin = float(margins.min())
    if np.any(off > 0.0) or margin <= 0.0:
        raise ShadowInvariantError(
            f"H = J·diag(1/q) is not a diagonally dominant M-matrix (margin {margin:.3e})"
        )
    if np.any(c <= 0.0):
        raise ShadowInvariantError(
            f"shadow costs must be strictly positive, got {c.tolist()}; check the integration accuracy"
        )
    return ShadowSolve(c, margin, condition)


def shadow_costs(
    model: MeasureLike,
    q: Sequence[float],
    method: Optional[Method] = None,
    convention: Optional[Convention] = None,
    fd_step: Optional[float] = None,
) -> ShadowCostReport:
    """Full shadow-cost pipeline at quantities q."""
    measure = as_measure(model)
    quantities = _positive(q)
    method = method or settings.shadow.method
    convention = convention or settings.shadow.convention
    if method == "auto":
        method = "geometric" if measure.n_goods <= 3 and measure.renormalized is not None else "finite_difference"

    M, A = measure.region_moments(quantities)
    T = switching_densities(measure, quantities, method, convention, fd_step)
    J = assemble_J(M, T, quantities)
    solved = solve_shadow_costs(J, A, quantities)
    residual = A - J @ solved.c
    logger.info(
        "Shadow costs solved",
        method=method,
        convention=convention,
        c=solved.c.tolist(),
        margin=solved.diag_dominance_margin,
        condition=solved.condition_number,
    )
    return ShadowCostReport(
        q=quantities,
        M=M,
        A=A,
        T=T,
        J=J,
        c=solved.c,
        diag_dominance_margin=solved.diag_dominance_margin,
        condition_number=solved.condition_number,
        stationarity_residual=residual,
        method_tags={"method": method, "convention": convention},
    )
