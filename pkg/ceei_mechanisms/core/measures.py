"""
Integration backends over the type simplex.

Chain of thought:
1. Every solver needs the same handful of integrals against G: region masses at a quantity
   vector q, region moments ∫_{Γᵢ} θᵢλ dG, the potential integral, and the mass moving between
   regions when q changes
2. With two goods the regions are intervals in t = θ₁ split at t₀ = q₂/(q₁+q₂), so all of these
   are exact piecewise Gauss-Legendre integrals of g̃ and λ̃g̃
3. Otherwise a fixed weighted point set stands in for G; each point carries the total value ΣV of
   the draw it came from, so θᵢ·ΣV = Vᵢ and the moments need no λ evaluation
4. The point-set potential is smoothed with a log-sum-exp temperature so the Newton solver sees a
   deterministic, twice-differentiable surrogate
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Literal, Optional, Tuple, Union

import numpy as np
from scipy.special import logsumexp, softmax

from ..config.settings import settings
from ..utils.integration import Estimate, integrate_pieces
from .model import (
    ModelLike,
    RenormalizedModel,
    SimplexPoint,
    ValueModel,
    as_renormalized,
    renormalize_many,
    sample_values,
)

logger = logging.getLogger(__name__)

TIE_TOL = 1e-12


class IntegrationModeError(Exception):
    """Custom exception for integration backends that cannot serve a model."""
    pass


def region_indices(theta: np.ndarray, q: np.ndarray) -> np.ndarray:
    """argmaxⱼ θⱼqⱼ per row, lowest index on ties."""
    return np.argmax(theta * q, axis=1)


class TypeMeasure(ABC):
    """A distribution over the simplex that the solvers integrate against."""

    exact: bool = False

    @property
    @abstractmethod
    def n_goods(self) -> int:
        ...

    @property
    def renormalized(self) -> Optional[RenormalizedModel]:
        """Density-level view of the underlying model, when one exists."""
        return None

    @abstractmethod
    def region_masses(self, q: np.ndarray) -> np.ndarray:
        """G(Γᵢ) for the pure-option regions induced by q."""

    @abstractmethod
    def region_moments(self, q: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(M, A) with Mᵢ = G(Γᵢ) and Aᵢ = ∫_{Γᵢ} θᵢλ dG."""

    @abstractmethod
    def potential_integral(self, y: np.ndarray) -> Estimate:
        """∫ maxⱼ (log θⱼ − yⱼ) dG with an error estimate."""

    def potential_masses(self, y: np.ndarray) -> np.ndarray:
        """Masses entering ∂Ψ/∂y; the region masses at q = e^{−y} unless smoothed."""
        return self.region_masses(np.exp(-np.asarray(y, dtype=float)))

    def split_masses(self, q: np.ndarray) -> np.ndarray:
        """Region masses with exact ties split proportionally to q (ties are G-null here)."""
        return self.region_masses(q)

    @abstractmethod
    def transition_masses(self, q_from: np.ndarray, q_to: np.ndarray) -> np.ndarray:
        """Matrix whose (i, j) entry is the mass in Γⱼ at q_from and in Γᵢ at q_to."""

    @abstractmethod
    def mean_total_value(self) -> Estimate:
        """E[ΣVⱼ]."""


@dataclass(frozen=True)
class IntervalQuadrature(TypeMeasure):
    """Exact two-good backend: piecewise Gauss-Legendre in t = θ₁."""

    model: RenormalizedModel
    nodes: int = 64

    exact = True

    def __post_init__(self):
        if self.model.n_goods != 2:
            raise IntegrationModeError(
                f"quadrature backend needs N = 2, model has N = {self.model.n_goods}; use mode 'mc'"
            )

    @property
    def n_goods(self) -> int:
        return 2

    @property
    def renormalized(self) -> RenormalizedModel:
        return self.model

    @staticmethod
    def split_point(q: np.ndarray) -> float:
        """t₀ = q₂/(q₁+q₂): types with t ≥ t₀ choose good 0."""
        q = np.asarray(q, dtype=float)
        return float(q[1] / (q[0] + q[1]))

    def _integrate(self, func, lo: float, hi: float, extra_breaks=()) -> Estimate:
        breaks = tuple(self.model.piece_breaks) + tuple(extra_breaks)
        return integrate_pieces(func, lo, hi, breaks, self.nodes)

    def _g(self, t: np.ndarray) -> np.ndarray:
        return self.model.g_tilde(t)

    def _weighted(self, t: np.ndarray) -> np.ndarray:
        return self.model.g_tilde_parts(t)[1]

    def region_masses(self, q: np.ndarray) -> np.ndarray:
        t0 = self.split_point(q)
        upper = self._integrate(self._g, t0, 1.0).value
        lower = self._integrate(self._g, 0.0, t0).value
        return np.array([upper, lower])

    def region_moments(self, q: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        t0 = self.split_point(q)
        masses = self.region_masses(q)
        a_first = self._integrate(lambda t: t * self._weighted(t), t0, 1.0).value
        a_second = self._integrate(lambda t: (1.0 - t) * self._weighted(t), 0.0, t0).value
        return masses, np.array([a_first, a_second])

    def potential_integral(self, y: np.ndarray) -> Estimate:
        y = np.asarray(y, dtype=float)
        t0 = self.split_point(np.exp(-y))
        upper = self._integrate(lambda t: (np.log(t) - y[0]) * self._g(t), t0, 1.0)
        lower = self._integrate(lambda t: (np.log1p(-t) - y[1]) * self._g(t), 0.0, t0)
        return Estimate(upper.value + lower.value, upper.stderr + lower.stderr)

    def transition_masses(self, q_from: np.ndarray, q_to: np.ndarray) -> np.ndarray:
        regions_from = self._regions(self.split_point(q_from))
        regions_to = self._regions(self.split_point(q_to))
        moved = np.zeros((2, 2))
        for i, (lo_to, hi_to) in enumerate(regions_to):
            for j, (lo_from, hi_from) in enumerate(regions_from):
                lo, hi = max(lo_to, lo_from), min(hi_to, hi_from)
                if hi > lo:
                    moved[i, j] = self._integrate(self._g, lo, hi).value
        return moved

    @staticmethod
    def _regions(t0: float) -> Tuple[Tuple[float, float], Tuple[float, float]]:
        return (t0, 1.0), (0.0, t0)

    def mean_total_value(self) -> Estimate:
        return self._integrate(self._weighted, 0.0, 1.0)


@dataclass(frozen=True)
class SimplexPointSet(TypeMeasure):
    """
    A fixed weighted set of simplex points standing in for G.

    `totals` holds ΣV of the draw behind each point (all ones for synthetic point masses);
    `smoothing` is the log-sum-exp temperature of the potential (0 gives the hard max).
    """

    theta: np.ndarray = field(compare=False)
    weights: np.ndarray = field(compare=False)
    totals: np.ndarray = field(compare=False)
    smoothing: float = 0.0
    model: Optional[RenormalizedModel] = None

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float, ndmin=2)
        weights = np.array(self.weights, dtype=float)
        totals = np.array(self.totals, dtype=float)
        if theta.shape[0] != weights.shape[0] or theta.shape[0] != totals.shape[0]:
            raise IntegrationModeError("point set arrays must have one row per point")
        if theta.shape[1] < 2:
            raise IntegrationModeError("point set needs at least two goods")
        for arr in (theta, weights, totals):
            arr.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "totals", totals)

    @classmethod
    def from_samples(
        cls,
        model: ValueModel,
        n: int,
        seed: int,
        smoothing: float = 0.0,
    ) -> "SimplexPointSet":
        """Renormalized draws from F, equally weighted."""
        values = sample_values(model, n, seed)
        theta, totals = renormalize_many(values)
        keep = totals > 0.0
        theta, totals = theta[keep], totals[keep]
        weights = np.full(len(theta), 1.0 / max(n, 1))
        logger.info(f"Built point set with {len(theta)} renormalized draws (seed={seed})")
        return cls(theta, weights, totals, smoothing, model.renormalized())

    @classmethod
    def point_mass(cls, theta: Union[SimplexPoint, np.ndarray], total: float = 1.0) -> "SimplexPointSet":
        """Degenerate G concentrated at one type."""
        point = theta.array if isinstance(theta, SimplexPoint) else SimplexPoint(tuple(theta)).array
        return cls(point[None, :], np.ones(1), np.array([total]), 0.0, None)

    @property
    def n_goods(self) -> int:
        return self.theta.shape[1]

    @property
    def size(self) -> int:
        return self.theta.shape[0]

    @property
    def renormalized(self) -> Optional[RenormalizedModel]:
        return self.model

    def _indicators(self, q: np.ndarray) -> np.ndarray:
        index = region_indices(self.theta, np.asarray(q, dtype=float))
        return np.eye(self.n_goods)[index]

    def region_masses(self, q: np.ndarray) -> np.ndarray:
        return self.weights @ self._indicators(q)

    def region_shares(self, q: np.ndarray) -> np.ndarray:
        """Per-point choice shares with exact ties split proportionally to q."""
        q = np.asarray(q, dtype=float)
        score = self.theta * q
        top = score.max(axis=1, keepdims=True)
        tied = score >= top * (1.0 - TIE_TOL)
        share = np.where(tied, q, 0.0)
        return share / share.sum(axis=1, keepdims=True)

    def split_masses(self, q: np.ndarray) -> np.ndarray:
        """Region masses under proportional tie splitting."""
        return self.weights @ self.region_shares(q)

    def region_moments(self, q: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        indicators = self._indicators(q)
        masses = self.weights @ indicators
        moments = (self.weights * self.totals) @ (self.theta * indicators)
        return masses, moments

    def _weighted_estimate(self, per_point: np.ndarray) -> Estimate:
        value = float(np.dot(self.weights, per_point))
        if self.size < 2:
            return Estimate(value, 0.0)
        variance = float(np.dot(self.weights, (per_point - value) ** 2)) * self.size / (self.size - 1)
        return Estimate(value, float(np.sqrt(variance / self.size)))

    def _scores(self, y: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.theta) - np.asarray(y, dtype=float)

    def potential_integral(self, y: np.ndarray) -> Estimate:
        scores = self._scores(y)
        if self.smoothing > 0.0:
            per_point = self.smoothing * logsumexp(scores / self.smoothing, axis=1)
        else:
            per_point = scores.max(axis=1)
        return self._weighted_estimate(per_point)

    def potential_masses(self, y: np.ndarray) -> np.ndarray:
        if self.smoothing <= 0.0:
            return self.region_masses(np.exp(-np.asarray(y, dtype=float)))
        return self.weights @ softmax(self._scores(y) / self.smoothing, axis=1)

    def transition_masses(self, q_from: np.ndarray, q_to: np.ndarray) -> np.ndarray:
        before = self._indicators(q_from)
        after = self._indicators(q_to)
        return (after * self.weights[:, None]).T @ before

    def mean_total_value(self) -> Estimate:
        return self._weighted_estimate(self.totals)


MeasureLike = Union[TypeMeasure, ValueModel, RenormalizedModel]


def build_measure(
    model: ModelLike,
    mode: Optional[Literal["quadrature", "mc", "auto"]] = None,
    samples: Optional[int] = None,
    seed: Optional[int] = None,
    smoothing: Optional[float] = None,
) -> TypeMeasure:
    """
    Pick the integration backend for a model.

    'auto' uses interval quadrature for two goods and a sampled point set otherwise.

    Raises:
        IntegrationModeError: If quadrature is requested for N ≥ 3
    """
    mode = mode or settings.integration.mode
    renorm = as_renormalized(model)
    if mode == "auto":
        mode = "quadrature" if renorm.n_goods == 2 else "mc"
    if mode == "quadrature":
        if renorm.n_goods != 2:
            raise IntegrationModeError(
                f"quadrature mode supports two goods only (N = {renorm.n_goods}); use mode 'mc'"
            )
        return IntervalQuadrature(renorm, renorm.ray_nodes)
    samples = samples or settings.integration.mc_samples
    seed = settings.integration.seed if seed is None else seed
    smoothing = settings.integration.smoothing if smoothing is None else smoothing
    return SimplexPointSet.from_samples(renorm.base, samples, seed, smoothing)


def as_measure(obj: MeasureLike) -> TypeMeasure:
    """Use a measure as is; build the default backend for a model."""
    if isinstance(obj, TypeMeasure):
        return obj
    return build_measure(obj)
