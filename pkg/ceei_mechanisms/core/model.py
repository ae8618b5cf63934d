"""
Value distribution models for the CEEI mechanisms toolkit.

Chain of thought:
1. A ValueModel is a joint density f over a box [0, v̄]ᴺ plus an exact sampler
2. Renormalization maps V to Θ = V / ΣVⱼ; the RenormalizedModel exposes the density g of Θ in
   barycentric coordinates and the welfare weight λ(θ) = E[ΣVⱼ | Θ = θ]
3. Both are ray integrals ∫ f(sθ) s^{N-1} ds and ∫ f(sθ) sᴺ ds, evaluated by registered closed forms
   or by Gauss-Legendre quadrature split at the support-box crossing and at density kinks
4. Sampling is chunked over counter-based streams so draws only depend on (seed, n)
"""

import itertools
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import FrozenSet, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from ..config.settings import settings
from ..utils.integration import (
    Estimate,
    chunk_plan,
    integrate_pieces,
    gauss_legendre,
    mean_and_stderr,
    stream_generator,
)

logger = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-12
NORMALIZATION_TOL = 1e-9

# keeps the (theta, piece, node, good) array of one ray-quadrature batch small
_RAY_BATCH_POINTS = 1 << 18


class ModelDomainError(ValueError):
    """Custom exception for inputs outside the domain of a model operation."""
    pass


class ModelConfigurationError(Exception):
    """Custom exception for invalid or unsupported model definitions."""
    pass


@dataclass(frozen=True)
class SimplexPoint:
    """A relative-value profile θ: nonnegative coordinates summing to one."""

    coords: Tuple[float, ...]

    def __post_init__(self):
        arr = np.asarray(self.coords, dtype=float)
        if arr.ndim != 1 or arr.size < 2:
            raise ModelDomainError(f"simplex point needs at least two coordinates, got {self.coords}")
        if np.any(arr < 0.0) or abs(arr.sum() - 1.0) > SIMPLEX_TOL:
            raise ModelDomainError(f"coordinates {self.coords} do not lie on the simplex")
        object.__setattr__(self, "coords", tuple(float(c) for c in arr))

    @classmethod
    def from_t(cls, t: float) -> "SimplexPoint":
        """Two-good point (t, 1 - t)."""
        return cls((t, 1.0 - t))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.coords, dtype=float)

    @property
    def n_goods(self) -> int:
        return len(self.coords)

    def __getitem__(self, index: int) -> float:
        return self.coords[index]


def renormalize(v: Sequence[float]) -> SimplexPoint:
    """
    Map a value vector to its relative-value profile v / Σvⱼ.

    Raises:
        ModelDomainError: If v has a negative component or is the zero vector
    """
    arr = np.asarray(v, dtype=float)
    if np.any(arr < 0.0):
        raise ModelDomainError(f"value vectors must be nonnegative, got {list(arr)}")
    total = arr.sum()
    if total <= 0.0:
        raise ModelDomainError("renormalization undefined at origin")
    theta = arr / total
    # absorb the last rounding error so the sum-to-one check is exact
    theta[-1] = max(0.0, 1.0 - theta[:-1].sum())
    return SimplexPoint(tuple(theta))


def renormalize_many(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized renormalization; returns (theta, totals) for draws with positive total."""
    totals = values.sum(axis=1)
    safe = np.where(totals > 0.0, totals, 1.0)
    return values / safe[:, None], totals


@dataclass(frozen=True)
class Marginal:
    """One-dimensional marginal on [0, upper] for i.i.d. models."""

    kind: Literal["uniform", "power", "exp_tilt"] = "uniform"
    upper: float = 1.0
    exponent: float = 1.0
    rate: float = 1.0

    def __post_init__(self):
        if self.upper <= 0.0:
            raise ModelConfigurationError(f"marginal upper bound must be positive, got {self.upper}")
        if self.kind == "power" and self.exponent <= 0.0:
            raise ModelConfigurationError(f"power exponent must be positive, got {self.exponent}")
        if self.kind == "exp_tilt" and self.rate == 0.0:
            raise ModelConfigurationError("exp_tilt rate must be nonzero (use kind='uniform')")
        if self.kind not in ("uniform", "power", "exp_tilt"):
            raise ModelConfigurationError(f"unsupported marginal kind: {self.kind}")

    @property
    def _k(self) -> float:
        return 1.0 if self.kind == "uniform" else self.exponent

    def pdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        inside = (x >= 0.0) & (x <= self.upper)
        if self.kind == "exp_tilt":
            value = self.rate * np.exp(self.rate * x) / np.expm1(self.rate * self.upper)
        else:
            k = self._k
            xs = np.clip(x, 0.0, self.upper) / self.upper
            with np.errstate(divide="ignore"):
                value = k * np.power(xs, k - 1.0) / self.upper
        return np.where(inside, value, 0.0)

    def cdf(self, x: np.ndarray) -> np.ndarray:
        x = np.clip(np.asarray(x, dtype=float), 0.0, self.upper)
        if self.kind == "exp_tilt":
            return np.expm1(self.rate * x) / np.expm1(self.rate * self.upper)
        return np.power(x / self.upper, self._k)

    def ppf(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.kind == "exp_tilt":
            return np.log1p(u * np.expm1(self.rate * self.upper)) / self.rate
        return self.upper * np.power(u, 1.0 / self._k)

    @property
    def mean(self) -> float:
        if self.kind == "exp_tilt":
            b = self.rate * self.upper
            return self.upper * math.exp(b) / math.expm1(b) - 1.0 / self.rate
        k = self._k
        return k * self.upper / (k + 1.0)

    @property
    def ratio_at_zero(self) -> float:
        """Limit of x·f(x)/F(x) as x → 0."""
        return 1.0 if self.kind == "exp_tilt" else self._k


class ValueModel(ABC):
    """Joint value distribution F over a box [0, v̄]ᴺ."""

    family: str = ""
    analytic_flags: FrozenSet[str] = frozenset()

    @property
    @abstractmethod
    def n_goods(self) -> int:
        ...

    @property
    @abstractmethod
    def support_box(self) -> Tuple[float, ...]:
        ...

    @property
    @abstractmethod
    def exchangeable(self) -> bool:
        ...

    @abstractmethod
    def density(self, v: np.ndarray) -> np.ndarray:
        """Joint density at points of shape (..., N); zero outside the box."""

    @abstractmethod
    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n i.i.d. draws of shape (n, N) from one generator."""

    def ray_breaks(self, theta: np.ndarray) -> np.ndarray:
        """Ray parameters s at which s ↦ f(sθ) kinks, shape (K, m)."""
        return np.empty((theta.shape[0], 0))

    def ray_extent(self, theta: np.ndarray) -> np.ndarray:
        """Largest s keeping sθ inside the support box."""
        upper = np.asarray(self.support_box, dtype=float)
        with np.errstate(divide="ignore"):
            limits = np.where(theta > 0.0, upper / np.where(theta > 0.0, theta, 1.0), np.inf)
        return limits.min(axis=1)

    def simplex_breaks(self) -> Tuple[float, ...]:
        """Two-good t-locations where g̃ or λ̃ kink."""
        upper = self.support_box
        return (upper[0] / (upper[0] + upper[1]),)

    def total_value_closed_form(self) -> Optional[float]:
        return None

    def g_closed_form(self, theta: np.ndarray) -> Optional[np.ndarray]:
        return None

    def lambda_closed_form(self, theta: np.ndarray) -> Optional[np.ndarray]:
        return None

    def g_tilde_derivative_closed_form(self, t: np.ndarray) -> Optional[np.ndarray]:
        return None

    @property
    def marginal(self) -> Optional[Marginal]:
        """The common marginal for i.i.d. families, else None."""
        return None

    def renormalized(self, ray_nodes: Optional[int] = None) -> "RenormalizedModel":
        return RenormalizedModel(self, ray_nodes or settings.integration.ray_nodes)

    def describe(self) -> dict:
        return {"family": self.family, "n_goods": self.n_goods, "support_box": list(self.support_box)}


@dataclass(frozen=True)
class UniformSquare(ValueModel):
    """Two goods with i.i.d. U(0,1) values."""

    family = "uniform_square"
    analytic_flags = frozenset({"g", "lambda", "g_derivative", "total_value", "marginal_cdf"})

    @property
    def n_goods(self) -> int:
        return 2

    @property
    def support_box(self) -> Tuple[float, ...]:
        return (1.0, 1.0)

    @property
    def exchangeable(self) -> bool:
        return True

    @property
    def marginal(self) -> Marginal:
        return Marginal("uniform", 1.0)

    def density(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        inside = np.all((v >= 0.0) & (v <= 1.0), axis=-1)
        return inside.astype(float)

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.random((n, 2))

    def total_value_closed_form(self) -> float:
        return 1.0

    def g_closed_form(self, theta: np.ndarray) -> np.ndarray:
        top = theta.max(axis=1)
        return 1.0 / (2.0 * top * top)

    def lambda_closed_form(self, theta: np.ndarray) -> np.ndarray:
        return 2.0 / (3.0 * theta.max(axis=1))

    def g_tilde_derivative_closed_form(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.where(t >= 0.5, -1.0 / t**3, 1.0 / (1.0 - t) ** 3)


@dataclass(frozen=True)
class CornerMass(ValueModel):
    """
    Two goods on the unit square with density `hi` on the corner triangles
    v₁+v₂ ≤ a and v₁+v₂ ≥ 2−a, and `lo` elsewhere.
    """

    a: float = 0.2
    hi: float = 20.0
    lo: float = 5.0 / 24.0

    family = "corner_mass"
    analytic_flags = frozenset({"total_value"})

    def __post_init__(self):
        if not 0.0 < self.a <= 1.0:
            raise ModelConfigurationError(f"corner size a must lie in (0, 1], got {self.a}")
        if self.hi < 0.0 or self.lo < 0.0:
            raise ModelConfigurationError("corner_mass densities must be nonnegative")
        error = self.normalization_error()
        if abs(error) > NORMALIZATION_TOL:
            raise ModelConfigurationError(
                f"corner_mass(a={self.a}, hi={self.hi}, lo={self.lo}) integrates to {1.0 + error}, not 1"
            )

    def normalization_error(self) -> float:
        # two triangles of area a²/2 plus the band in between
        return self.hi * self.a**2 + self.lo * (1.0 - self.a**2) - 1.0

    @property
    def n_goods(self) -> int:
        return 2

    @property
    def support_box(self) -> Tuple[float, ...]:
        return (1.0, 1.0)

    @property
    def exchangeable(self) -> bool:
        return True

    def density(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        inside = np.all((v >= 0.0) & (v <= 1.0), axis=-1)
        total = v.sum(axis=-1)
        corner = (total <= self.a) | (total >= 2.0 - self.a)
        return np.where(inside, np.where(corner, self.hi, self.lo), 0.0)

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        corner_mass = 0.5 * self.hi * self.a**2
        counts = rng.multinomial(n, [corner_mass, corner_mass, max(0.0, 1.0 - 2.0 * corner_mass)])
        low = self._triangle(rng, counts[0])
        high = 1.0 - self._triangle(rng, counts[1])
        band = self._band(rng, counts[2])
        draws = np.concatenate([low, high, band], axis=0)
        return draws[rng.permutation(n)]

    def _triangle(self, rng: np.random.Generator, k: int) -> np.ndarray:
        u = rng.random((k, 2))
        flip = u.sum(axis=1) > 1.0
        u[flip] = 1.0 - u[flip]
        return self.a * u

    def _band(self, rng: np.random.Generator, k: int) -> np.ndarray:
        kept: List[np.ndarray] = []
        found = 0
        while found < k:
            u = rng.random((max(2 * (k - found), 64), 2))
            total = u.sum(axis=1)
            u = u[(total > self.a) & (total < 2.0 - self.a)]
            kept.append(u)
            found += len(u)
        return np.concatenate(kept, axis=0)[:k]

    def ray_breaks(self, theta: np.ndarray) -> np.ndarray:
        total = theta.sum(axis=1, keepdims=True)
        return np.concatenate([self.a / total, (2.0 - self.a) / total], axis=1)

    def simplex_breaks(self) -> Tuple[float, ...]:
        edge = 1.0 / (2.0 - self.a)
        return (1.0 - edge, 0.5, edge)

    def total_value_closed_form(self) -> float:
        # the density is invariant under v -> 1 - v, so each mean is 1/2
        return 1.0

    def describe(self) -> dict:
        return {**super().describe(), "a": self.a, "hi": self.hi, "lo": self.lo}


@dataclass(frozen=True)
class IidModel(ValueModel):
    """N goods with i.i.d. values drawn from a common marginal."""

    goods: int = 2
    common: Marginal = field(default_factory=Marginal)

    family = "iid"
    analytic_flags = frozenset({"total_value", "marginal_cdf"})

    def __post_init__(self):
        if self.goods < 2:
            raise ModelConfigurationError(f"n_goods must be at least 2, got {self.goods}")

    @property
    def n_goods(self) -> int:
        return self.goods

    @property
    def support_box(self) -> Tuple[float, ...]:
        return (self.common.upper,) * self.goods

    @property
    def exchangeable(self) -> bool:
        return True

    @property
    def marginal(self) -> Marginal:
        return self.common

    def density(self, v: np.ndarray) -> np.ndarray:
        return np.prod(self.common.pdf(v), axis=-1)

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.common.ppf(rng.random((n, self.goods)))

    def total_value_closed_form(self) -> float:
        return self.goods * self.common.mean

    def describe(self) -> dict:
        return {
            **super().describe(),
            "marginal": {
                "kind": self.common.kind,
                "upper": self.common.upper,
                "exponent": self.common.exponent,
                "rate": self.common.rate,
            },
        }


@dataclass(frozen=True)
class PiecewiseConstantModel(ValueModel):
    """Piecewise-constant density on a regular grid of cells over [0, upper]ᴺ."""

    cells: np.ndarray = field(compare=False, default_factory=lambda: np.ones((1, 1)))
    upper: float = 1.0

    family = "custom_piecewise"
    analytic_flags = frozenset({"total_value"})

    def __post_init__(self):
        cells = np.array(self.cells, dtype=float)
        if cells.ndim < 2:
            raise ModelConfigurationError("custom_piecewise cells must have one axis per good (N ≥ 2)")
        if np.any(cells < 0.0):
            raise ModelConfigurationError("custom_piecewise density must be nonnegative")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        total = float(cells.sum() * self.cell_volume)
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise ModelConfigurationError(f"custom_piecewise density integrates to {total}, not 1")

    @property
    def n_goods(self) -> int:
        return self.cells.ndim

    @property
    def support_box(self) -> Tuple[float, ...]:
        return (self.upper,) * self.n_goods

    @property
    def widths(self) -> np.ndarray:
        return self.upper / np.asarray(self.cells.shape, dtype=float)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.upper / np.asarray(np.shape(self.cells), dtype=float)))

    @property
    def exchangeable(self) -> bool:
        shape = self.cells.shape
        if len(set(shape)) != 1:
            return False
        return all(
            np.array_equal(self.cells, np.transpose(self.cells, perm))
            for perm in itertools.permutations(range(self.n_goods))
        )

    def _edges(self, axis: int) -> np.ndarray:
        return np.linspace(0.0, self.upper, self.cells.shape[axis] + 1)

    def density(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        inside = np.all((v >= 0.0) & (v <= self.upper), axis=-1)
        shape = np.asarray(self.cells.shape)
        index = np.clip(np.floor(v / self.widths).astype(int), 0, shape - 1)
        values = self.cells[tuple(index[..., j] for j in range(self.n_goods))]
        return np.where(inside, values, 0.0)

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        probabilities = (self.cells * self.cell_volume).ravel()
        probabilities = probabilities / probabilities.sum()
        picks = rng.choice(probabilities.size, size=n, p=probabilities)
        corner = np.stack(np.unravel_index(picks, self.cells.shape), axis=1) * self.widths
        return corner + rng.random((n, self.n_goods)) * self.widths

    def ray_breaks(self, theta: np.ndarray) -> np.ndarray:
        columns = []
        for axis in range(self.n_goods):
            inner = self._edges(axis)[1:-1]
            coord = theta[:, axis : axis + 1]
            with np.errstate(divide="ignore"):
                columns.append(np.where(coord > 0.0, inner[None, :] / np.where(coord > 0.0, coord, 1.0), np.inf))
        return np.concatenate(columns, axis=1)

    def simplex_breaks(self) -> Tuple[float, ...]:
        xs, ys = self._edges(0), self._edges(1)
        ratios = {
            float(x / (x + y)) for x in xs for y in ys if x + y > 0.0 and 0.0 < x / (x + y) < 1.0
        }
        return tuple(sorted(ratios))

    def total_value_closed_form(self) -> float:
        mass = self.cells * self.cell_volume
        total = 0.0
        for axis in range(self.n_goods):
            edges = self._edges(axis)
            centres = 0.5 * (edges[:-1] + edges[1:])
            axis_mass = mass.sum(axis=tuple(j for j in range(self.n_goods) if j != axis))
            total += float(np.dot(axis_mass, centres))
        return total

    def describe(self) -> dict:
        return {**super().describe(), "grid": list(self.cells.shape), "upper": self.upper}


@dataclass(frozen=True)
class RenormalizedModel:
    """
    The distribution G of Θ = V/ΣVⱼ and the weight λ(θ) = E[ΣVⱼ | Θ = θ].

    g is a density in barycentric coordinates (θ₁,…,θ_{N−1}) with respect to
    Lebesgue measure on the projected simplex; for two goods it is g̃(t), t = θ₁.
    """

    base: ValueModel
    ray_nodes: int = 64

    @property
    def n_goods(self) -> int:
        return self.base.n_goods

    @property
    def piece_breaks(self) -> Tuple[float, ...]:
        return self.base.simplex_breaks()

    def ray_integrals(self, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(∫ f(sθ) s^{N−1} ds, ∫ f(sθ) sᴺ ds) for each row of theta."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        n_points = theta.shape[0]
        lower = np.empty(n_points)
        upper = np.empty(n_points)
        pieces = self.base.ray_breaks(theta[:1]).shape[1] + 1
        batch = max(1, _RAY_BATCH_POINTS // (pieces * self.ray_nodes * self.n_goods))
        for start in range(0, n_points, batch):
            block = theta[start : start + batch]
            lower[start : start + batch], upper[start : start + batch] = self._ray_block(block)
        return lower, upper

    def _ray_block(self, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        s_max = self.base.ray_extent(theta)
        if np.any(~np.isfinite(s_max)):
            raise ModelDomainError("ray integral diverges: support must be bounded along every ray")
        breaks = np.clip(self.base.ray_breaks(theta), 0.0, s_max[:, None])
        edges = np.sort(np.concatenate([np.zeros((len(theta), 1)), breaks, s_max[:, None]], axis=1), axis=1)
        nodes, weights = gauss_legendre(self.ray_nodes)
        lo, hi = edges[:, :-1], edges[:, 1:]
        half = 0.5 * (hi - lo)
        s = (0.5 * (hi + lo))[..., None] + half[..., None] * nodes
        w = half[..., None] * weights
        f = self.base.density(s[..., None] * theta[:, None, None, :])
        weighted = f * w * s ** (self.n_goods - 1)
        return weighted.sum(axis=(1, 2)), (weighted * s).sum(axis=(1, 2))

    def g(self, theta: np.ndarray) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        closed = self.base.g_closed_form(theta)
        if closed is not None:
            return closed
        return self.ray_integrals(theta)[0]

    def lam(self, theta: np.ndarray) -> np.ndarray:
        """λ(θ); NaN where g(θ) = 0."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        closed = self.base.lambda_closed_form(theta)
        if closed is not None:
            return closed
        lower, upper = self.ray_integrals(theta)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(lower > 0.0, upper / np.where(lower > 0.0, lower, 1.0), np.nan)

    def g_and_weighted_lambda(self, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(g, λ·g) in one pass, zero-safe where g vanishes."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        closed_g = self.base.g_closed_form(theta)
        closed_lam = self.base.lambda_closed_form(theta)
        if closed_g is not None and closed_lam is not None:
            return closed_g, closed_g * closed_lam
        return self.ray_integrals(theta)

    # two-good views in t = θ₁

    def _require_two_goods(self) -> None:
        if self.n_goods != 2:
            raise ModelDomainError(f"two-good coordinate t = θ₁ requires N = 2, model has N = {self.n_goods}")

    @staticmethod
    def _points(t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float).ravel()
        return np.stack([t, 1.0 - t], axis=1)

    def g_tilde(self, t: np.ndarray) -> np.ndarray:
        self._require_two_goods()
        return self.g(self._points(t)).reshape(np.shape(t))

    def lambda_tilde(self, t: np.ndarray) -> np.ndarray:
        self._require_two_goods()
        return self.lam(self._points(t)).reshape(np.shape(t))

    def g_tilde_parts(self, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(g̃, λ̃g̃) at t."""
        self._require_two_goods()
        g, weighted = self.g_and_weighted_lambda(self._points(t))
        return g.reshape(np.shape(t)), weighted.reshape(np.shape(t))

    def g_tilde_derivative(self, t: np.ndarray) -> np.ndarray:
        """
        dg̃/dt, analytic when registered, else finite differences kept inside the
        piece containing t (one-sided next to a piece break; a break itself belongs
        to the piece on its right).
        """
        self._require_two_goods()
        t = np.asarray(t, dtype=float)
        closed = self.base.g_tilde_derivative_closed_form(t)
        if closed is not None:
            return closed
        edges = np.unique(np.concatenate([[0.0], self.piece_breaks, [1.0]]))
        flat = t.ravel()
        piece = np.clip(np.searchsorted(edges, flat, side="right") - 1, 0, len(edges) - 2)
        lo, hi = edges[piece], edges[piece + 1]
        eps = 1e-5 * np.minimum(1.0, hi - lo)
        forward = flat - eps < lo
        backward = (flat + eps > hi) & ~forward
        g0 = self.g_tilde(flat)
        gp = self.g_tilde(np.clip(flat + eps, 0.0, 1.0))
        gm = self.g_tilde(np.clip(flat - eps, 0.0, 1.0))
        gp2 = self.g_tilde(np.clip(flat + 2 * eps, 0.0, 1.0))
        gm2 = self.g_tilde(np.clip(flat - 2 * eps, 0.0, 1.0))
        central = (gp - gm) / (2 * eps)
        ahead = (-3 * g0 + 4 * gp - gp2) / (2 * eps)
        behind = (3 * g0 - 4 * gm + gm2) / (2 * eps)
        result = np.where(forward, ahead, np.where(backward, behind, central))
        return result.reshape(t.shape)


ModelLike = Union[ValueModel, RenormalizedModel]


def as_renormalized(model: ModelLike) -> RenormalizedModel:
    if isinstance(model, RenormalizedModel):
        return model
    return model.renormalized()


def _as_point(theta: Union[SimplexPoint, Sequence[float]]) -> np.ndarray:
    if isinstance(theta, SimplexPoint):
        return theta.array
    return SimplexPoint(tuple(theta)).array


def g_density(model: ModelLike, theta: Union[SimplexPoint, Sequence[float]]) -> float:
    """Density of Θ at θ (barycentric Lebesgue convention)."""
    renorm = as_renormalized(model)
    return float(renorm.g(_as_point(theta)[None, :])[0])


def lambda_weight(model: ModelLike, theta: Union[SimplexPoint, Sequence[float]]) -> float:
    """
    Expected total value E[ΣVⱼ | Θ = θ].

    Raises:
        ModelDomainError: If g(θ) = 0
    """
    renorm = as_renormalized(model)
    point = _as_point(theta)[None, :]
    if renorm.g(point)[0] <= 0.0:
        raise ModelDomainError("λ undefined outside support of G")
    return float(renorm.lam(point)[0])


def sample_values(
    model: ValueModel, n: int, seed: int, chunk_size: Optional[int] = None
) -> np.ndarray:
    """
    Draw n i.i.d. value vectors; deterministic given (seed, n, model).

    Args:
        model: Value distribution
        n: Number of draws (0 gives an empty (0, N) array)
        seed: Stream key
        chunk_size: Draws per counter-based stream (defaults to settings)

    Returns:
        Array of shape (n, N)
    """
    if not isinstance(model, ValueModel):
        raise ModelConfigurationError(f"cannot sample from {type(model).__name__}")
    if n < 0:
        raise ModelDomainError(f"sample count must be nonnegative, got {n}")
    chunk_size = chunk_size or settings.integration.chunk_size
    chunks = [model.draw(stream_generator(seed, stream), size) for stream, size in chunk_plan(n, chunk_size)]
    if not chunks:
        return np.empty((0, model.n_goods))
    return np.concatenate(chunks, axis=0)


def iter_value_chunks(model: ValueModel, n: int, seed: int, chunk_size: Optional[int] = None):
    """Yield the same draws as sample_values, one stream chunk at a time."""
    chunk_size = chunk_size or settings.integration.chunk_size
    for stream, size in chunk_plan(n, chunk_size):
        yield model.draw(stream_generator(seed, stream), size)


def expected_total_value(model: ValueModel, n: Optional[int] = None, seed: Optional[int] = None) -> Estimate:
    """E[ΣVⱼ]: closed form when registered, else a Monte Carlo mean with its standard error."""
    closed = model.total_value_closed_form()
    if closed is not None:
        return Estimate(float(closed), 0.0)
    n = n or settings.integration.mc_samples
    seed = settings.integration.seed if seed is None else seed
    sums, squares = [], []
    for values in iter_value_chunks(model, n, seed):
        totals = values.sum(axis=1)
        sums.append(totals.sum())
        squares.append(np.dot(totals, totals))
    estimate = mean_and_stderr(sums, squares, n)
    logger.info(f"E[total value] by MC: {estimate.value:.6f} ± {estimate.stderr:.2e} ({n} draws)")
    return estimate


def lambda_mean(model: ModelLike, n: int, seed: int) -> Estimate:
    """MC estimate of ∫ λ dG from renormalized draws (tower-property check)."""
    renorm = as_renormalized(model)
    sums, squares = [], []
    for values in iter_value_chunks(renorm.base, n, seed):
        theta, totals = renormalize_many(values)
        lam = renorm.lam(theta[totals > 0.0])
        sums.append(lam.sum())
        squares.append(np.dot(lam, lam))
    return mean_and_stderr(sums, squares, n)


def pushforward_discrepancy(model: ModelLike, n: int, seed: int, bins: int = 50) -> float:
    """
    χ² per degree of freedom between binned renormalized draws and g̃ (two goods).

    Values near 1 mean the sampler and the density agree.
    """
    renorm = as_renormalized(model)
    renorm._require_two_goods()
    values = sample_values(renorm.base, n, seed)
    theta, _ = renormalize_many(values)
    edges = np.linspace(0.0, 1.0, bins + 1)
    observed, _ = np.histogram(theta[:, 0], bins=edges)
    expected = np.array(
        [
            integrate_pieces(renorm.g_tilde, lo, hi, renorm.piece_breaks, renorm.ray_nodes).value
            for lo, hi in zip(edges[:-1], edges[1:])
        ]
    ) * n
    mask = expected > 0.0
    chi2 = float(np.sum((observed[mask] - expected[mask]) ** 2 / expected[mask]))
    return chi2 / max(int(mask.sum()) - 1, 1)


class MarginalSpec(BaseModel):
    """Marginal of an i.i.d. family."""

    kind: Literal["uniform", "power", "exp_tilt"] = "uniform"
    upper: float = Field(default=1.0, gt=0.0)
    exponent: float = Field(default=1.0, gt=0.0)
    rate: float = 1.0


class DistributionSpec(BaseModel):
    """Distribution section of a run configuration."""

    family: Literal["uniform_square", "corner_mass", "iid", "custom_piecewise"]
    n_goods: int = Field(default=2, ge=2)
    a: float = 0.2
    hi: float = 20.0
    lo: float = 5.0 / 24.0
    marginal: MarginalSpec = Field(default_factory=MarginalSpec)
    cells: Optional[list] = None
    upper: float = Field(default=1.0, gt=0.0)


def build_model(spec: DistributionSpec) -> ValueModel:
    """
    Create a ValueModel from its configuration.

    Raises:
        ModelConfigurationError: If the family parameters are inconsistent
    """
    if spec.family == "uniform_square":
        if spec.n_goods != 2:
            raise ModelConfigurationError("uniform_square is a two-good family; use iid for N > 2")
        return UniformSquare()
    if spec.family == "corner_mass":
        if spec.n_goods != 2:
            raise ModelConfigurationError("corner_mass is a two-good family")
        return CornerMass(spec.a, spec.hi, spec.lo)
    if spec.family == "iid":
        marginal = Marginal(spec.marginal.kind, spec.marginal.upper, spec.marginal.exponent, spec.marginal.rate)
        return IidModel(spec.n_goods, marginal)
    if spec.family == "custom_piecewise":
        if spec.cells is None:
            raise ModelConfigurationError("custom_piecewise needs a 'cells' array")
        model = PiecewiseConstantModel(np.asarray(spec.cells, dtype=float), spec.upper)
        if model.n_goods != spec.n_goods:
            raise ModelConfigurationError(
                f"cells array has {model.n_goods} axes but n_goods is {spec.n_goods}"
            )
        return model
    raise ModelConfigurationError(f"unsupported distribution family: {spec.family}")
