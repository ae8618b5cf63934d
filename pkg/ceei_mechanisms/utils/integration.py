"""
Numerical integration and random-stream helpers shared by the solvers.

Chain of thought:
1. Gauss-Legendre rules come from numpy and are cached per node count
2. Piecewise integration splits at caller-supplied breaks so kinked integrands stay exact
3. Every MC draw comes from a Philox stream keyed by (seed, stream index), so chunked
   sampling gives the same numbers regardless of how the chunks are scheduled
4. Chunk partial sums are reduced with math.fsum, which does not depend on summation order
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Iterator, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Estimate:
    """A numerical value with its standard error (MC) or error estimate (quadrature)."""

    value: float
    stderr: float = 0.0

    def within(self, target: float, sigmas: float = 3.0, floor: float = 0.0) -> bool:
        """True when target lies within `sigmas` standard errors (plus an absolute floor)."""
        return abs(self.value - target) <= sigmas * self.stderr + floor


@lru_cache(maxsize=32)
def gauss_legendre(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1]."""
    nodes, weights = np.polynomial.legendre.leggauss(n)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def piece_edges(lo: float, hi: float, breaks: Iterable[float]) -> np.ndarray:
    """Sorted edges of [lo, hi] split at every break strictly inside the interval."""
    inner = [b for b in breaks if lo < b < hi]
    return np.unique(np.asarray([lo, *inner, hi], dtype=float))


def piecewise_nodes(edges: np.ndarray, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Flattened quadrature nodes and weights of an n-point rule on every piece."""
    nodes, weights = gauss_legendre(n)
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    x = (mid[:, None] + half[:, None] * nodes).ravel()
    w = (half[:, None] * weights).ravel()
    return x, w


def integrate_pieces(
    func: Callable[[np.ndarray], np.ndarray],
    lo: float,
    hi: float,
    breaks: Iterable[float] = (),
    n: int = 64,
) -> Estimate:
    """
    Integrate a vectorized function over [lo, hi] piece by piece.

    Args:
        func: Callable evaluated on an array of abscissae
        lo: Lower limit
        hi: Upper limit
        breaks: Kink locations; only those strictly inside (lo, hi) are used
        n: Nodes per piece (even)

    Returns:
        Estimate whose stderr is |I_n - I_{n/2}|
    """
    if hi <= lo:
        return Estimate(0.0, 0.0)
    edges = piece_edges(lo, hi, breaks)
    x, w = piecewise_nodes(edges, n)
    fine = float(np.dot(w, func(x)))
    x, w = piecewise_nodes(edges, n // 2)
    coarse = float(np.dot(w, func(x)))
    return Estimate(fine, abs(fine - coarse))


def stream_generator(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator for one (seed, stream) pair."""
    sequence = np.random.SeedSequence([int(seed), int(stream)])
    return np.random.Generator(np.random.Philox(sequence))


def chunk_plan(n: int, chunk_size: int) -> Iterator[Tuple[int, int]]:
    """Yield (stream index, chunk length) covering n draws."""
    stream = 0
    remaining = n
    while remaining > 0:
        size = min(chunk_size, remaining)
        yield stream, size
        remaining -= size
        stream += 1


def stable_sum(parts: Sequence[float]) -> float:
    """Order-independent sum of chunk partial sums."""
    return math.fsum(float(p) for p in parts)


def mean_and_stderr(sums: Sequence[float], squares: Sequence[float], n: int) -> Estimate:
    """Sample mean and its standard error from chunked sums and sums of squares."""
    if n <= 0:
        return Estimate(0.0, 0.0)
    total = stable_sum(sums)
    total_sq = stable_sum(squares)
    mean = total / n
    if n == 1:
        return Estimate(mean, 0.0)
    variance = max(total_sq / n - mean * mean, 0.0) * n / (n - 1)
    return Estimate(mean, math.sqrt(variance / n))
