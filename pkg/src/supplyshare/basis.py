"""Per-region clamped B-spline bases with a knot on the latest survey year."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import bspline_basis
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class BasisConfig:
    degree: int = 3
    spacing: int = 5

    def __post_init__(self):
        if self.degree < 0:
            raise ConfigError("spline degree must be non-negative")
        if self.spacing < 1:
            raise ConfigError("knot spacing must be at least one year")


@dataclass(frozen=True)
class KnotVector:
    """Distinct knots on an arithmetic progression through the anchor year.

    ``interior_knots`` holds every distinct knot, ends included; the ends are
    replicated ``degree`` more times in :attr:`full` (clamped B-spline).
    """

    interior_knots: tuple[float, ...]
    k_star_index: int
    degree: int

    @property
    def boundary_knots(self) -> tuple[tuple[float, ...], tuple[float, ...]]:
        lo, hi = self.interior_knots[0], self.interior_knots[-1]
        return (lo,) * self.degree, (hi,) * self.degree

    @property
    def full(self) -> np.ndarray:
        left, right = self.boundary_knots
        return np.array(left + self.interior_knots + right, dtype=float)

    @property
    def n_basis(self) -> int:
        return len(self.interior_knots) + self.degree - 1

    @property
    def anchor_year(self) -> float:
        return self.interior_knots[self.k_star_index]

    @property
    def anchor_basis(self) -> int:
        """0-based index of the basis function centred on the anchor knot.

        Its coefficient is the anchored spline coefficient (the proxy
        intercept) in the forward/backward recursion.
        """
        return min(self.k_star_index + self.degree // 2, self.n_basis - 1)

    def shifted(self, offset: float) -> "KnotVector":
        return KnotVector(tuple(k + offset for k in self.interior_knots), self.k_star_index,
                          self.degree)


def place_knots(time_window, last_survey_year, spacing: int = 5, degree: int = 3) -> KnotVector:
    """Equally spaced knots anchored so one lands exactly on ``last_survey_year``.

    The progression is extended outwards until it covers ``time_window``.
    """
    start, end = time_window
    if spacing < 1:
        raise ConfigError("knot spacing must be at least one year")
    if end - start < spacing:
        raise ConfigError(f"time window {time_window} shorter than one knot spacing ({spacing})")
    if not start <= last_survey_year <= end:
        raise DataError(f"anchor year {last_survey_year} outside time window {time_window}")
    n_before = math.ceil((last_survey_year - start) / spacing)
    n_after = math.ceil((end - last_survey_year) / spacing)
    knots = tuple(float(last_survey_year + j * spacing) for j in range(-n_before, n_after + 1))
    if len(knots) < 2:
        raise ConfigError("need at least two distinct knots")
    return KnotVector(knots, n_before, degree)


@dataclass(frozen=True)
class BasisMatrix:
    grid: np.ndarray
    values: np.ndarray

    @property
    def K(self) -> int:
        return self.values.shape[1]


def build_basis(knots: KnotVector, grid) -> BasisMatrix:
    """Evaluate every basis function on ``grid`` (Cox-de Boor recursion)."""
    grid = np.asarray(grid, dtype=float)
    lo, hi = knots.interior_knots[0], knots.interior_knots[-1]
    if np.any(grid < lo) or np.any(grid > hi):
        raise DataError(f"grid extends outside knot span [{lo}, {hi}]")
    values = bspline_basis(knots.full, knots.degree, grid)
    return BasisMatrix(grid, values)


def annual_grid(time_window) -> np.ndarray:
    start, end = time_window
    return np.arange(int(start), int(end) + 1)
