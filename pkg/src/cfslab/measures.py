"""Discrete measures: weighted finite families of spacetime points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SpacetimePoint, conjugate_point
from .errors import PreconditionError


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point set; the support plays the role of spacetime M."""

    points: tuple[SpacetimePoint, ...]
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(self.points) == 0:
            raise PreconditionError("a measure needs at least one point")
        if w.shape != (len(self.points),):
            raise PreconditionError("one weight per point required")
        if np.any(w <= 0):
            raise PreconditionError("weights must be strictly positive")
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def dim_f(self) -> int:
        return self.points[0].dim_f

    @property
    def n(self) -> int:
        return self.points[0].n

    @property
    def volume(self) -> float:
        return float(self.weights.sum())

    def wave_dim(self) -> int:
        return len(self.points) * 2 * self.n


def measure(points, weights=None) -> DiscreteMeasure:
    pts = tuple(points)
    if weights is None:
        weights = np.ones(len(pts))
    return DiscreteMeasure(points=pts, weights=np.asarray(weights, dtype=float))


def prune_zero_weights(rho: DiscreteMeasure, tol: float = 0.0) -> DiscreteMeasure:
    keep = rho.weights > tol
    return measure([p for p, k in zip(rho.points, keep) if k], rho.weights[keep])


def conjugate_measure(rho: DiscreteMeasure, u) -> DiscreteMeasure:
    """Push-forward under x -> U x U^*; frames are transported by U."""
    return measure([conjugate_point(p, u) for p in rho.points], rho.weights.copy())


def physical_wave(rho: DiscreteMeasure, u) -> np.ndarray:
    """Wave function of a Hilbert-space vector: psi^u(x_i) = V_i^* u, stacked.

    Returns an (N, 2n) array of frame coordinates.
    """
    u = np.asarray(u, dtype=complex)
    return np.stack([p.frame.conj().T @ u for p in rho.points])


def wave_matrix(rho: DiscreteMeasure, basis) -> np.ndarray:
    """Wave functions of several vectors as a (N*2n, d) matrix, point-major."""
    cols = [physical_wave(rho, u).reshape(-1) for u in np.asarray(basis, dtype=complex).T]
    return np.stack(cols, axis=1)
