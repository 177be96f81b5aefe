"""Periodic grids and signed cell-average densities.

The computational domain is the flat torus [0, L)^d with d in {1, 2}.  A
``SignedDensity`` stores one value per cell, interpreted as the cell average;
as a measure it is the sum of atoms of weight ``value * h^d`` at the cell
centers.  The length L defaults to 1; the oscillatory velocity family lives
on its native 2*pi-periodic circle, which is why L is kept general.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on [0, length)^dim with n cells per axis."""

    dim: int
    n: int
    length: float = 1.0

    def __post_init__(self) -> None:
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.n < 2 or (self.n & (self.n - 1)) != 0:
            raise ValueError(f"cells per axis must be a power of two >= 2, got {self.n}")
        if not self.length > 0:
            raise ValueError("length must be positive")

    @property
    def h(self) -> float:
        return self.length / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def ncells(self) -> int:
        return self.n**self.dim

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    def axis_centers(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) * self.h

    def centers(self) -> np.ndarray:
        """Cell centers as an (ncells, dim) array in C order."""
        c = self.axis_centers()
        if self.dim == 1:
            return c[:, None]
        X, Y = np.meshgrid(c, c, indexing="ij")
        return np.stack([X.ravel(), Y.ravel()], axis=1)

    def periodic_delta(self, x, y) -> np.ndarray:
        """Signed displacement x - y wrapped to [-length/2, length/2) per axis."""
        d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        L = self.length
        return d - L * np.round(d / L)

    def periodic_distance(self, x, y) -> np.ndarray:
        d = self.periodic_delta(x, y)
        if self.dim == 1:
            return np.abs(d)[..., 0] if d.ndim > 1 else np.abs(d)
        return np.sqrt((d * d).sum(axis=-1))


def periodic_distance_matrix(pos_a: np.ndarray, pos_b: np.ndarray, length: float) -> np.ndarray:
    """Pairwise periodic distances between point sets of shape (m, d), (k, d)."""
    d = pos_a[:, None, :] - pos_b[None, :, :]
    d -= length * np.round(d / length)
    if pos_a.shape[1] == 1:
        return np.abs(d[:, :, 0])
    return np.sqrt((d * d).sum(axis=-1))


@dataclass
class SignedDensity:
    """Signed grid function; values are cell averages."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")

    def copy(self) -> "SignedDensity":
        return SignedDensity(self.grid, self.values.copy())


def density_from_function(grid: Grid, fn) -> SignedDensity:
    """Sample a function of position at the cell centers (midpoint rule)."""
    c = grid.axis_centers()
    if grid.dim == 1:
        return SignedDensity(grid, np.asarray(fn(c), dtype=float))
    X, Y = np.meshgrid(c, c, indexing="ij")
    return SignedDensity(grid, np.asarray(fn(X, Y), dtype=float))


def mass(eta: SignedDensity) -> float:
    return float(eta.values.sum() * eta.grid.cell_volume)


def jordan_decompose(eta: SignedDensity) -> tuple[SignedDensity, SignedDensity]:
    """Split into nonnegative parts eta = pos - neg with disjoint supports."""
    pos = np.maximum(eta.values, 0.0)
    neg = np.maximum(-eta.values, 0.0)
    return SignedDensity(eta.grid, pos), SignedDensity(eta.grid, neg)


def lq_norm(eta: SignedDensity, q: float) -> float:
    """Discrete L^q norm of the cell averages; q in [1, inf]."""
    if q != np.inf and q < 1:
        raise ValueError(f"q must be in [1, inf], got {q}")
    v = np.abs(eta.values)
    if q == np.inf:
        return float(v.max()) if v.size else 0.0
    hv = eta.grid.cell_volume
    return float((v**q).sum() * hv) ** (1.0 / q)


def mean_zero_projection(eta: SignedDensity) -> SignedDensity:
    """Subtract the mean (twice, to kill the floating-point residual)."""
    v = eta.values - eta.values.mean()
    v -= v.mean()
    return SignedDensity(eta.grid, v)


def density_to_csv(eta: SignedDensity, path) -> None:
    """Flat CSV layout: index, x-coordinates..., value."""
    centers = eta.grid.centers()
    flat = eta.values.ravel()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index"] + [f"x{i}" for i in range(eta.grid.dim)] + ["value"])
        for i in range(flat.size):
            w.writerow([i] + [repr(float(c)) for c in centers[i]] + [repr(float(flat[i]))])
