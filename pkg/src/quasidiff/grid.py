"""Uniform periodic grids (torus) in one and two dimensions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Periodic box of side ``length`` with ``n`` cells per axis.

    Cell centers sit at (i + 1/2)*dx along each axis; the face between
    cells i and i+1 (mod n) sits at (i + 1)*dx.  All indexing wraps
    modulo n, so the grid is a torus approximating free space.
    """

    dim: int
    n: int
    length: float

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.n < 4:
            raise ValueError(f"need at least 4 cells per axis, got {self.n}")
        if not (self.length > 0 and np.isfinite(self.length)):
            raise ValueError(f"box length must be positive, got {self.length}")

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def num_cells(self) -> int:
        return self.n**self.dim

    @property
    def cell_volume(self) -> float:
        return self.dx**self.dim

    def axis_coords(self) -> np.ndarray:
        """Cell-center coordinates along one axis."""
        return (np.arange(self.n) + 0.5) * self.dx

    def coords(self) -> tuple:
        """Cell-center coordinate arrays, broadcastable to ``shape``."""
        x = self.axis_coords()
        return tuple(
            x.reshape((1,) * a + (self.n,) + (1,) * (self.dim - 1 - a))
            for a in range(self.dim)
        )

    def face_coords(self, axis: int) -> tuple:
        """Coordinates of face midpoints normal to ``axis`` (center + dx/2)."""
        out = list(self.coords())
        out[axis] = out[axis] + 0.5 * self.dx
        return tuple(out)

    def wavenumbers(self) -> tuple:
        """Angular wavenumbers 2*pi*fftfreq per axis, broadcastable to ``shape``."""
        k = 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.dx)
        return tuple(
            k.reshape((1,) * a + (self.n,) + (1,) * (self.dim - 1 - a))
            for a in range(self.dim)
        )

    def min_image(self, delta):
        """Reduce coordinate offsets to the nearest periodic image."""
        return delta - self.length * np.round(np.asarray(delta) / self.length)

    def periodic_distance_from_origin(self) -> np.ndarray:
        """Distance of each cell-center offset from the origin cell offset 0."""
        d = np.arange(self.n) * self.dx
        d = np.minimum(d, self.length - d)
        if self.dim == 1:
            return d
        return np.sqrt(d[:, None] ** 2 + d[None, :] ** 2)

    def validity_horizon(self, lam: float) -> float:
        """Horizon (L/8)^2 / lam beyond which wrap-around contaminates solves."""
        if not lam > 0:
            raise ValueError("ellipticity constant must be positive")
        return (self.length / 8.0) ** 2 / lam
