"""Sampled scalar, vector and matrix fields on a periodic grid.

Conventions
-----------
Scalar values live at cell centers.  Vector fields carry a leading
component axis of size ``dim``; by default components are sampled at
cell centers, but solver internals also use *face* layout, where
component ``a`` at index ``i`` lives on the face between cells ``i`` and
``i+1`` along axis ``a`` (position center + dx/2).  Matrix fields carry
two leading axes of size ``dim``.  Time-dependent data stacks frames
along a leading time axis.
"""

from __future__ import annotations

import numpy as np

from .errors import QuasidiffError
from .grid import Grid

SCALAR = ()


def _freeze(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


def _check_finite(values, what):
    if not np.all(np.isfinite(values)):
        raise QuasidiffError(f"{what} contains non-finite values")


class ScalarField:
    """A scalar sample per grid cell, immutable after construction."""

    def __init__(self, grid: Grid, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != grid.shape:
            raise QuasidiffError(
                f"values shape {values.shape} does not match grid shape {grid.shape}"
            )
        _check_finite(values, "ScalarField")
        self.grid = grid
        self.values = _freeze(values)

    @classmethod
    def constant(cls, grid: Grid, c: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(c)))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "ScalarField":
        return cls(grid, np.broadcast_to(fn(*grid.coords()), grid.shape))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def mean(self) -> float:
        return float(np.mean(self.values))

    def shifted(self, cells) -> "ScalarField":
        """Translate by whole cells (periodic roll); used for equivariance checks."""
        cells = (cells,) if np.isscalar(cells) else tuple(cells)
        return ScalarField(self.grid, np.roll(self.values, cells, axis=tuple(range(self.grid.dim))))

    def grid_lipschitz(self) -> float:
        """Largest one-cell difference quotient, max over axes."""
        out = 0.0
        for a in range(self.grid.dim):
            d = np.abs(np.roll(self.values, -1, axis=a) - self.values)
            out = max(out, float(np.max(d)) / self.grid.dx)
        return out


class SpaceTimeField:
    """Frames sampled on a shared grid at strictly increasing times >= 0.

    ``rank`` is ``()`` for scalars, ``(dim,)`` for vectors and
    ``(dim, dim)`` for matrices; ``values`` has shape
    ``(len(times), *rank, *grid.shape)``.
    """

    def __init__(self, grid: Grid, times, values, rank=SCALAR):
        times = np.asarray(times, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if times.ndim != 1 or times.size == 0:
            raise QuasidiffError("times must be a non-empty 1-D array")
        if times[0] < 0 or np.any(np.diff(times) <= 0):
            raise QuasidiffError("times must be strictly increasing and >= 0")
        rank = tuple(rank)
        if rank not in (SCALAR, (grid.dim,), (grid.dim, grid.dim)):
            raise QuasidiffError(f"unsupported rank {rank} for dim {grid.dim}")
        expected = (times.size,) + rank + grid.shape
        if values.shape != expected:
            raise QuasidiffError(f"values shape {values.shape}, expected {expected}")
        _check_finite(values, "SpaceTimeField")
        self.grid = grid
        self.times = _freeze(times)
        self.values = _freeze(values)
        self.rank = rank

    @property
    def vector_rank(self) -> int:
        return 0 if self.rank == SCALAR else self.rank[0]

    @property
    def num_frames(self) -> int:
        return self.times.size

    def frame(self, m: int) -> np.ndarray:
        return self.values[m]

    def frame_at(self, t: float, rtol=1e-9) -> np.ndarray:
        m = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[m] - t) > rtol * max(1.0, abs(t)):
            raise QuasidiffError(f"no frame at t={t}; nearest is {self.times[m]}")
        return self.values[m]

    def scalar_frame(self, m: int) -> ScalarField:
        if self.rank != SCALAR:
            raise QuasidiffError("scalar_frame requires a scalar field")
        return ScalarField(self.grid, self.values[m])

    @classmethod
    def from_frames(cls, grid: Grid, times, frames, rank=SCALAR) -> "SpaceTimeField":
        return cls(grid, times, np.stack([np.asarray(f) for f in frames]), rank)

    @classmethod
    def constant_in_time(cls, u0: ScalarField, times) -> "SpaceTimeField":
        times = np.asarray(times, dtype=np.float64)
        vals = np.broadcast_to(u0.values, (times.size,) + u0.grid.shape)
        return cls(u0.grid, times, vals)

    @classmethod
    def from_time_function(cls, grid: Grid, times, fn) -> "SpaceTimeField":
        """Sample ``fn(t, *coords)`` on every frame of a scalar field."""
        times = np.asarray(times, dtype=np.float64)
        coords = grid.coords()
        vals = np.stack([np.broadcast_to(fn(t, *coords), grid.shape) for t in times])
        return cls(grid, times, vals)

    def magnitude(self) -> np.ndarray:
        """Pointwise Euclidean magnitude, shape (M, *grid.shape)."""
        if self.rank == SCALAR:
            return np.abs(self.values)
        axes = tuple(range(1, 1 + len(self.rank)))
        return np.sqrt(np.sum(self.values**2, axis=axes))

    def sup_norm(self) -> float:
        return float(np.max(self.magnitude()))

    def restricted(self, t_max: float, include_zero=True) -> "SpaceTimeField":
        keep = self.times <= t_max * (1 + 1e-12)
        if not include_zero:
            keep &= self.times > 0
        if not np.any(keep):
            raise QuasidiffError(f"no frames at or below t={t_max}")
        return SpaceTimeField(self.grid, self.times[keep], self.values[keep], self.rank)

    def shifted(self, cells) -> "SpaceTimeField":
        cells = (cells,) if np.isscalar(cells) else tuple(cells)
        nlead = 1 + len(self.rank)
        axes = tuple(range(nlead, nlead + self.grid.dim))
        return SpaceTimeField(self.grid, self.times, np.roll(self.values, cells, axis=axes), self.rank)


def essential_range(f) -> tuple:
    """Convex hull [lo, hi] of the sampled values of a scalar field.

    For sampled fields the hull of the essential range is exactly the
    min/max over samples.
    """
    if isinstance(f, ScalarField):
        values = f.values
    elif isinstance(f, SpaceTimeField):
        if f.rank != SCALAR:
            raise QuasidiffError("essential_range is defined for scalar fields")
        values = f.values
    else:
        raise QuasidiffError(f"unsupported field type {type(f).__name__}")
    if values.size == 0:
        raise QuasidiffError("empty field has no range")
    return float(np.min(values)), float(np.max(values))


def face_gradient(values: np.ndarray, grid: Grid) -> np.ndarray:
    """One-sided differences on faces: component a at index i is
    (u[i+1] - u[i])/dx along axis a.  Input shape (*grid.shape) or
    (M, *grid.shape); output prepends a component axis of size dim."""
    lead = values.ndim - grid.dim
    comps = [
        (np.roll(values, -1, axis=lead + a) - values) / grid.dx
        for a in range(grid.dim)
    ]
    return np.stack(comps, axis=lead)

def face_to_center(vec: np.ndarray, grid: Grid) -> np.ndarray:
    """Average face-layout vector components back to cell centers.

    Component a at cell i is the mean of faces i-1/2 and i+1/2 along
    axis a.  Accepts shape (dim, *grid.shape) or (M, dim, *grid.shape).
    """
    lead = vec.ndim - grid.dim - 1
    out = np.empty_like(vec)
    for a in range(grid.dim):
        comp = vec[(slice(None),) * lead + (a,)]
        out[(slice(None),) * lead + (a,)] = 0.5 * (comp + np.roll(comp, 1, axis=lead + a))
    return out


def centered_gradient_field(u: SpaceTimeField) -> SpaceTimeField:
    """Cell-centered gradient of a scalar space-time field by face
    differences averaged back to centers (= centered differences)."""
    g = face_gradient(u.values, u.grid)          # (M, dim, *shape), face layout
    g = face_to_center(g, u.grid)
    return SpaceTimeField(u.grid, u.times, g, rank=(u.grid.dim,))
