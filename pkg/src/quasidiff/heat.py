"""Exact constant-coefficient diffusion on the torus, evaluated spectrally.

Frequency-space multiplication by exp(-|k|^2 t) evolves the trigonometric
interpolant of the datum exactly (to rounding) for band-limited data, so
these routines serve as the error-free reference that the finite-volume
solvers are compared against.
"""

from __future__ import annotations

import numpy as np

from .fields import ScalarField, SpaceTimeField
from .grid import Grid


def _fftn(values):
    return np.fft.fftn(values)


def _ifftn_real(spec):
    return np.real(np.fft.ifftn(spec))


def _k2(grid: Grid) -> np.ndarray:
    ks = grid.wavenumbers()
    out = np.zeros(grid.shape)
    for k in ks:
        out = out + k**2
    return out


def _gradient_multipliers(grid: Grid):
    """1j*k per axis with the Nyquist mode zeroed (odd derivative of a
    real signal has no well-defined Nyquist contribution)."""
    mults = []
    for a, k in enumerate(grid.wavenumbers()):
        k = k.copy()
        if grid.n % 2 == 0:
            idx = [slice(None)] * grid.dim
            idx[a] = grid.n // 2
            k[tuple(idx)] = 0.0
        mults.append(1j * k)
    return mults


def _face_shift(grid: Grid, axis: int) -> np.ndarray:
    """Phase factor moving samples from centers to faces (x -> x + dx/2)."""
    k = grid.wavenumbers()[axis]
    return np.exp(1j * k * (grid.dx / 2.0))


class HeatExtension:
    """Heat evolution of a datum with its spectral gradient.

    ``frames`` holds the scalar frames, ``gradient_frames`` the
    cell-centered gradient; the frame at t = 0 (if present) is the datum
    itself, and the torus mean of every frame equals the mean of the
    datum (frequency zero is untouched).
    """

    def __init__(self, u0: ScalarField, frames: SpaceTimeField, gradient_frames: SpaceTimeField):
        self.u0 = u0
        self.times = frames.times
        self.frames = frames
        self.gradient_frames = gradient_frames


def heat_extend(u0: ScalarField, times) -> HeatExtension:
    """Evolve ``u0`` by the heat flow at the given times (all >= 0)."""
    times = np.asarray(times, dtype=np.float64)
    grid = u0.grid
    spec = _fftn(u0.values)
    k2 = _k2(grid)
    gmult = _gradient_multipliers(grid)

    frames = np.empty((times.size,) + grid.shape)
    grads = np.empty((times.size, grid.dim) + grid.shape)
    for m, t in enumerate(times):
        if t == 0.0:
            frames[m] = u0.values
            st = spec
        else:
            st = spec * np.exp(-k2 * t)
            frames[m] = _ifftn_real(st)
        for a in range(grid.dim):
            grads[m, a] = _ifftn_real(gmult[a] * st)

    u = SpaceTimeField(grid, times, frames)
    g = SpaceTimeField(grid, times, grads, rank=(grid.dim,))
    return HeatExtension(u0, u, g)


def heat_gradient_faces(u0: ScalarField, times) -> np.ndarray:
    """Spectral gradient sampled at face midpoints (face layout), shape
    (M, dim, *grid.shape).  Exact for band-limited data, which makes it
    the right source term for the flux-form solvers."""
    times = np.asarray(times, dtype=np.float64)
    grid = u0.grid
    spec = _fftn(u0.values)
    k2 = _k2(grid)
    gmult = _gradient_multipliers(grid)
    shifts = [_face_shift(grid, a) for a in range(grid.dim)]

    out = np.empty((times.size, grid.dim) + grid.shape)
    for m, t in enumerate(times):
        st = spec if t == 0.0 else spec * np.exp(-k2 * t)
        for a in range(grid.dim):
            out[m, a] = _ifftn_real(gmult[a] * shifts[a] * st)
    return out


def geometric_probe_times(T: float, per_decade: int, decades: float) -> np.ndarray:
    lo = np.log10(T) - decades
    ts = 10.0 ** np.linspace(lo, np.log10(T), int(per_decade * decades) + 1)
    ts[-1] = T
    return ts


def heat_gradient_sup(u0: ScalarField, T: float, per_decade: int = 64,
                      decades: float = 6.0, slack: float = 0.02):
    """sup over t in (0, T], x of sqrt(t)*|grad e^{tD} u0|.

    Returns ``(value, within_bound)`` where the bound is
    (1/sqrt(2) + slack)*||u0||_inf; the slack covers the periodization
    correction on the torus.  The supremum is sampled on a geometric
    t-grid because the sqrt(t) weight moves the maximizer across decades.
    """
    grid = u0.grid
    spec = _fftn(u0.values)
    k2 = _k2(grid)
    gmult = _gradient_multipliers(grid)

    value = 0.0
    for t in geometric_probe_times(T, per_decade, decades):
        st = spec * np.exp(-k2 * t)
        mag2 = np.zeros(grid.shape)
        for a in range(grid.dim):
            mag2 += _ifftn_real(gmult[a] * st) ** 2
        value = max(value, float(np.sqrt(t) * np.sqrt(np.max(mag2))))

    bound = (1.0 / np.sqrt(2.0) + slack) * u0.sup_norm()
    return value, value <= bound


def heat_gradient_vanishing(u0: ScalarField, t_sequence, per_decade: int = 64,
                            tail_decades: float = 4.0, plateau_ratio: float = 0.5):
    """Weighted gradient sup-norms over shrinking horizons (0, t_k].

    ``t_sequence`` must be decreasing.  Returns ``(norms, flags)`` where
    ``norms[k]`` = sup over s <= t_k of sqrt(s)*|grad u(s)| (monotone
    non-increasing by construction) and ``flags['no_buc_vanishing']`` is
    set when the sequence fails to decay, i.e. the datum is rough at grid
    scale and the small-time gradient smallness is lost.
    """
    t_sequence = np.asarray(t_sequence, dtype=np.float64)
    if np.any(np.diff(t_sequence) >= 0):
        raise ValueError("t_sequence must be strictly decreasing")
    t_max, t_min = t_sequence[0], t_sequence[-1]
    decades = np.log10(t_max / t_min) + tail_decades
    probes = geometric_probe_times(t_max, per_decade, decades)

    grid = u0.grid
    spec = _fftn(u0.values)
    k2 = _k2(grid)
    gmult = _gradient_multipliers(grid)

    weighted = np.empty(probes.size)
    for i, s in enumerate(probes):
        st = spec * np.exp(-k2 * s)
        mag2 = np.zeros(grid.shape)
        for a in range(grid.dim):
            mag2 += _ifftn_real(gmult[a] * st) ** 2
        weighted[i] = np.sqrt(s) * np.sqrt(np.max(mag2))
    running = np.maximum.accumulate(weighted)          # sup over (0, s]

    norms = [float(running[np.searchsorted(probes, t, side="right") - 1])
             for t in t_sequence]
    flags = {}
    if norms[0] > 0 and norms[-1] > plateau_ratio * norms[0]:
        flags["no_buc_vanishing"] = True
    return norms, flags


def periodized_gaussian(grid: Grid, t: float, center, images: int = 3) -> np.ndarray:
    """Closed-form heat kernel on the torus: (4 pi t)^(-n/2) times the
    image sum over |m| <= images per axis.  Reference for delta-datum
    evolutions."""
    if t <= 0:
        raise ValueError("kernel time must be positive")
    coords = grid.coords()
    out = np.zeros(grid.shape)
    rng = range(-images, images + 1)
    if grid.dim == 1:
        for m in rng:
            d = coords[0] - center[0] + m * grid.length
            out += np.exp(-(d**2) / (4.0 * t))
    else:
        for mx in rng:
            dx0 = coords[0] - center[0] + mx * grid.length
            for my in rng:
                dx1 = coords[1] - center[1] + my * grid.length
                out += np.exp(-(dx0**2 + dx1**2) / (4.0 * t))
    return out * (4.0 * np.pi * t) ** (-grid.dim / 2.0)
