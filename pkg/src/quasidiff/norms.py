"""Weighted space-time norms over parabolic cylinders.

The scale-critical gradient norm takes, for each base time t, the
q-average of sqrt(s)*|f| over the cylinder (t/2, t) x B(x, sqrt(t)) and
the sup over base points; the sqrt(s) weight makes it invariant under
parabolic scaling (t, x) -> (l^2 t, l x).  Balls live on the torus and
saturate to the whole box once sqrt(t) >= L/2.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import ndimage

from .errors import QuasidiffError
from .fields import SpaceTimeField
from .grid import Grid

_kernel_cache: dict = {}


def _ball_mask(grid: Grid, radius: float) -> np.ndarray:
    d = grid.periodic_distance_from_origin()
    # tiny slack so cells whose center sits exactly on the radius count
    return d <= radius + 1e-12 * grid.length


def _ball_kernel_fft(grid: Grid, radius: float):
    key = (grid.dim, grid.n, round(grid.length, 12), round(float(radius) / grid.dx, 9))
    hit = _kernel_cache.get(key)
    if hit is not None:
        return hit
    mask = _ball_mask(grid, radius)
    count = int(mask.sum())
    kern = np.fft.rfftn(mask / count, axes=tuple(range(-grid.dim, 0)))
    if len(_kernel_cache) > 512:
        _kernel_cache.clear()
    _kernel_cache[key] = (kern, count)
    return kern, count


def ball_average(values: np.ndarray, grid: Grid, radius: float) -> np.ndarray:
    """Mean of ``values`` over the periodic ball of ``radius`` centered
    at every cell (circular convolution with the normalized indicator)."""
    kern, count = _ball_kernel_fft(grid, radius)
    if count == 1:
        return values
    axes = tuple(range(-grid.dim, 0))
    return np.fft.irfftn(np.fft.rfftn(values, axes=axes) * kern, s=grid.shape, axes=axes)


def ball_max(values: np.ndarray, grid: Grid, radius: float) -> np.ndarray:
    """Max of ``values`` over the periodic ball centered at every cell."""
    r_cells = int(np.floor(radius / grid.dx + 1e-12))
    if r_cells <= 0:
        return values
    if grid.dim == 1:
        return ndimage.maximum_filter1d(values, size=2 * r_cells + 1, mode="wrap")
    foot = _ball_mask(grid, radius)
    foot = np.roll(foot, (grid.n // 2,) * grid.dim, axis=tuple(range(grid.dim)))
    # crop the footprint to its bounding box around the center
    c = grid.n // 2
    foot = foot[c - r_cells:c + r_cells + 1, c - r_cells:c + r_cells + 1]
    return ndimage.maximum_filter(values, footprint=foot, mode="wrap")


@dataclass
class ZNormSpec:
    """Parameters of the cylinder norm: exponent q in (1, inf], horizon
    T, base times (geometric in (0, T] when not given) and the ball
    radius rule r(t) = min(sqrt(t), L/2)."""

    q: float
    T: float
    t_samples: np.ndarray | None = None
    n_samples: int = 48

    def __post_init__(self):
        if not (self.q > 1):
            raise QuasidiffError(f"Z exponent must exceed 1, got {self.q}")
        if not (self.T > 0):
            raise QuasidiffError("horizon must be positive")


def _window_quadrature(times, lo, hi):
    """Weights w_i over field times for the normalized integral
    (1/(hi-lo)) * int_lo^hi, by trapezoid with a linearly interpolated
    left endpoint.  Returns None when the window is not fully covered or
    holds fewer than two interior samples."""
    inside = np.where((times > lo * (1 + 1e-12)) & (times <= hi * (1 + 1e-12)))[0]
    if inside.size < 2:
        return None
    first = inside[0]
    if first == 0 and times[0] > lo * (1 + 1e-9):
        return None                     # window sticks out below the data
    w = np.zeros(times.size)
    nodes = times[inside]
    # trapezoid over [lo, nodes...]; left endpoint interpolated between
    # times[first-1] and times[first]
    seg = np.concatenate(([lo], nodes))
    dseg = np.diff(seg)
    w[inside] += 0.5 * (np.concatenate((dseg, [0.0])) + np.concatenate(([0.0], dseg)))[1:]
    w_lo = 0.5 * dseg[0]
    if times[first] - lo > 1e-15 * hi and first > 0:
        alpha = (times[first] - lo) / (times[first] - times[first - 1])
        w[first - 1] += w_lo * alpha
        w[first] += w_lo * (1 - alpha)
    else:
        w[first] += w_lo
    return w / (hi - lo)


def _default_t_samples(times, T, n_samples):
    pos = times[(times > 0) & (times <= T * (1 + 1e-12))]
    if pos.size == 0:
        raise QuasidiffError("no positive times at or below the horizon")
    usable = pos[pos >= 2.0 * pos[0]]   # windows must reach down to data
    if usable.size == 0:
        usable = pos[-1:]
    if usable.size <= n_samples:
        return usable
    idx = np.unique(np.geomspace(1, usable.size, n_samples).astype(int) - 1)
    return usable[idx]


def z_norm(f: SpaceTimeField, spec: ZNormSpec, return_details: bool = False):
    """Discrete cylinder norm of a scalar or vector space-time field.

    For q < inf this is the sup over base points of the q-average of
    sqrt(s)*|f| over (t/2, t) x B(x, sqrt(t)); q = inf takes the max
    over the cylinder instead.  Base times with under-resolved windows
    are skipped and flagged; an error is raised when every window is
    under-resolved.
    """
    grid = f.grid
    mag = f.magnitude()
    ts = spec.t_samples
    if ts is None:
        ts = _default_t_samples(f.times, spec.T, spec.n_samples)
    ts = np.asarray(ts, dtype=np.float64)
    if np.any(ts <= 0) or np.any(ts > spec.T * (1 + 1e-9)):
        raise QuasidiffError("base times must lie in (0, T]")

    best = 0.0
    skipped = []
    saturated = False
    qinf = np.isinf(spec.q)
    weighted_q = None if qinf else (np.sqrt(f.times)[:, None] * mag.reshape(f.num_frames, -1)) ** spec.q

    for t in ts:
        w = _window_quadrature(f.times, t / 2.0, t)
        if w is None:
            skipped.append(float(t))
            continue
        radius = np.sqrt(t)
        if radius >= grid.length / 2.0:
            saturated = True
            radius = grid.length / 2.0
        if qinf:
            sel = (f.times > t / 2.0) & (f.times <= t * (1 + 1e-12))
            sup_t = np.max(mag[sel].reshape(int(sel.sum()), -1)
                           * np.sqrt(f.times[sel])[:, None], axis=0).reshape(grid.shape)
            best = max(best, float(np.max(ball_max(sup_t, grid, radius))))
        else:
            avg_t = (w @ weighted_q).reshape(grid.shape)
            best = max(best, float(np.max(ball_average(avg_t, grid, radius))) ** (1.0 / spec.q))
    if len(skipped) == len(ts):
        raise QuasidiffError(
            "time resolution insufficient for every requested base time"
        )
    if return_details:
        return best, {"skipped": skipped, "ball_saturated": saturated}
    return best


def weighted_sup_norm(f: SpaceTimeField, beta: float, T: float) -> float:
    """esssup over (0, T] x torus of t^(-beta)*|f| on the sampled frames
    (the t = 0 frame carries no mass in the continuum sup and is skipped)."""
    keep = (f.times > 0) & (f.times <= T * (1 + 1e-12))
    if not np.any(keep):
        raise QuasidiffError("no frames in (0, T]")
    mag = f.magnitude()[keep]
    w = f.times[keep] ** (-beta)
    return float(np.max(w[:, None] * mag.reshape(mag.shape[0], -1)))


def parabolic_conjugate_upper(p, n: int):
    """Upper conjugate p* with 1/p* = 1/p - 1/(n+2); requires 1 < p < n+2.
    Exact (Fraction) arithmetic for exact inputs."""
    pf = Fraction(p) if not isinstance(p, Fraction) else p
    if not (1 < pf < n + 2):
        raise QuasidiffError(f"upper conjugate needs p in (1, {n + 2}), got {p}")
    out = 1 / (1 / pf - Fraction(1, n + 2))
    return out if isinstance(p, (int, Fraction)) else float(out)


def parabolic_conjugate_lower(q, n: int):
    """Lower conjugate q_* with 1/q_* = 1/q + 1/(n+2); requires q > 1."""
    qf = Fraction(q) if not isinstance(q, Fraction) else q
    if not qf > 1:
        raise QuasidiffError(f"lower conjugate needs q > 1, got {q}")
    out = 1 / (1 / qf + Fraction(1, n + 2))
    return out if isinstance(q, (int, Fraction)) else float(out)


def singular_witness_field(grid: Grid, T: float, n_times: int = 160,
                           t0_factor: float = 1e-6, ball_radius: float | None = None):
    """The field sqrt(s)^-1 * indicator(ball) on a geometric time grid;
    used to probe that finite cylinder norms do not imply square
    integrability down to t = 0.  Returns (field, mask, |ball|)."""
    if ball_radius is None:
        ball_radius = min(1.0, grid.length / 4.0)
    mask = _ball_mask(grid, ball_radius)
    mask = np.roll(mask, (grid.n // 2,) * grid.dim, axis=tuple(range(grid.dim)))
    times = np.geomspace(T * t0_factor, T, n_times)
    vals = (times ** -0.5)[:, None] * mask.reshape(1, -1).astype(float)
    f = SpaceTimeField(grid, times, vals.reshape((n_times,) + grid.shape))
    volume = float(mask.sum()) * grid.cell_volume
    return f, mask, volume


def z_l2_noninclusion_witness(grid: Grid, T: float, qs=(1.5, 2.0, 4.0),
                              eps_powers=range(4, 15)) -> dict:
    """Build the singular witness, confirm its cylinder norms equal one,
    and measure the logarithmic divergence of its square integral as the
    lower truncation eps -> 0.  The integrals are trapezoid quadratures
    of the sampled field; the slope of the integral against log(1/eps)
    should match the ball volume (the analytic antiderivative)."""
    t0 = 2.0 ** -(max(eps_powers) + 2)
    f, mask, volume = singular_witness_field(grid, T, n_times=320, t0_factor=t0)
    norms = {}
    for q in qs:
        norms[q] = z_norm(f, ZNormSpec(q=q, T=T))

    space_int = np.sum(f.values**2, axis=tuple(range(1, 1 + grid.dim))) * grid.cell_volume
    eps, integrals = [], []
    for k in eps_powers:
        target = 2.0**-k * T
        i0 = int(np.argmin(np.abs(f.times - target)))
        eps.append(float(f.times[i0]))
        integrals.append(float(np.trapezoid(space_int[i0:], f.times[i0:])))
    eps = np.asarray(eps)
    integrals = np.asarray(integrals)
    slope = np.polyfit(np.log(1.0 / eps), integrals, 1)[0]
    return {
        "z_norms": norms,
        "ball_volume": volume,
        "eps": eps.tolist(),
        "square_integrals": integrals.tolist(),
        "log_slope": float(slope),
        "slope_rel_err": abs(float(slope) - volume) / volume,
    }
