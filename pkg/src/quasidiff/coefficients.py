"""Coefficient nonlinearities a(t, x, y) and sample-resolution checks
of their structural assumptions (ellipticity, Lipschitz bound in the
state, equilibrium bound, uniform continuity)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotElliptic, QuasidiffError, RangeEscape
from .fields import ScalarField, SpaceTimeField, essential_range
from .grid import Grid


class CoefficientFn:
    """Matrix-valued nonlinearity with a declared admissible interval.

    ``fn(t, coords, y)`` must be vectorized: ``coords`` is a tuple of
    broadcastable center-coordinate arrays, ``y`` an array of state
    values, and the result has shape (dim, dim) + broadcast(coords, y).
    ``interval`` is the open set of admissible states (lo, hi), with
    infinite endpoints allowed.
    """

    def __init__(self, fn, interval, label, dim):
        lo, hi = float(interval[0]), float(interval[1])
        if not lo < hi:
            raise QuasidiffError(f"admissible interval empty: ({lo}, {hi})")
        self.fn = fn
        self.interval = (lo, hi)
        self.label = label
        self.dim = int(dim)

    def matrix(self, t, coords, y) -> np.ndarray:
        out = np.asarray(self.fn(float(t), coords, np.asarray(y, dtype=np.float64)))
        if out.shape[:2] != (self.dim, self.dim):
            raise QuasidiffError(
                f"coefficient '{self.label}' returned shape {out.shape}, "
                f"expected leading ({self.dim}, {self.dim})"
            )
        if not np.all(np.isfinite(out)):
            raise QuasidiffError(f"coefficient '{self.label}' returned non-finite entries")
        return out

    def contains(self, lo, hi, strict=True) -> bool:
        o_lo, o_hi = self.interval
        if strict:
            return lo > o_lo and hi < o_hi
        return lo >= o_lo and hi <= o_hi

    def time_shifted(self, tau: float) -> "CoefficientFn":
        """The restart nonlinearity t -> a(t + tau, x, y)."""
        base = self.fn
        return CoefficientFn(
            lambda t, coords, y: base(t + tau, coords, y),
            self.interval,
            f"{self.label}@+{tau:g}",
            self.dim,
        )


def _isotropic(scalar, dim, shape):
    out = np.zeros((dim, dim) + shape)
    s = np.broadcast_to(scalar, shape)
    for a in range(dim):
        out[a, a] = s
    return out


def _broadcast_shape(coords, y):
    return np.broadcast_shapes(*(c.shape for c in coords), np.shape(y))


def identity_coefficient(dim) -> CoefficientFn:
    def fn(t, coords, y):
        return _isotropic(1.0, dim, _broadcast_shape(coords, y))

    return CoefficientFn(fn, (-np.inf, np.inf), "identity", dim)


def porous_coefficient(m, dim) -> CoefficientFn:
    m = float(m)

    def fn(t, coords, y):
        shape = _broadcast_shape(coords, y)
        yv = np.broadcast_to(np.asarray(y, dtype=np.float64), shape)
        return _isotropic(np.where(yv > 0, yv, 0.0) ** m, dim, shape)

    return CoefficientFn(fn, (0.0, np.inf), f"porous:{m:g}", dim)


def anisotropic_coefficient(theta, dim) -> CoefficientFn:
    if dim != 2:
        raise QuasidiffError("anisotropic coefficient requires dim = 2")
    c, s = np.cos(float(theta)), np.sin(float(theta))
    rot = np.array([[c, -s], [s, c]])
    mat = rot @ np.diag([1.0, 2.0]) @ rot.T

    def fn(t, coords, y):
        shape = _broadcast_shape(coords, y)
        return np.broadcast_to(mat[:, :, None, None], (2, 2) + shape).copy()

    return CoefficientFn(fn, (-np.inf, np.inf), f"anisotropic:{float(theta):g}", dim)


def time_ramp_coefficient(tau, dim) -> CoefficientFn:
    tau = float(tau)

    def fn(t, coords, y):
        return _isotropic(1.0 + min(t, tau), dim, _broadcast_shape(coords, y))

    return CoefficientFn(fn, (-np.inf, np.inf), f"time_ramp:{tau:g}", dim)


def coefficient_from_label(label: str, dim: int) -> CoefficientFn:
    """Resolve a registry label like ``identity``, ``porous:1``,
    ``anisotropic:0.3`` or ``time_ramp:2``."""
    name, _, arg = label.partition(":")
    builders = {
        "identity": lambda: identity_coefficient(dim),
        "porous": lambda: porous_coefficient(float(arg), dim),
        "anisotropic": lambda: anisotropic_coefficient(float(arg), dim),
        "time_ramp": lambda: time_ramp_coefficient(float(arg), dim),
    }
    if name not in builders:
        raise QuasidiffError(f"unknown coefficient label '{label}'")
    if name != "identity" and not arg:
        raise QuasidiffError(f"coefficient '{name}' needs a parameter, e.g. '{name}:1'")
    return builders[name]()


@dataclass
class AssumptionReport:
    """Sampled estimates of the structural constants of a nonlinearity
    on a compact state interval K and horizon T."""

    lambda_K: float
    C_L: float
    C_E: float
    modulus_samples: list
    K: tuple
    T: float
    equilibrium_anchor: str = "zero"
    notes: dict = field(default_factory=dict)


def _frobenius(mat, lead=2):
    return np.sqrt(np.sum(mat**2, axis=tuple(range(lead))))


def _unit_directions(dim, n_xi):
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    ang = np.linspace(0.0, np.pi, n_xi, endpoint=False)
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def verify_ellipticity(a: CoefficientFn, K, T, grid: Grid,
                       n_t: int = 17, n_y: int = 65, n_xi: int = 32) -> float:
    """Smallest sampled value of xi . sym(a) xi over t in [0,T], grid
    centers, y in K and unit directions xi.  Raises NotElliptic (with the
    violating sample) when the minimum is not positive."""
    lo, hi = float(K[0]), float(K[1])
    ts = np.linspace(0.0, T, n_t)
    ys = np.linspace(lo, hi, n_y)
    xis = _unit_directions(a.dim, n_xi)
    coords = grid.coords()

    best = np.inf
    worst = None
    for t in ts:
        for y in ys:
            mat = a.matrix(t, coords, y)                  # (d, d, *shape)
            sym = 0.5 * (mat + np.swapaxes(mat, 0, 1))
            for xi in xis:
                quad = np.einsum("i,ij...,j->...", xi, sym, xi)
                m = float(np.min(quad))
                if m < best:
                    best = m
                    idx = np.unravel_index(np.argmin(quad), np.shape(quad))
                    pos = tuple(float(np.broadcast_to(c, grid.shape)[idx]) for c in coords)
                    worst = (float(t), pos, float(y), tuple(xi))
    if best <= 0.0:
        t, pos, y, xi = worst
        raise NotElliptic(best, t, pos, y, xi)
    return best


def verify_lipschitz_and_equilibrium(a: CoefficientFn, K, T, grid: Grid,
                                     n_t: int = 17, n_y: int = 65):
    """Sampled Lipschitz constant in the state (Frobenius norm of matrix
    differences over difference quotients) and equilibrium bound.

    The state-Lipschitz supremum over all sample pairs equals the
    supremum over adjacent pairs (telescoping), so only adjacent
    quotients are formed.  The equilibrium bound anchors at y = 0 when
    the nonlinearity evaluates there, otherwise at midpoint(K) with the
    anchor recorded; solves only ever use the coefficient on K, so the
    anchor choice is reported rather than guessed.
    """
    lo, hi = float(K[0]), float(K[1])
    ts = np.linspace(0.0, T, n_t)
    ys = np.linspace(lo, hi, n_y)
    coords = grid.coords()

    c_lip = 0.0
    for t in ts:
        mats = np.stack([a.matrix(t, coords, y) for y in ys])   # (n_y, d, d, *shape)
        d = np.sqrt(np.sum(np.diff(mats, axis=0) ** 2, axis=(1, 2)))
        quot = d / np.diff(ys).reshape((-1,) + (1,) * grid.dim)
        c_lip = max(c_lip, float(np.max(quot)))

    anchor = "zero"
    try:
        vals = [
            float(np.max(_frobenius(a.matrix(t, coords, 0.0)))) for t in ts
        ]
        c_eq = max(vals)
        if not np.isfinite(c_eq):
            raise FloatingPointError
    except Exception:
        anchor = "midpoint"
        mid = 0.5 * (lo + hi)
        c_eq = max(float(np.max(_frobenius(a.matrix(t, coords, mid)))) for t in ts)
    return c_lip, c_eq, anchor


def coefficient_modulus(a: CoefficientFn, K, T, grid: Grid, scales=None,
                        n_t: int = 9, n_y: int = 17):
    """(scale, oscillation) samples of joint uniform continuity on
    [0,T] x torus x K; offsets at normalized scale s move t by s*T,
    x by s*L and y by s*|K|.  Oscillations are accumulated so the table
    is non-decreasing in the scale."""
    if scales is None:
        scales = [2.0**-k for k in range(6, 0, -1)]
    lo, hi = float(K[0]), float(K[1])
    ts = np.linspace(0.0, T, n_t)
    ys = np.linspace(lo, hi, n_y)
    coords = grid.coords()
    L = grid.length

    table = []
    acc = 0.0
    for s in sorted(scales):
        osc = 0.0
        dt_, dy_ = s * T, s * (hi - lo)
        shift = max(1, int(round(s * L / grid.dx)))
        for t in ts:
            for y in ys:
                base = a.matrix(t, coords, y)
                t2 = min(t + dt_, T)
                y2 = min(y + dy_, hi)
                osc = max(osc, float(np.max(_frobenius(a.matrix(t2, coords, y2) - base))))
                moved = np.roll(base, shift, axis=2)
                osc = max(osc, float(np.max(_frobenius(moved - base))))
        acc = max(acc, osc)
        table.append((s, acc))
    return table


def assumption_report(a: CoefficientFn, K, T, grid: Grid, **sample_counts) -> AssumptionReport:
    lam = verify_ellipticity(a, K, T, grid, **{k: v for k, v in sample_counts.items()
                                               if k in ("n_t", "n_y", "n_xi")})
    c_lip, c_eq, anchor = verify_lipschitz_and_equilibrium(
        a, K, T, grid, **{k: v for k, v in sample_counts.items() if k in ("n_t", "n_y")}
    )
    table = coefficient_modulus(a, K, T, grid)
    return AssumptionReport(
        lambda_K=lam, C_L=c_lip, C_E=c_eq, modulus_samples=table,
        K=(float(K[0]), float(K[1])), T=float(T), equilibrium_anchor=anchor,
    )


def compose_coefficient(a: CoefficientFn, v: SpaceTimeField,
                        report: AssumptionReport | None = None) -> SpaceTimeField:
    """Matrix field A(t, x) = a(t, x, v(t, x)) on the frames of ``v``.

    Raises RangeEscape when any sample of ``v`` leaves the admissible
    interval.  When an AssumptionReport with a zero equilibrium anchor is
    supplied, the sup bound |A| <= C_L * ||v||_inf + C_E is re-checked
    a posteriori.
    """
    lo, hi = essential_range(v)
    if not a.contains(lo, hi):
        raise RangeEscape(
            f"state range [{lo:.6g}, {hi:.6g}] escapes admissible interval "
            f"({a.interval[0]:.6g}, {a.interval[1]:.6g}) of '{a.label}'"
        )
    grid = v.grid
    coords = grid.coords()
    mats = np.empty((v.num_frames, grid.dim, grid.dim) + grid.shape)
    for m, t in enumerate(v.times):
        mats[m] = a.matrix(t, coords, v.values[m])
    out = SpaceTimeField(grid, v.times, mats, rank=(grid.dim, grid.dim))

    if report is not None and report.equilibrium_anchor == "zero":
        bound = report.C_L * v.sup_norm() + report.C_E
        top = float(np.max(np.sqrt(np.sum(mats**2, axis=(1, 2)))))
        if top > bound * (1.0 + 1e-9) + 1e-12:
            raise QuasidiffError(
                f"composed coefficient norm {top:.6g} exceeds the assumption "
                f"bound {bound:.6g}"
            )
    return out


def compose_at_time(a: CoefficientFn, t: float, v0: ScalarField) -> np.ndarray:
    """Frozen matrix coefficient a(t, x, v0(x)) as an array (d, d, *shape)."""
    lo, hi = essential_range(v0)
    if not a.contains(lo, hi):
        raise RangeEscape(
            f"state range [{lo:.6g}, {hi:.6g}] escapes admissible interval of '{a.label}'"
        )
    return a.matrix(t, v0.grid.coords(), v0.values)


def safety_radius(u0: ScalarField, interval, cap: float = 1.0) -> float:
    """Half the distance from the range of the datum to the boundary of
    the admissible interval; infinite sides are ignored and a fully
    unbounded interval returns ``cap``."""
    lo, hi = essential_range(u0)
    o_lo, o_hi = float(interval[0]), float(interval[1])
    if not (lo > o_lo and hi < o_hi):
        raise RangeEscape(
            f"range [{lo:.6g}, {hi:.6g}] is not strictly inside ({o_lo:.6g}, {o_hi:.6g})"
        )
    margins = []
    if np.isfinite(o_lo):
        margins.append(lo - o_lo)
    if np.isfinite(o_hi):
        margins.append(o_hi - hi)
    if not margins:
        return float(cap)
    return 0.5 * min(margins)
