"""Quasilinear solves: the linearized fixed-point map, the
contraction-monitored local solve, globalization by window gluing, a
semi-implicit oracle, and the mollification path for rough data.

The local construction freezes the coefficient at the datum,
A0(x) = a(0, x, u0(x)), and iterates

    v  ->  solve of  d_t u - Div(A0 grad u) = Div((a(.,.,v) - A0) grad v)

from the constant-in-time extension of the datum.  Iterates are kept in
the ball ||v - u0||_inf <= r, ||grad v||_Z <= r with r below the safety
radius, which pins their range inside the admissible interval; measured
contraction factors replace the unquantifiable smallness constants, and
failures shrink the time window.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coefficients import (
    CoefficientFn,
    compose_at_time,
    compose_coefficient,
    safety_radius,
)
from .errors import ContractionFailure, QuasidiffError, RangeEscape
from .fields import (
    ScalarField,
    SpaceTimeField,
    essential_range,
    face_gradient,
    face_to_center,
)
from .grid import Grid
from .linear import (
    LinearProblem,
    LinearSolution,
    _ImplicitSolver,
    assemble_operator,
    _face_matrices,
    face_gradient_full,
    min_eigen_sym,
    solve_linear,
)
from .norms import ZNormSpec, z_norm


@dataclass
class FixedPointConfig:
    """Knobs of the local fixed-point solve.

    ``q`` is the cylinder-norm exponent (must exceed dim + 2, default
    dim + 3); ``r`` the ball radius (default half the safety radius);
    ``T`` the local horizon, which also caps adaptive window growth.
    """

    q: float | None = None
    r: float | None = None
    T: float = 0.01
    max_iters: int = 50
    fp_tol: float = 1e-9
    contraction_window: int = 5
    theta: float = 1.0
    min_steps: int = 16
    dt_max: float | None = None
    grow_after: int | None = 3
    compute_oracle_gap: bool = True

    def resolved_q(self, dim: int) -> float:
        q = self.q if self.q is not None else dim + 3
        if not q > dim + 2:
            raise QuasidiffError(f"Z exponent q={q} must exceed n+2={dim + 2}")
        return float(q)

    def resolved_r(self, r_sharp: float) -> float:
        r = self.r if self.r is not None else 0.5 * r_sharp
        if not (0 < r < r_sharp):
            raise QuasidiffError(
                f"ball radius {r} must lie in (0, safety radius {r_sharp:.6g})"
            )
        return float(r)


@dataclass
class BallMembership:
    """Distance of an iterate from the datum in the two ball norms."""

    sup_dist: float
    grad_z: float
    r: float

    @property
    def in_ball(self) -> bool:
        return self.sup_dist <= self.r and self.grad_z <= self.r


@dataclass
class SolveReport:
    """Bookkeeping of a local or glued solve."""

    iterations: int = 0
    theta_applications: int = 0
    contraction_factors: list = field(default_factory=list)
    windows: list = field(default_factory=list)
    ball_history: list = field(default_factory=list)
    range_drift: float = 0.0
    validity_horizon: float = float("inf")
    oracle_gap: float | None = None
    lip_radius_product: float | None = None
    coeff_time_osc: float | None = None
    converged: bool = False
    flags: dict = field(default_factory=dict)


def _window_times(grid: Grid, cfg: FixedPointConfig, T: float) -> np.ndarray:
    dt_max = cfg.dt_max if cfg.dt_max is not None else grid.dx
    steps = max(cfg.min_steps, int(np.ceil(T / dt_max)))
    return np.linspace(0.0, T, steps + 1)


def _gradient_field(u: SpaceTimeField) -> SpaceTimeField:
    g = face_to_center(face_gradient(u.values, u.grid), u.grid)
    return SpaceTimeField(u.grid, u.times, g, rank=(u.grid.dim,))


def x_norm(w: SpaceTimeField, q: float, T: float) -> float:
    """Fixed-point metric: sup norm plus cylinder norm of the gradient."""
    return w.sup_norm() + z_norm(_gradient_field(w), ZNormSpec(q=q, T=T))


def _diff_field(u: SpaceTimeField, v: SpaceTimeField) -> SpaceTimeField:
    return SpaceTimeField(u.grid, u.times, u.values - v.values)


def ball_membership(v: SpaceTimeField, u0: ScalarField, q: float, T: float,
                    r: float) -> BallMembership:
    sup_dist = float(np.max(np.abs(v.values - u0.values)))
    grad_z = z_norm(_gradient_field(v), ZNormSpec(q=q, T=T))
    return BallMembership(sup_dist=sup_dist, grad_z=grad_z, r=r)


def theta_map(v: SpaceTimeField, u0: ScalarField, a: CoefficientFn, times,
              theta: float = 1.0) -> LinearSolution:
    """One application of the linearized map: freeze A0 at the datum and
    drive the autonomous solve with the comparison flux
    (a(t,x,v) - A0) grad v, gradients taken by face differences so that
    a discrete fixed point solves the coupled theta scheme exactly."""
    grid = u0.grid
    times = np.asarray(times, dtype=np.float64)
    if v.num_frames != times.size or not np.allclose(v.times, times):
        raise QuasidiffError("iterate must be sampled on the solve times")

    A0 = compose_at_time(a, 0.0, u0)
    if float(np.min(min_eigen_sym(A0))) <= 0:
        raise QuasidiffError("frozen coefficient at the datum is not elliptic")
    A_v = compose_coefficient(a, v)              # RangeEscape when v leaves O

    A0_faces = _face_matrices(A0, grid)
    F_vals = np.zeros((times.size, grid.dim) + grid.shape)
    for m in range(times.size):
        dA_faces = [fa - f0 for fa, f0 in
                    zip(_face_matrices(A_v.values[m], grid), A0_faces)]
        g = face_gradient_full(v.values[m], grid)
        for ax in range(grid.dim):
            for b in range(grid.dim):
                F_vals[m, ax] += dA_faces[ax][ax, b] * g[ax][b]
    F = SpaceTimeField(grid, times, F_vals, rank=(grid.dim,))
    problem = LinearProblem(grid, times, u0, A0=A0, F=F, theta=theta)
    return solve_linear(problem)


def _coefficient_time_oscillation(a: CoefficientFn, u0: ScalarField, T: float,
                                  n_t: int = 9) -> float:
    coords = u0.grid.coords()
    base = a.matrix(0.0, coords, u0.values)
    osc = 0.0
    for t in np.linspace(0.0, T, n_t)[1:]:
        d = a.matrix(t, coords, u0.values) - base
        osc = max(osc, float(np.max(np.sqrt(np.sum(d**2, axis=(0, 1))))))
    return osc


def _state_lipschitz(a: CoefficientFn, K, n_y: int = 33) -> float:
    probe = Grid(a.dim, 4, 1.0)
    ys = np.linspace(K[0], K[1], n_y)
    mats = np.stack([a.matrix(0.0, probe.coords(), y) for y in ys])
    d = np.sqrt(np.sum(np.diff(mats, axis=0) ** 2, axis=(1, 2)))
    d = d.reshape(n_y - 1, -1)
    return float(np.max(d / np.diff(ys)[:, None]))


def local_solve_fixed_point(u0: ScalarField, a: CoefficientFn,
                            cfg: FixedPointConfig):
    """Picard iteration of the linearized map on one time window.

    Starts from the constant-in-time extension of the datum, checks each
    iterate's ball membership, and stops once the increment in the
    combined norm drops below ``fp_tol * ||u0||_inf``.  Raises
    ContractionFailure (carrying the partial report) on ball exit,
    factors at or above one, or exhaustion of ``max_iters`` -- the caller
    should shrink the window.  ``report.iterations`` counts updates that
    moved the iterate by more than the tolerance, so a state-independent
    nonlinearity converges in exactly one.
    """
    grid = u0.grid
    r_sharp = safety_radius(u0, a.interval)
    r = cfg.resolved_r(r_sharp)
    q = cfg.resolved_q(grid.dim)
    T = cfg.T
    times = _window_times(grid, cfg, T)
    scale = max(u0.sup_norm(), 1e-300)

    lo, hi = essential_range(u0)
    K = (lo - r_sharp, hi + r_sharp)

    report = SolveReport()
    report.lip_radius_product = _state_lipschitz(a, K) * r
    report.coeff_time_osc = _coefficient_time_oscillation(a, u0, T)

    v = SpaceTimeField.constant_in_time(u0, times)
    bm0 = ball_membership(v, u0, q, T, r)
    report.ball_history.append(bm0)
    if not bm0.in_ball:
        raise ContractionFailure(
            f"datum extension already outside the ball (grad_z={bm0.grad_z:.3g} "
            f"vs r={r:.3g}); shrink the window", report)

    increments = []
    solution = None
    for _ in range(cfg.max_iters):
        try:
            sol = theta_map(v, u0, a, times, theta=cfg.theta)
        except RangeEscape as exc:
            raise ContractionFailure(f"iterate range escape: {exc}", report) from exc
        report.theta_applications += 1
        w = sol.u

        bm = ball_membership(w, u0, q, T, r)
        report.ball_history.append(bm)
        if not bm.in_ball:
            raise ContractionFailure(
                f"ball exit: sup_dist={bm.sup_dist:.3g}, grad_z={bm.grad_z:.3g}, "
                f"r={r:.3g}", report)

        inc = x_norm(_diff_field(w, v), q, T)
        if increments and increments[-1] > 10 * cfg.fp_tol * scale:
            factor = inc / increments[-1]
            report.contraction_factors.append(factor)
            if factor >= 1.0:
                raise ContractionFailure(
                    f"contraction factor {factor:.3f} >= 1", report)
        increments.append(inc)
        v = w
        solution = sol
        if inc <= cfg.fp_tol * scale:
            report.converged = True
            break
        report.iterations += 1
    if not report.converged:
        raise ContractionFailure(
            f"no convergence within {cfg.max_iters} iterations", report)

    report.windows = [(0.0, T)]
    lam = max(solution.lambda_min, 1e-300)
    report.validity_horizon = grid.validity_horizon(lam)
    u_lo, u_hi = essential_range(v)
    report.range_drift = max(u_hi - hi, lo - u_lo, 0.0)

    if cfg.compute_oracle_gap:
        oracle = direct_solve(u0, a, times, theta=cfg.theta)
        report.oracle_gap = float(np.max(np.abs(v.values - oracle.values)))
    return v, report


def global_solve(u0: ScalarField, a: CoefficientFn, T_end: float,
                 cfg: FixedPointConfig):
    """Glue local fixed-point windows until ``T_end``.

    Each window restarts from the previous terminal frame with the
    time-shifted nonlinearity; the window length halves on failure and
    doubles (capped by ``cfg.T``) after ``grow_after`` consecutive
    successes.  Windows share their junction node, so the glued frames
    form one field on [0, T_end].
    """
    if not T_end > 0:
        raise QuasidiffError("global horizon must be positive")
    grid = u0.grid
    report = SolveReport(converged=True)
    report.lip_radius_product = None
    report.coeff_time_osc = None

    all_times = [np.array([0.0])]
    all_frames = [u0.values[None]]
    u_cur = u0
    t0 = 0.0
    window = min(cfg.T, T_end)
    successes = 0
    lam_min = np.inf

    while t0 < T_end * (1 - 1e-12):
        window = min(window, T_end - t0)
        local_cfg = FixedPointConfig(
            q=cfg.q, r=cfg.r, T=window, max_iters=cfg.max_iters,
            fp_tol=cfg.fp_tol, contraction_window=cfg.contraction_window,
            theta=cfg.theta, min_steps=cfg.min_steps, dt_max=cfg.dt_max,
            grow_after=cfg.grow_after, compute_oracle_gap=False,
        )
        try:
            u_loc, rep_loc = local_solve_fixed_point(u_cur, a.time_shifted(t0), local_cfg)
        except ContractionFailure as exc:
            window = 0.5 * window
            successes = 0
            if window < 1e-6 * T_end:
                report.flags["window_underflow_at"] = t0
                raise ContractionFailure(
                    f"window underflow at t={t0:.6g}: {exc}", report) from exc
            continue

        report.iterations += rep_loc.iterations
        report.theta_applications += rep_loc.theta_applications
        report.contraction_factors.extend(rep_loc.contraction_factors)
        report.ball_history.extend(rep_loc.ball_history)
        report.windows.append((t0, t0 + window))
        report.validity_horizon = min(report.validity_horizon, rep_loc.validity_horizon)

        all_times.append(t0 + u_loc.times[1:])
        all_frames.append(u_loc.values[1:])
        u_cur = ScalarField(grid, u_loc.values[-1])
        t0 += window
        successes += 1
        if cfg.grow_after is not None and successes >= cfg.grow_after:
            window = min(2.0 * window, cfg.T, max(T_end - t0, 1e-300))
            successes = 0

    times = np.concatenate(all_times)
    frames = np.concatenate(all_frames, axis=0)
    u = SpaceTimeField(grid, times, frames)

    lo, hi = essential_range(u0)
    u_lo, u_hi = essential_range(u)
    report.range_drift = max(u_hi - hi, lo - u_lo, 0.0)

    if cfg.compute_oracle_gap:
        oracle = direct_solve(u0, a, times, theta=cfg.theta)
        report.oracle_gap = float(np.max(np.abs(u.values - oracle.values)))
    return u, report


def direct_solve(u0: ScalarField, a: CoefficientFn, times,
                 theta: float = 1.0, corrections: int = 2) -> SpaceTimeField:
    """Semi-implicit oracle, independent of the fixed-point machinery.

    Each step freezes the coefficient at the old state for a predictor
    theta-step, then re-steps with the implicit side re-evaluated at the
    candidate and the new time (the explicit side stays at the old
    state), which makes the oracle agree with the non-autonomous linear
    solver for state-independent nonlinearities and formally
    second-order in the frozen coefficient.
    """
    grid = u0.grid
    times = np.asarray(times, dtype=np.float64)
    if times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise QuasidiffError("need a strictly increasing time grid starting at 0")
    coords = grid.coords()
    o_lo, o_hi = a.interval

    def check_range(vals, when):
        lo, hi = float(np.min(vals)), float(np.max(vals))
        if lo <= o_lo or hi >= o_hi:
            raise RangeEscape(
                f"state range [{lo:.6g}, {hi:.6g}] left ({o_lo:.6g}, {o_hi:.6g}) "
                f"at {when}"
            )

    check_range(u0.values, "t=0")
    frames = np.empty((times.size,) + grid.shape)
    frames[0] = u0.values
    u = u0.values
    ncells = grid.num_cells

    for m in range(times.size - 1):
        dt = times[m + 1] - times[m]
        A_ex = a.matrix(times[m], coords, u)
        L_ex = assemble_operator(A_ex, grid)
        explicit = u.ravel() + (dt * (1.0 - theta)) * (L_ex @ u.ravel()) \
            if theta < 1.0 else u.ravel()

        use_cg = grid.dim == 2 and float(np.max(np.abs(A_ex[0, 1]))) == 0.0 \
            and float(np.max(np.abs(A_ex[1, 0]))) == 0.0

        cand = u
        A_im = A_ex
        L_im = L_ex
        for _ in range(corrections + 1):
            solver = _ImplicitSolver(L_im, dt * theta, ncells, use_cg)
            cand = solver.solve(explicit).reshape(grid.shape)
            if not np.all(np.isfinite(cand)):
                raise QuasidiffError(f"non-finite state at step {m}")
            check_range(cand, f"t={times[m + 1]:.6g}")
            A_im = a.matrix(times[m + 1], coords, cand)
            L_im = assemble_operator(A_im, grid)
        u = cand
        frames[m + 1] = u
    return SpaceTimeField(grid, times, frames)


def standard_mollifier_kernel(grid: Grid, eps: float) -> np.ndarray:
    """The compactly supported bump exp(-1/(1 - |x/eps|^2)) on |x| < eps,
    sampled at periodic cell offsets and normalized to unit discrete
    mass, so convolution preserves constants and the value hull."""
    if eps <= 0 or eps >= grid.length / 2:
        raise QuasidiffError(f"mollification width {eps} outside (0, L/2)")
    d = grid.periodic_distance_from_origin()
    rho2 = (d / eps) ** 2
    kern = np.zeros(grid.shape)
    inside = rho2 < 1.0
    kern[inside] = np.exp(-1.0 / (1.0 - rho2[inside]))
    total = kern.sum()
    if total == 0.0:
        raise QuasidiffError("mollifier support below grid resolution")
    return kern / total


def mollify(u: ScalarField, eps: float) -> ScalarField:
    kern = standard_mollifier_kernel(u.grid, eps)
    axes = tuple(range(-u.grid.dim, 0))
    out = np.fft.irfftn(
        np.fft.rfftn(u.values, axes=axes) * np.fft.rfftn(kern, axes=axes),
        s=u.grid.shape, axes=axes,
    )
    return ScalarField(u.grid, out)


def sample_at_times(u: SpaceTimeField, ts) -> np.ndarray:
    """Frames at arbitrary times by linear interpolation."""
    ts = np.asarray(ts, dtype=np.float64)
    if np.any(ts < u.times[0]) or np.any(ts > u.times[-1] * (1 + 1e-12)):
        raise QuasidiffError("interpolation times outside the sampled span")
    flat = u.values.reshape(u.num_frames, -1)
    out = np.empty((ts.size, flat.shape[1]))
    for j, t in enumerate(ts):
        i = min(int(np.searchsorted(u.times, t, side="right")), u.num_frames - 1)
        i0 = max(i - 1, 0)
        if i == i0:
            out[j] = flat[i0]
        else:
            lam = (t - u.times[i0]) / (u.times[i] - u.times[i0])
            out[j] = (1 - lam) * flat[i0] + lam * flat[i]
    return out.reshape((ts.size,) + u.grid.shape)


def mollify_solve(u0_rough: ScalarField, a: CoefficientFn, eps_list, T_end: float,
                  cfg: FixedPointConfig, n_probe: int = 17):
    """Regularize rough bounded data at several widths and solve each.

    Returns ``(solutions, report)`` where ``solutions`` is a list of
    (eps, SpaceTimeField) and the report carries the pairwise space-time
    L2 distances on [T_end/4, T_end] (the Cauchy-in-eps trend), the sup
    bounds against the rough datum, and the value hulls.
    """
    eps_list = [float(e) for e in eps_list]
    if any(b >= a_ for a_, b in zip(eps_list, eps_list[1:])):
        raise QuasidiffError("mollification widths must decrease")
    grid = u0_rough.grid
    r_sharp = safety_radius(u0_rough, a.interval)   # hull strictly inside O
    rough_lo, rough_hi = essential_range(u0_rough)
    sup0 = u0_rough.sup_norm()

    solutions = []
    hulls = []
    for eps in eps_list:
        u0e = mollify(u0_rough, eps)
        lo, hi = essential_range(u0e)
        if lo < rough_lo - 1e-9 or hi > rough_hi + 1e-9:
            raise RangeEscape(
                f"mollified range [{lo:.6g}, {hi:.6g}] left the datum hull")
        u_eps, _ = global_solve(u0e, a, T_end, cfg)
        solutions.append((eps, u_eps))
        hulls.append(essential_range(u_eps))

    probes = np.linspace(T_end / 4.0, T_end, n_probe)
    sampled = [sample_at_times(u, probes) for _, u in solutions]
    vol = grid.cell_volume
    pair_dist = {}
    for i in range(len(solutions)):
        for j in range(i + 1, len(solutions)):
            diff2 = (sampled[i] - sampled[j]) ** 2
            space = diff2.reshape(probes.size, -1).sum(axis=1) * vol
            pair_dist[(eps_list[i], eps_list[j])] = float(
                np.sqrt(np.trapezoid(space, probes)))

    consecutive = [pair_dist[(eps_list[i], eps_list[i + 1])]
                   for i in range(len(eps_list) - 1)]
    report = {
        "pairwise_l2": pair_dist,
        "consecutive_distances": consecutive,
        "cauchy_monotone": all(b <= a_ for a_, b in zip(consecutive, consecutive[1:])),
        "sup_bounds": [float(np.max(np.abs(u.values))) for _, u in solutions],
        "sup_bound_ok": all(np.max(np.abs(u.values)) <= sup0 + 1e-10
                            for _, u in solutions),
        "value_hulls": hulls,
        "datum_hull": (rough_lo, rough_hi),
    }
    return solutions, report
