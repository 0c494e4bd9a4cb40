"""Theta-scheme solver for d_t u - Div(A grad u) = Div(F) on the torus.

Space is discretized in conservation form: fluxes live on cell faces,
face coefficients are arithmetic means of the adjacent cell matrices,
and the divergence differences face fluxes back to centers, so the
scheme conserves the torus mean exactly.  Each implicit step solves one
sparse system: a direct factorization in 1-D (bit-stable for regression
baselines), conjugate gradients with diagonal preconditioning for
diagonal coefficients in 2-D, and a direct factorization for full
matrices in 2-D, whose cross-derivative stencil is not symmetric.
"""

from __future__ import annotations

import numpy as np
from scipy.sparse import csr_matrix, identity
from scipy.sparse.linalg import cg, splu

from .errors import MaxPrincipleViolation, QuasidiffError, SolverFailure
from .fields import ScalarField, SpaceTimeField, face_gradient, face_to_center
from .grid import Grid
from .heat import _face_shift, _fftn, _gradient_multipliers, _ifftn_real, _k2
from .norms import ZNormSpec, z_norm


def min_eigen_sym(A: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of the symmetric part, per sample; A has
    shape (d, d, ...)."""
    d = A.shape[0]
    if d == 1:
        return A[0, 0]
    half_tr = 0.5 * (A[0, 0] + A[1, 1])
    off = 0.5 * (A[0, 1] + A[1, 0])
    rad = np.sqrt((0.5 * (A[0, 0] - A[1, 1])) ** 2 + off**2)
    return half_tr - rad


def _face_matrices(A: np.ndarray, grid: Grid):
    """Arithmetic face averages of a cell matrix field along each axis;
    entry a of the result holds the matrix on faces normal to axis a."""
    return [0.5 * (A + np.roll(A, -1, axis=2 + a)) for a in range(grid.dim)]


def _centered_diff(u, axis, dx):
    return (np.roll(u, -1, axis=axis) - np.roll(u, 1, axis=axis)) / (2.0 * dx)


def face_gradient_full(u: np.ndarray, grid: Grid):
    """All gradient components sampled on each face family.

    Returns ``g[a][b]`` = (d_b u) on faces normal to axis a: the normal
    component is the two-point difference, tangential components average
    the centered differences of the two adjacent cells.
    """
    dx = grid.dx
    out = []
    for a in range(grid.dim):
        comps = []
        for b in range(grid.dim):
            if a == b:
                comps.append((np.roll(u, -1, axis=a) - u) / dx)
            else:
                cd = _centered_diff(u, b, dx)
                comps.append(0.5 * (cd + np.roll(cd, -1, axis=a)))
        out.append(comps)
    return out


def apply_divergence_form(u: np.ndarray, A_faces, grid: Grid) -> np.ndarray:
    """Div(A grad u) at cell centers from face-averaged coefficients."""
    dx = grid.dx
    g = face_gradient_full(u, grid)
    out = np.zeros_like(u)
    for a in range(grid.dim):
        q = np.zeros_like(u)
        for b in range(grid.dim):
            q += A_faces[a][a, b] * g[a][b]
        out += (q - np.roll(q, 1, axis=a)) / dx
    return out


def face_divergence(F: np.ndarray, grid: Grid) -> np.ndarray:
    """Divergence of a face-layout vector field, at cell centers."""
    out = np.zeros(grid.shape)
    for a in range(grid.dim):
        out += (F[a] - np.roll(F[a], 1, axis=a)) / grid.dx
    return out


def flux_field(u: np.ndarray, A: np.ndarray, grid: Grid, F: np.ndarray | None = None) -> np.ndarray:
    """A grad u + F on faces; component a of the output lives on faces
    normal to axis a."""
    A_faces = _face_matrices(A, grid)
    g = face_gradient_full(u, grid)
    out = np.zeros((grid.dim,) + grid.shape)
    for a in range(grid.dim):
        for b in range(grid.dim):
            out[a] += A_faces[a][a, b] * g[a][b]
    if F is not None:
        out += F
    return out


def assemble_operator(A: np.ndarray, grid: Grid) -> csr_matrix:
    """Sparse matrix of u -> Div(A grad u), extracted by probing the
    flux code with period-4 comb fields so matrix and operator agree to
    the bit.  Requires the cell count per axis to be a multiple of 4
    (stencil offsets are distinct mod 4)."""
    n = grid.n
    if n % 4 != 0:
        raise QuasidiffError("operator assembly needs n divisible by 4")
    A_faces = _face_matrices(A, grid)
    idx = np.arange(n)
    ncells = grid.num_cells

    if grid.dim == 1:
        responses = {}
        for c in range(4):
            comb = (idx % 4 == c).astype(float)
            responses[c] = apply_divergence_form(comb, A_faces, grid)
        offsets = [(-1,), (0,), (1,)]
    else:
        responses = {}
        for c0 in range(4):
            m0 = (idx % 4 == c0).astype(float)[:, None]
            for c1 in range(4):
                comb = m0 * (idx % 4 == c1).astype(float)[None, :]
                responses[(c0, c1)] = apply_divergence_form(comb, A_faces, grid)
        offsets = [(d0, d1) for d0 in (-1, 0, 1) for d1 in (-1, 0, 1)]

    rows, cols, data = [], [], []
    cell_index = np.arange(ncells).reshape(grid.shape)
    for off in offsets:
        # weight of u[p + off] in (L u)[p]: read the response of the comb
        # whose support contains p + off
        if grid.dim == 1:
            shifted_class = (idx + off[0]) % 4
            w = np.empty(n)
            for c in range(4):
                sel = shifted_class == c
                w[sel] = responses[c][sel]
            col = np.roll(cell_index, -off[0])
        else:
            cls0 = (idx[:, None] + off[0]) % 4
            cls1 = (idx[None, :] + off[1]) % 4
            w = np.empty(grid.shape)
            for c0 in range(4):
                for c1 in range(4):
                    sel = (cls0 == c0) & (cls1 == c1)
                    if np.any(sel):
                        w[sel] = responses[(c0, c1)][sel]
            col = np.roll(cell_index, (-off[0], -off[1]), axis=(0, 1))
        rows.append(cell_index.ravel())
        cols.append(col.ravel())
        data.append(w.ravel())

    mat = csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(ncells, ncells),
    )
    mat.sum_duplicates()
    return mat


class LinearProblem:
    """Divergence-form parabolic problem on a fixed time grid.

    ``A`` is a matrix-rank SpaceTimeField on the same times, or a single
    array (d, d, *shape) for a time-constant coefficient (pass via
    ``A0``).  ``F`` is an optional face-layout vector SpaceTimeField.
    ``times[0]`` must be 0 and ``theta`` in [1/2, 1].
    """

    def __init__(self, grid: Grid, times, u0: ScalarField, A: SpaceTimeField | None = None,
                 A0: np.ndarray | None = None, F: SpaceTimeField | None = None,
                 theta: float = 1.0):
        times = np.asarray(times, dtype=np.float64)
        if times[0] != 0.0:
            raise QuasidiffError("problem time grid must start at 0")
        if times.size < 2 or np.any(np.diff(times) <= 0):
            raise QuasidiffError("need a strictly increasing time grid")
        if not (0.5 <= theta <= 1.0):
            raise QuasidiffError(f"theta must be in [1/2, 1], got {theta}")
        if (A is None) == (A0 is None):
            raise QuasidiffError("provide exactly one of A (time-dependent) or A0")
        if A is not None:
            if A.rank != (grid.dim, grid.dim) or A.num_frames != times.size:
                raise QuasidiffError("A must be a matrix field on the problem times")
            if not np.allclose(A.times, times):
                raise QuasidiffError("A.times must match the problem times")
        else:
            A0 = np.asarray(A0, dtype=np.float64)
            if A0.shape != (grid.dim, grid.dim) + grid.shape:
                raise QuasidiffError(f"A0 has shape {A0.shape}")
        if F is not None:
            if F.rank != (grid.dim,) or not np.allclose(F.times, times):
                raise QuasidiffError("F must be a vector field on the problem times")
        if u0.grid.shape != grid.shape:
            raise QuasidiffError("datum grid mismatch")

        self.grid = grid
        self.times = times
        self.u0 = u0
        self.A = A
        self.A0 = A0
        self.F = F
        self.theta = float(theta)

        lam = np.inf
        for m in (range(times.size) if A is not None else (0,)):
            lam = min(lam, float(np.min(min_eigen_sym(self.coefficient(m)))))
        if not lam > 0:
            raise QuasidiffError(f"coefficient not uniformly elliptic: min eigen {lam:.3g}")
        self.lambda_min = lam

    @property
    def time_constant(self) -> bool:
        return self.A is None

    def coefficient(self, m: int) -> np.ndarray:
        return self.A0 if self.A is None else self.A.values[m]

    def source(self, m: int):
        return None if self.F is None else self.F.values[m]

    def is_diagonal(self) -> bool:
        if self.grid.dim == 1:
            return True
        if self.A is None:
            off = max(np.abs(self.A0[0, 1]).max(), np.abs(self.A0[1, 0]).max())
        else:
            off = max(np.abs(self.A.values[:, 0, 1]).max(), np.abs(self.A.values[:, 1, 0]).max())
        return off == 0.0


class LinearSolution:
    """Solution frames with face gradient, face flux and per-step
    linear-solve residuals."""

    def __init__(self, u: SpaceTimeField, grad_u: SpaceTimeField, flux: SpaceTimeField,
                 residual_stats, lambda_min: float, flags: dict):
        self.u = u
        self.grad_u = grad_u
        self.flux = flux
        self.residual_stats = residual_stats
        self.lambda_min = lambda_min
        self.flags = flags

    @property
    def validity_horizon(self) -> float:
        return self.u.grid.validity_horizon(self.lambda_min)


class _ImplicitSolver:
    """One (I - dt*theta*L) solve, direct or preconditioned CG."""

    def __init__(self, L: csr_matrix, dt_theta: float, ncells: int, use_cg: bool):
        self.mat = (identity(ncells, format="csr") - dt_theta * L).tocsc()
        self.use_cg = use_cg
        if use_cg:
            diag = self.mat.diagonal()
            self._pre = 1.0 / diag
            self.mat = self.mat.tocsr()
        else:
            self._lu = splu(self.mat)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if not self.use_cg:
            return self._lu.solve(rhs)
        pre = self._pre

        from scipy.sparse.linalg import LinearOperator

        M = LinearOperator(self.mat.shape, matvec=lambda v: pre * v)
        x, info = cg(self.mat, rhs, rtol=1e-13, atol=0.0, M=M, maxiter=4000)
        if info != 0:
            raise SolverFailure(f"conjugate gradient did not converge (info={info})")
        return x

    def residual(self, x: np.ndarray, rhs: np.ndarray) -> float:
        r = self.mat @ x - rhs
        denom = max(float(np.linalg.norm(rhs)), 1e-300)
        return float(np.linalg.norm(r)) / denom


def solve_linear(problem: LinearProblem) -> LinearSolution:
    """March the theta scheme over the problem's time grid.

    The implicit side freezes A and F at the new time level, the
    explicit side at the old one, which is the trapezoidal evaluation
    for theta = 1/2.  Per-step linear residuals above 1e-10 of the
    right-hand side raise SolverFailure.
    """
    grid = problem.grid
    times = problem.times
    theta = problem.theta
    ncells = grid.num_cells
    use_cg = grid.dim == 2 and problem.is_diagonal()

    flags = {}
    max_dt = float(np.max(np.diff(times)))
    flags["cfl_accuracy_ok"] = bool(max_dt <= grid.dx * (1 + 1e-12))
    if grid.dim == 2 and not problem.is_diagonal():
        flags["non_monotone_stencil"] = True

    frames = np.empty((times.size,) + grid.shape)
    frames[0] = problem.u0.values
    residuals = []

    L_cache: dict = {}
    solver_cache: dict = {}

    def operator_for(m):
        key = "const" if problem.time_constant else m
        if key not in L_cache:
            if len(L_cache) > 8:
                L_cache.clear()
            L_cache[key] = assemble_operator(problem.coefficient(m), grid)
        return L_cache[key]

    u = frames[0].ravel().copy()
    for m in range(times.size - 1):
        dt = times[m + 1] - times[m]
        L_im = operator_for(m + 1)
        rhs = u.copy()
        if theta < 1.0:
            L_ex = operator_for(m)
            rhs += dt * (1.0 - theta) * (L_ex @ u)
        F_im = problem.source(m + 1)
        F_ex = problem.source(m)
        if F_im is not None:
            rhs += dt * theta * face_divergence(F_im, grid).ravel()
        if F_ex is not None and theta < 1.0:
            rhs += dt * (1.0 - theta) * face_divergence(F_ex, grid).ravel()

        skey = ("const" if problem.time_constant else m + 1, round(dt, 15))
        solver = solver_cache.get(skey)
        if solver is None:
            if len(solver_cache) > 8:
                solver_cache.clear()
            solver = _ImplicitSolver(L_im, dt * theta, ncells, use_cg)
            solver_cache[skey] = solver
        u = solver.solve(rhs)
        r = solver.residual(u, rhs)
        residuals.append(r)
        if r > 1e-10:
            raise SolverFailure(f"step {m}: linear residual {r:.3e} exceeds 1e-10")
        if not np.all(np.isfinite(u)):
            raise SolverFailure(f"step {m}: non-finite state")
        frames[m + 1] = u.reshape(grid.shape)

    u_field = SpaceTimeField(grid, times, frames)
    grads = face_gradient(frames, grid)
    fluxes = np.empty_like(grads)
    for m in range(times.size):
        Fm = problem.source(m)
        fluxes[m] = flux_field(frames[m], problem.coefficient(m), grid, Fm)
    grad_field = SpaceTimeField(grid, times, grads, rank=(grid.dim,))
    flux_field_st = SpaceTimeField(grid, times, fluxes, rank=(grid.dim,))
    return LinearSolution(u_field, grad_field, flux_field_st, residuals,
                          problem.lambda_min, flags)


def free_evolution(A0: np.ndarray, u0: ScalarField, times, theta: float = 1.0) -> LinearSolution:
    """Homogeneous evolution under a frozen coefficient, with the sup
    bound ||u|| <= ||u0|| checked a posteriori.  For the backward Euler
    scheme with diagonal coefficients the bound must hold to 1e-10
    (M-matrix); Crank-Nicolson and cross-term stencils get the
    documented relaxed bands."""
    grid = u0.grid
    problem = LinearProblem(grid, times, u0, A0=A0, theta=theta)
    sol = solve_linear(problem)
    diagonal = problem.is_diagonal()
    if theta == 1.0 and diagonal:
        tol = 1e-10
    elif not diagonal:
        tol = 1e-2
    else:
        tol = 1e-3
    bound = u0.sup_norm() * (1.0 + tol) + 1e-300
    got = sol.u.sup_norm()
    if got > bound:
        raise MaxPrincipleViolation(
            f"sup norm {got:.12g} exceeds datum bound {u0.sup_norm():.12g} "
            f"(tolerance {tol:g})"
        )
    return sol


def inhom_solution(A0: np.ndarray, F: SpaceTimeField, times, theta: float = 1.0,
                   q: float | None = None):
    """Zero-datum solve driven by a divergence-form source.

    Returns ``(solution, rho)`` where rho is the measured ratio
    (||u||_inf + ||grad u||_Z) / ||F||_Z, the empirical stand-in for the
    unquantified stability constant; it should stay bounded under grid
    refinement.
    """
    grid = F.grid
    if q is None:
        q = grid.dim + 3
    u0 = ScalarField.constant(grid, 0.0)
    problem = LinearProblem(grid, times, u0, A0=A0, F=F, theta=theta)
    sol = solve_linear(problem)

    T = float(times[-1])
    spec = ZNormSpec(q=q, T=T)
    grad_centered = SpaceTimeField(grid, sol.u.times,
                                   face_to_center(sol.grad_u.values, grid),
                                   rank=(grid.dim,))
    F_centered = SpaceTimeField(grid, F.times, face_to_center(F.values, grid),
                                rank=(grid.dim,))
    f_norm = z_norm(F_centered, spec)
    if f_norm == 0.0:
        rho = 0.0
    else:
        rho = (sol.u.sup_norm() + z_norm(grad_centered, spec)) / f_norm
    return sol, rho


def representation_check(A0: np.ndarray, u0: ScalarField, times, theta: float = 1.0) -> float:
    """Sup defect of the perturbation identity: the frozen-coefficient
    evolution of the datum minus [heat extension + zero-datum response to
    (A0 - Id) times the heat gradient].  Decays at the scheme's order."""
    grid = u0.grid
    times = np.asarray(times, dtype=np.float64)
    free = free_evolution(A0, u0, times, theta=theta)

    spec0 = _fftn(u0.values)
    k2 = _k2(grid)
    gmult = _gradient_multipliers(grid)
    shifts = [_face_shift(grid, a) for a in range(grid.dim)]
    A_faces = _face_matrices(A0, grid)
    eye = np.eye(grid.dim)

    heat_frames = np.empty((times.size,) + grid.shape)
    F_vals = np.zeros((times.size, grid.dim) + grid.shape)
    for m, t in enumerate(times):
        st = spec0 if t == 0.0 else spec0 * np.exp(-k2 * t)
        heat_frames[m] = u0.values if t == 0.0 else _ifftn_real(st)
        for a in range(grid.dim):
            for b in range(grid.dim):
                coeff = A_faces[a][a, b] - eye[a, b]
                if np.any(coeff != 0.0):
                    g_b = _ifftn_real(shifts[a] * gmult[b] * st)
                    F_vals[m, a] += coeff * g_b

    F = SpaceTimeField(grid, times, F_vals, rank=(grid.dim,))
    corr, _ = inhom_solution(A0, F, times, theta=theta)
    recon = heat_frames + corr.u.values
    return float(np.max(np.abs(free.u.values - recon)))


class SpaceTimeTestFunction:
    """Separable smooth test function: time profile times torus harmonic.

    ``time_profile`` is one of the factory products below exposing value
    and derivative; the spatial factor is cos(k.x + phase) with k a
    torus wavenumber multi-index.
    """

    def __init__(self, grid: Grid, k_index, phase: float, time_profile):
        self.grid = grid
        self.k = 2.0 * np.pi * np.asarray(k_index, dtype=float) / grid.length
        self.phase = float(phase)
        self.time = time_profile

    def _spatial(self, coords):
        arg = self.phase
        for kc, c in zip(self.k, coords):
            arg = arg + kc * c
        return np.cos(arg)

    def _spatial_grad(self, coords, axis):
        arg = self.phase
        for kc, c in zip(self.k, coords):
            arg = arg + kc * c
        return -self.k[axis] * np.sin(arg)

    def value(self, t, coords):
        return self.time.value(t) * self._spatial(coords)

    def dt(self, t, coords):
        return self.time.derivative(t) * self._spatial(coords)

    def grad(self, t, coords, axis):
        return self.time.value(t) * self._spatial_grad(coords, axis)

    def c2_bound(self):
        kk = float(np.sum(self.k**2))
        amp = self.time.sup + self.time.sup_derivative
        return amp * (1.0 + np.sqrt(kk) + kk)


class SmoothBump:
    """exp(-1/(tau(1-tau))) time bump supported inside (t_lo, t_hi)."""

    def __init__(self, t_lo: float, t_hi: float):
        if not t_hi > t_lo:
            raise QuasidiffError("empty bump support")
        self.t_lo, self.t_hi = float(t_lo), float(t_hi)
        self.sup = 1.0
        width = self.t_hi - self.t_lo
        self.sup_derivative = 8.0 / width  # loose analytic bound

    def _tau(self, t):
        return (t - self.t_lo) / (self.t_hi - self.t_lo)

    def value(self, t):
        tau = self._tau(t)
        if tau <= 0.0 or tau >= 1.0:
            return 0.0
        return float(np.exp(4.0 - 1.0 / (tau * (1.0 - tau))))

    def derivative(self, t):
        tau = self._tau(t)
        if tau <= 0.0 or tau >= 1.0:
            return 0.0
        v = np.exp(4.0 - 1.0 / (tau * (1.0 - tau)))
        return float(v * (2.0 * tau - 1.0) / (tau * (1.0 - tau)) ** 2
                     / (self.t_hi - self.t_lo))


class PolynomialTimeProfile:
    """Smooth non-compact profile for the integral identity check."""

    def __init__(self, coeffs, t_scale: float):
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.t_scale = float(t_scale)
        self.sup = float(np.sum(np.abs(self.coeffs)))
        self.sup_derivative = self.sup * len(self.coeffs) / max(t_scale, 1e-300)

    def value(self, t):
        return float(np.polyval(self.coeffs[::-1], t / self.t_scale))

    def derivative(self, t):
        der = np.polyder(np.poly1d(self.coeffs[::-1]))
        return float(der(t / self.t_scale)) / self.t_scale


def default_test_functions(grid: Grid, T: float, count: int = 12):
    """Tensor-product test set: smooth time bumps times torus harmonics."""
    bumps = [SmoothBump(0.05 * T, 0.95 * T), SmoothBump(0.25 * T, 0.75 * T)]
    if grid.dim == 1:
        kset = [(1,), (2,), (3,)]
    else:
        kset = [(1, 0), (0, 1), (1, 1)]
    out = []
    for bump in bumps:
        for k in kset:
            for phase in (0.0, 0.5 * np.pi):
                out.append(SpaceTimeTestFunction(grid, k, phase, bump))
    return out[:count]


def _pairing_quadrature(sol: LinearSolution, problem: LinearProblem, phi,
                        m_lo: int, m_hi: int) -> float:
    """Integral of u(-d_t phi) + flux . grad(phi) over frames
    [m_lo, m_hi].  The u d_t phi factor integrates the time derivative
    exactly (telescoping), so constants produce zero to rounding."""
    grid = problem.grid
    coords = grid.coords()
    vol = grid.cell_volume
    times = problem.times
    u = sol.u.values

    phi_frames = [phi.value(t, coords) for t in times[m_lo:m_hi + 1]]
    term_time = 0.0
    for j, m in enumerate(range(m_lo, m_hi)):
        u_bar = 0.5 * (u[m] + u[m + 1])
        term_time += float(np.sum(u_bar * (phi_frames[j] - phi_frames[j + 1]))) * vol

    term_flux = 0.0
    seg = times[m_lo:m_hi + 1]
    w = np.zeros(seg.size)
    dseg = np.diff(seg)
    w[:-1] += 0.5 * dseg
    w[1:] += 0.5 * dseg
    for j, m in enumerate(range(m_lo, m_hi + 1)):
        if w[j] == 0.0:
            continue
        contrib = 0.0
        for a in range(grid.dim):
            fc = grid.face_coords(a)
            contrib += float(np.sum(sol.flux.values[m, a] * phi.grad(times[m], fc, a)))
        term_flux += w[j] * contrib * vol
    return term_time + term_flux


def weak_residual(sol: LinearSolution, problem: LinearProblem, test_functions=None):
    """Largest pairing defect over the test set.

    Returns ``(max_residual, normalized)`` where ``normalized`` divides
    by (dx^2 + max dt) times the C^2 bound of the worst test function.
    """
    grid = problem.grid
    if test_functions is None:
        test_functions = default_test_functions(grid, float(problem.times[-1]))
    worst = 0.0
    worst_norm = 0.0
    h = grid.dx**2 + float(np.max(np.diff(problem.times)))
    for phi in test_functions:
        r = abs(_pairing_quadrature(sol, problem, phi, 0, problem.times.size - 1))
        worst = max(worst, r)
        worst_norm = max(worst_norm, r / (h * phi.c2_bound()))
    return worst, worst_norm


def integral_identity_check(sol: LinearSolution, problem: LinearProblem, phi,
                            T_prime: float) -> float:
    """Defect of the pairing identity between the initial and terminal
    frames: <u(0), phi(0)> - <u(T'), phi(T')> - iint [u(-d_t phi) +
    flux . grad(phi)].  T' must be a grid time."""
    grid = problem.grid
    times = problem.times
    m_hi = int(np.argmin(np.abs(times - T_prime)))
    if abs(times[m_hi] - T_prime) > 1e-9 * max(1.0, T_prime):
        raise QuasidiffError(f"T'={T_prime} is not a grid time")
    coords = grid.coords()
    vol = grid.cell_volume
    lhs = float(np.sum(sol.u.values[0] * phi.value(0.0, coords))) * vol
    rhs = float(np.sum(sol.u.values[m_hi] * phi.value(times[m_hi], coords))) * vol
    rhs += _pairing_quadrature(sol, problem, phi, 0, m_hi)
    return abs(lhs - rhs)
