import numpy as np
import pytest

from quasidiff.fields import ScalarField, SpaceTimeField
from quasidiff.grid import Grid
from quasidiff.heat import (
    geometric_probe_times,
    heat_extend,
    heat_gradient_faces,
    heat_gradient_sup,
    heat_gradient_vanishing,
    periodized_gaussian,
)

G = Grid(1, 256, 1.0)
X = G.coords()[0]
KAPPA = 2 * np.pi


def smoothed_sign(grid, width):
    """sign(x - L/2) mollified at Gaussian scale ``width`` (heat kernel
    smoothing at t = width^2/2, which is the erf profile)."""
    x = grid.coords()[0]
    raw = ScalarField(grid, np.where(x < grid.length / 2, -1.0, 1.0))
    return heat_extend(raw, [width**2 / 2.0]).frames.values[-1]


def test_constant_datum_invariant():
    u0 = ScalarField.constant(G, 4.2)
    he = heat_extend(u0, [0.0, 0.01, 0.1])
    assert np.max(np.abs(he.frames.values - 4.2)) < 1e-13
    assert np.max(np.abs(he.gradient_frames.values)) < 1e-12


def test_cosine_is_spectral_eigenfunction():
    u0 = ScalarField(G, np.cos(KAPPA * X))
    ts = np.array([0.0, 1e-4, 1e-3, 1e-2])
    he = heat_extend(u0, ts)
    for m, t in enumerate(ts):
        exact = np.exp(-KAPPA**2 * t) * np.cos(KAPPA * X)
        rel = np.max(np.abs(he.frames.values[m] - exact))
        assert rel <= 1e-12
        g_exact = -KAPPA * np.exp(-KAPPA**2 * t) * np.sin(KAPPA * X)
        assert np.max(np.abs(he.gradient_frames.values[m, 0] - g_exact)) <= 1e-10


def test_delta_matches_periodized_gaussian():
    # discrete delta scaled by 1/dx evolves onto the image-sum kernel
    vals = np.zeros(G.shape)
    vals[G.n // 2] = 1.0 / G.dx
    u0 = ScalarField(G, vals)
    t = (G.length / 16) ** 2
    he = heat_extend(u0, [t])
    center = (X[G.n // 2],)
    exact = periodized_gaussian(G, t, center, images=3)
    rel = np.max(np.abs(he.frames.values[0] - exact)) / np.max(exact)
    assert rel <= 1e-8


def test_frame_zero_is_datum_and_mass_conserved():
    rng = np.random.default_rng(3)
    u0 = ScalarField(G, rng.standard_normal(G.n))
    ts = np.array([0.0, 0.001, 0.01])
    he = heat_extend(u0, ts)
    assert np.array_equal(he.frames.values[0], u0.values)
    means = he.frames.values.mean(axis=1)
    assert np.max(np.abs(means - u0.mean())) < 1e-13


def test_semigroup_property():
    u0 = ScalarField(G, np.cos(KAPPA * X) + 0.3 * np.cos(3 * KAPPA * X))
    s, t = 0.002, 0.005
    one_hop = heat_extend(u0, [s]).frames.values[0]
    two_hop = heat_extend(ScalarField(G, one_hop), [t]).frames.values[0]
    direct = heat_extend(u0, [s + t]).frames.values[0]
    assert np.max(np.abs(two_hop - direct)) <= 1e-12 * np.max(np.abs(direct))


def test_spectral_max_principle():
    rng = np.random.default_rng(11)
    spec = np.zeros(G.n, dtype=complex)
    spec[1:9] = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    vals = np.real(np.fft.ifft(spec + np.conj(np.roll(spec[::-1], 1))))
    u0 = ScalarField(G, vals)
    he = heat_extend(u0, np.linspace(0, 0.05, 11))
    lo, hi = u0.values.min(), u0.values.max()
    tol = 1e-10 * u0.sup_norm()
    assert he.frames.values.min() >= lo - tol
    assert he.frames.values.max() <= hi + tol


def test_gradient_sup_constant_is_zero():
    s, ok = heat_gradient_sup(ScalarField.constant(G, 2.0), 0.01)
    assert s == 0.0
    assert ok


def test_gradient_sup_cosine_closed_form():
    # sqrt(t)*kappa*exp(-kappa^2 t) maximized at t = 1/(2 kappa^2)
    u0 = ScalarField(G, np.cos(KAPPA * X))
    T = G.validity_horizon(1.0)
    s, ok = heat_gradient_sup(u0, T)
    expected = np.exp(-0.5) / np.sqrt(2.0)
    assert s == pytest.approx(expected, abs=1e-3)
    assert ok


def test_gradient_sup_smoothed_sign_attains_erf_constant():
    # jump of height 2 drives sqrt(t)|grad e^{tD}| up to 1/sqrt(pi),
    # reduced by sqrt(t/(t+w^2)) for the mollified datum (erf oracle)
    g = Grid(1, 512, 1.0)
    u0 = ScalarField(g, smoothed_sign(g, 4 * g.dx))
    T = g.validity_horizon(1.0)
    s, ok = heat_gradient_sup(u0, T)
    assert s <= (1 / np.sqrt(2)) * 1.05
    assert s >= 0.55
    assert ok


def test_gradient_vanishing_cosine_scales_like_sqrt_t():
    u0 = ScalarField(G, np.cos(KAPPA * X))
    t_seq = [4.0**-k for k in range(1, 9)]
    norms, flags = heat_gradient_vanishing(u0, t_seq)
    assert "no_buc_vanishing" not in flags
    assert all(b <= a * (1 + 1e-12) for a, b in zip(norms, norms[1:]))
    # on the small-t tail the Lipschitz bound sqrt(t)*kappa is sharp
    for t_k, val in list(zip(t_seq, norms))[5:]:
        assert val == pytest.approx(KAPPA * np.sqrt(t_k), rel=0.05)
    ratios = [a / b for a, b in zip(norms[5:], norms[6:])]
    for r in ratios:
        assert r == pytest.approx(2.0, abs=0.15)


def test_gradient_vanishing_raw_step_plateaus():
    # windows stay above the grid scale dx^2, below which the sampled
    # step is grid-Lipschitz and the discrete weighted gradient decays
    vals = np.where(X < 0.5, 0.0, 1.0)
    u0 = ScalarField(G, vals)
    t_seq = [4.0**-k for k in range(2, 8)]
    assert t_seq[-1] > G.dx**2
    norms, flags = heat_gradient_vanishing(u0, t_seq)
    assert flags.get("no_buc_vanishing", False)
    # jump of height 1: sqrt(s)*|grad| -> 1/(2 sqrt(pi)) per erf oracle
    plateau = 0.5 / np.sqrt(np.pi)
    assert norms[-1] == pytest.approx(plateau, rel=0.05)


def test_face_gradient_sampling_is_shifted_exactly():
    u0 = ScalarField(G, np.sin(KAPPA * X))
    t = 0.003
    gf = heat_gradient_faces(u0, [t])
    exact = KAPPA * np.exp(-KAPPA**2 * t) * np.cos(KAPPA * (X + G.dx / 2))
    assert np.max(np.abs(gf[0, 0] - exact)) < 1e-12


def test_probe_times_geometric_coverage():
    ts = geometric_probe_times(1.0, 16, 3.0)
    assert ts[-1] == 1.0
    assert ts[0] == pytest.approx(1e-3)
    ratios = ts[1:] / ts[:-1]
    assert np.allclose(ratios, ratios[0])
