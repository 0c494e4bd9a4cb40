from fractions import Fraction

import numpy as np
import pytest

from quasidiff.errors import QuasidiffError
from quasidiff.fields import ScalarField, SpaceTimeField
from quasidiff.grid import Grid
from quasidiff.heat import geometric_probe_times, heat_extend, heat_gradient_sup
from quasidiff.norms import (
    ZNormSpec,
    ball_average,
    parabolic_conjugate_lower,
    parabolic_conjugate_upper,
    weighted_sup_norm,
    z_l2_noninclusion_witness,
    z_norm,
)

G = Grid(1, 64, 1.0)


def geometric_field(fn, grid=G, T=1.0, n=200, t0=1e-6):
    times = np.geomspace(T * t0, T, n)
    return SpaceTimeField.from_time_function(grid, times, fn)


def test_weight_cancellation_gives_exactly_one():
    f = geometric_field(lambda t, x: t**-0.5 + 0.0 * x)
    for q in (1.5, 2.0, 4.0, np.inf):
        val = z_norm(f, ZNormSpec(q=q, T=1.0))
        assert val == pytest.approx(1.0, abs=1e-6)


def test_constant_field_q2_closed_form():
    # window average of s over (t/2, t) is 3t/4; sup at t = T
    f = geometric_field(lambda t, x: 1.0 + 0.0 * x)
    val = z_norm(f, ZNormSpec(q=2.0, T=1.0))
    assert val == pytest.approx(np.sqrt(0.75), rel=0.02)


def test_ball_saturation_flagged():
    f = geometric_field(lambda t, x: 1.0 + 0.0 * x)
    val, details = z_norm(f, ZNormSpec(q=2.0, T=1.0), return_details=True)
    assert details["ball_saturated"]  # sqrt(T) = 1 > L/2


def test_nesting_on_random_fields():
    rng = np.random.default_rng(0)
    times = np.geomspace(1e-4, 1.0, 60)
    qs = [1.5, 2.0, 3.0, 4.0, 8.0, np.inf]
    for trial in range(20):
        vals = rng.standard_normal((60,) + G.shape) * rng.uniform(0.1, 3.0)
        f = SpaceTimeField(G, times, vals)
        norms = [z_norm(f, ZNormSpec(q=q, T=1.0)) for q in qs]
        for lo_q, hi_q in zip(norms, norms[1:]):
            assert lo_q <= hi_q * (1 + 1e-12)


def test_homogeneity():
    rng = np.random.default_rng(1)
    times = np.geomspace(1e-3, 0.5, 40)
    f = SpaceTimeField(G, times, rng.standard_normal((40,) + G.shape))
    lam = 3.7
    g = SpaceTimeField(G, times, lam * f.values)
    for q in (2.0, 4.0, np.inf):
        a = z_norm(f, ZNormSpec(q=q, T=0.5))
        b = z_norm(g, ZNormSpec(q=q, T=0.5))
        assert b == pytest.approx(lam * a, rel=1e-10)


def test_parabolic_scaling_invariance():
    # lam * f(lam^2 s, lam y) over horizon T/lam^2 reproduces the norm:
    # the -1/2 weight is the scale-critical choice
    lam = 2.0
    L = 1.0
    fn = lambda t, x: t**-0.5 * (1.0 + np.cos(2 * np.pi * x / L))
    f = geometric_field(fn, G, T=0.25, n=160)
    g_half = Grid(1, 64, L / lam)
    f_scaled = SpaceTimeField.from_time_function(
        g_half,
        np.geomspace(0.25e-6 / lam**2, 0.25 / lam**2, 160),
        lambda t, x: lam * fn(lam**2 * t, lam * x),
    )
    for q in (2.0, 4.0):
        a = z_norm(f, ZNormSpec(q=q, T=0.25))
        b = z_norm(f_scaled, ZNormSpec(q=q, T=0.25 / lam**2))
        assert b == pytest.approx(a, rel=0.02)


def test_insufficient_resolution_raises():
    f = SpaceTimeField(G, [0.5, 1.0], np.ones((2,) + G.shape))
    with pytest.raises(QuasidiffError):
        z_norm(f, ZNormSpec(q=2.0, T=1.0, t_samples=np.array([1.0])))


def test_weighted_sup_norm_examples():
    f = geometric_field(lambda t, x: 3.0 + 0.0 * x)
    assert weighted_sup_norm(f, 0.0, 1.0) == pytest.approx(3.0)
    g = geometric_field(lambda t, x: np.sqrt(t) + 0.0 * x)
    assert weighted_sup_norm(g, 0.5, 1.0) == pytest.approx(1.0, rel=1e-12)


def test_weighted_sup_matches_heat_gradient_sup():
    # same quantity through two code paths
    g = Grid(1, 256, 1.0)
    x = g.coords()[0]
    u0 = ScalarField(g, np.cos(2 * np.pi * x))
    T = g.validity_horizon(1.0)
    times = geometric_probe_times(T, 64, 6.0)
    he = heat_extend(u0, times)
    val = weighted_sup_norm(he.gradient_frames, -0.5, T)
    ref, _ = heat_gradient_sup(u0, T)
    assert val == pytest.approx(ref, abs=1e-10)


def test_ball_average_constant_preserved():
    g = Grid(2, 16, 1.0)
    out = ball_average(np.full(g.shape, 2.5), g, 0.2)
    assert np.allclose(out, 2.5, atol=1e-12)


def test_parabolic_conjugates_exact_values():
    assert parabolic_conjugate_upper(2, 2) == Fraction(4)
    assert parabolic_conjugate_lower(4, 2) == Fraction(2)
    assert parabolic_conjugate_upper(2.0, 2) == pytest.approx(4.0)


def test_parabolic_conjugate_duality_exact():
    # (q_*)^* = q whenever both sides are defined, i.e. q_* > 1
    for n in (1, 2):
        for q in (Fraction(2), Fraction(7, 3), Fraction(12)):
            down = parabolic_conjugate_lower(q, n)
            if down > 1:
                assert parabolic_conjugate_upper(down, n) == q
    assert parabolic_conjugate_lower(Fraction(3, 2), 1) == 1  # boundary case


def test_parabolic_conjugate_domain_errors():
    with pytest.raises(QuasidiffError):
        parabolic_conjugate_upper(3, 1)  # p = n + 2 excluded
    with pytest.raises(QuasidiffError):
        parabolic_conjugate_upper(1, 2)
    with pytest.raises(QuasidiffError):
        parabolic_conjugate_lower(1, 1)


def test_noninclusion_witness():
    report = z_l2_noninclusion_witness(G, T=1.0)
    for q, val in report["z_norms"].items():
        assert val == pytest.approx(1.0, abs=1e-6), f"q={q}"
    assert report["slope_rel_err"] <= 0.05
    # integrals grow without bound as eps -> 0
    ints = report["square_integrals"]
    assert all(b > a for a, b in zip(ints, ints[1:]))


def test_witness_includes_sub_l2_exponent():
    report = z_l2_noninclusion_witness(G, T=1.0, qs=(1.5,))
    assert report["z_norms"][1.5] == pytest.approx(1.0, abs=1e-6)
