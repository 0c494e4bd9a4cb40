import numpy as np
import pytest

from quasidiff.coefficients import (
    assumption_report,
    coefficient_from_label,
    compose_at_time,
    compose_coefficient,
    safety_radius,
    verify_ellipticity,
    verify_lipschitz_and_equilibrium,
)
from quasidiff.errors import NotElliptic, QuasidiffError, RangeEscape
from quasidiff.fields import ScalarField, SpaceTimeField
from quasidiff.grid import Grid

G1 = Grid(1, 64, 1.0)
G2 = Grid(2, 16, 1.0)


def test_identity_ellipticity_is_exactly_one():
    a = coefficient_from_label("identity", 1)
    assert verify_ellipticity(a, (-3.0, 3.0), 1.0, G1) == pytest.approx(1.0, rel=0, abs=0)


def test_porous_ellipticity_attains_interval_infimum():
    # sampled minimum of y^m over K hits inf K since endpoints are sampled
    a1 = coefficient_from_label("porous:1", 1)
    assert verify_ellipticity(a1, (0.5, 2.0), 1.0, G1) == pytest.approx(0.5, abs=1e-14)
    a2 = coefficient_from_label("porous:2", 1)
    assert verify_ellipticity(a2, (0.5, 2.0), 1.0, G1) == pytest.approx(0.25, abs=1e-14)


def test_porous_not_elliptic_on_interval_touching_zero():
    a = coefficient_from_label("porous:1", 1)
    with pytest.raises(NotElliptic) as err:
        verify_ellipticity(a, (0.0, 1.0), 1.0, G1)
    assert err.value.y == pytest.approx(0.0)


def test_anisotropic_eigenvalues_bracketed():
    a = coefficient_from_label("anisotropic:0.37", 2)
    lam = verify_ellipticity(a, (-1.0, 1.0), 1.0, G2)
    # direction sampling overestimates the true eigenvalue 1 by at most
    # the angular resolution; eigenvalues of the conjugated diag(1,2)
    assert 1.0 <= lam <= 1.0 + np.sin(np.pi / 32) ** 2 + 1e-12


def test_lipschitz_constant_identity_and_linear():
    a_id = coefficient_from_label("identity", 1)
    c_lip, c_eq, anchor = verify_lipschitz_and_equilibrium(a_id, (0.0, 1.0), 1.0, G1)
    assert c_lip == 0.0
    assert c_eq == pytest.approx(1.0)  # Frobenius norm of the 1x1 identity
    assert anchor == "zero"

    a_lin = coefficient_from_label("porous:1", 1)
    c_lip, c_eq, _ = verify_lipschitz_and_equilibrium(a_lin, (0.0, 1.0), 1.0, G1)
    assert c_lip == pytest.approx(1.0, abs=1e-12)
    assert c_eq == 0.0


def test_lipschitz_constant_quadratic_within_sampling_resolution():
    # sup of |y^2 - y'^2| / |y - y'| on [0, 1] is 2; 65 samples give
    # the adjacent quotient 2 - 1/64
    a = coefficient_from_label("porous:2", 1)
    c_lip, _, _ = verify_lipschitz_and_equilibrium(a, (0.0, 1.0), 1.0, G1)
    assert c_lip == pytest.approx(2.0 - 1.0 / 64.0, abs=1e-12)
    assert abs(c_lip - 2.0) < 0.02


def test_compose_identity_and_linear_coefficient():
    a_id = coefficient_from_label("identity", 1)
    times = np.array([0.0, 0.1])
    v = SpaceTimeField.constant_in_time(ScalarField.constant(G1, 2.0), times)
    A = compose_coefficient(a_id, v)
    assert np.all(A.values[:, 0, 0] == 1.0)

    a_lin = coefficient_from_label("porous:1", 1)
    A2 = compose_coefficient(a_lin, v)
    assert np.all(A2.values[:, 0, 0] == 2.0)


def test_compose_matches_pointwise_evaluation_bitwise():
    a = coefficient_from_label("porous:2", 1)
    x = G1.coords()[0]
    times = np.array([0.0, 0.25, 1.0])
    profile = 1.0 + 0.5 * np.sin(2 * np.pi * x)
    v = SpaceTimeField(G1, times, np.broadcast_to(profile, (3,) + G1.shape))
    A = compose_coefficient(a, v)
    for m in range(3):
        assert np.array_equal(A.values[m, 0, 0], profile**2)


def test_compose_range_escape():
    a = coefficient_from_label("porous:1", 1)
    v = SpaceTimeField.constant_in_time(ScalarField.constant(G1, -1.0), [0.0, 1.0])
    with pytest.raises(RangeEscape):
        compose_coefficient(a, v)


def test_compose_respects_assumption_bound():
    a = coefficient_from_label("porous:1", 1)
    rep = assumption_report(a, (0.5, 2.5), 1.0, G1)
    x = G1.coords()[0]
    v = SpaceTimeField(
        G1, [0.0, 1.0],
        np.broadcast_to(1.5 + 0.5 * np.cos(2 * np.pi * x), (2,) + G1.shape),
    )
    A = compose_coefficient(a, v, report=rep)
    assert A.values.max() <= rep.C_L * v.sup_norm() + rep.C_E + 1e-12


def test_safety_radius_examples():
    u = ScalarField.constant(G1, 1.0)
    vals = np.linspace(1.0, 2.0, 64)
    u12 = ScalarField(G1, vals)
    assert safety_radius(u12, (0.0, np.inf)) == pytest.approx(0.5)

    u_sym = ScalarField(G1, np.linspace(-0.5, 0.5, 64))
    assert safety_radius(u_sym, (-1.0, 1.0)) == pytest.approx(0.25)

    assert safety_radius(u, (-np.inf, np.inf)) == 1.0


def test_safety_radius_monotone_in_interval():
    u = ScalarField(G1, np.linspace(1.0, 2.0, 64))
    r_small = safety_radius(u, (0.5, 4.0))
    r_large = safety_radius(u, (0.0, 8.0))
    assert r_large >= r_small


def test_safety_radius_rejects_touching_range():
    u = ScalarField(G1, np.linspace(0.0, 1.0, 64))
    with pytest.raises(RangeEscape):
        safety_radius(u, (0.0, 2.0))


def test_assumption_report_modulus_table_monotone():
    a = coefficient_from_label("time_ramp:1", 1)
    rep = assumption_report(a, (0.5, 1.5), 1.0, G1)
    scales = [s for s, _ in rep.modulus_samples]
    oscs = [o for _, o in rep.modulus_samples]
    assert scales == sorted(scales)
    assert all(b >= a_ for a_, b in zip(oscs, oscs[1:]))
    assert rep.lambda_K > 0


def test_unknown_label_rejected():
    with pytest.raises(QuasidiffError):
        coefficient_from_label("bogus:1", 1)


def test_time_shifted_coefficient():
    a = coefficient_from_label("time_ramp:2", 1)
    shifted = a.time_shifted(1.5)
    coords = G1.coords()
    m0 = shifted.matrix(0.0, coords, 1.0)
    assert m0[0, 0].max() == pytest.approx(2.5)  # 1 + min(1.5, 2)
    m1 = shifted.matrix(1.0, coords, 1.0)
    assert m1[0, 0].max() == pytest.approx(3.0)  # ramp saturated


def test_compose_at_time_frozen_matrix():
    a = coefficient_from_label("porous:1", 1)
    u0 = ScalarField(G1, 1.0 + 0.1 * np.cos(2 * np.pi * G1.coords()[0]))
    A0 = compose_at_time(a, 0.0, u0)
    assert A0.shape == (1, 1, 64)
    assert np.array_equal(A0[0, 0], u0.values)
