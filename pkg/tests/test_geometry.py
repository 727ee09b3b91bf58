import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netfield import geometry as G


def test_pole_maps_to_z_axis():
    for phi in (0.0, 1.0, 5.5):
        p = G.spherical_to_cartesian(1.0, 0.0, phi, origin=(0.0, 0.0))
        assert np.allclose(p, [0.0, 0.0, 1.0])


def test_equatorial_case():
    p = G.spherical_to_cartesian(2.0, np.pi / 2, 0.0, origin=(0.5, 0.0))
    assert np.allclose(p, [2.5, 0.0, 0.0])


def test_inverse_trivials():
    r, t, ph = G.cartesian_to_spherical(np.array([0.0, 0.0, 1.0]), (0.0, 0.0))
    assert np.allclose([r, t, ph], [1.0, 0.0, 0.0])
    r, t, ph = G.cartesian_to_spherical(np.array([1.0, 1.0, 0.0]), (0.0, 0.0))
    assert np.allclose([r, t, ph], [np.sqrt(2.0), np.pi / 2, np.pi / 4])


def test_round_trip_random_points():
    rng = np.random.default_rng(7)
    origin = rng.uniform(-0.5, 0.5, size=2)
    r = rng.uniform(0.1, 3.0, size=1000)
    theta = rng.uniform(0.0, 0.5 * np.pi, size=1000)
    phi = rng.uniform(0.0, 2.0 * np.pi, size=1000)
    pts = G.spherical_to_cartesian(r, theta, phi, origin)
    r2, t2, p2 = G.cartesian_to_spherical(pts, origin)
    back = G.spherical_to_cartesian(r2, t2, p2, origin)
    assert np.max(np.abs(back - pts)) < 1e-12 * np.max(r)
    assert np.max(np.abs(r2 - r) / r) < 1e-12
    assert np.max(np.abs(t2 - theta)) < 1e-10


def test_degenerate_point_raises():
    with pytest.raises(G.DegeneratePointError):
        G.cartesian_to_spherical(np.array([0.2, -0.1, 0.0]), (0.2, -0.1))


@given(st.floats(0.0, 2 * np.pi), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
@settings(max_examples=100, deadline=None)
def test_round_trip_property(phi, ox, oy):
    pt = G.spherical_to_cartesian(1.3, 0.7, phi, (ox, oy))
    r, t, p = G.cartesian_to_spherical(pt, (ox, oy))
    back = G.spherical_to_cartesian(r, t, p, (ox, oy))
    assert np.max(np.abs(back - pt)) < 1e-11


# --- ellipsoids -------------------------------------------------------------


def _random_frame(rng, alpha_scale=1.0):
    p = rng.uniform(-0.4, 0.4, size=2)
    pp = rng.uniform(-0.4, 0.4, size=2)
    gamma = 0.5 * np.linalg.norm(p - pp)
    alpha = (gamma + rng.uniform(0.05, 1.0)) * alpha_scale
    return G.EllipsoidFrame(p, pp, alpha=alpha)


def test_ellipsoid_radius_confocal_degeneracy():
    frame = G.EllipsoidFrame((0.1, 0.2), (0.1, 0.2), alpha=0.7)
    theta = np.linspace(0, np.pi, 17)
    assert np.allclose(G.ellipsoid_radius(theta, frame), 0.7)


def test_ellipsoid_radius_semi_latus_rectum():
    frame = G.EllipsoidFrame((-0.2, 0.0), (0.2, 0.0), alpha=0.5)
    e = frame.eccentricity
    r1 = G.ellipsoid_radius(np.pi / 2, frame)
    assert np.isclose(r1, 0.5 * (1 - e * e))


def test_ellipsoid_radius_distance_sum():
    rng = np.random.default_rng(3)
    for _ in range(50):
        frame = _random_frame(rng)
        if frame.gamma == 0:
            continue
        theta = rng.uniform(0.0, np.pi, size=20)
        phi = rng.uniform(0.0, 2 * np.pi, size=20)
        r1 = G.ellipsoid_radius(theta, frame)
        # theta measured at P from the direction toward P'
        axis = G.wall_point(frame.p_prime) - G.wall_point(frame.p)
        axis /= np.linalg.norm(axis)
        perp1 = np.cross(axis, [0.0, 0.0, 1.0])
        perp2 = np.cross(axis, perp1)
        q = (G.wall_point(frame.p)
             + r1[:, None] * (np.cos(theta)[:, None] * axis
                              + np.sin(theta)[:, None]
                              * (np.cos(phi)[:, None] * perp1
                                 + np.sin(phi)[:, None] * perp2)))
        r2 = np.linalg.norm(q - G.wall_point(frame.p_prime), axis=1)
        rel = np.abs(r1 + r2 - 2 * frame.alpha) / (2 * frame.alpha)
        assert rel.max() < 1e-10


def test_invalid_frame_rejected():
    with pytest.raises(G.InvalidFrameError):
        G.EllipsoidFrame((-0.5, 0.0), (0.5, 0.0), alpha=0.3)  # alpha < gamma


def test_ellipsoidal_focal_sum():
    rng = np.random.default_rng(11)
    for _ in range(30):
        frame = _random_frame(rng)
        if frame.gamma < 1e-3:
            continue
        ct = 2.0 * frame.alpha
        mu = np.arccosh(ct / (2.0 * frame.gamma))
        nu = rng.uniform(0.0, np.pi, size=40)
        vp = rng.uniform(0.0, 2 * np.pi, size=40)
        q = G.ellipsoidal_to_cartesian(mu, nu, vp, frame)
        d1 = np.linalg.norm(q - G.wall_point(frame.p), axis=1)
        d2 = np.linalg.norm(q - G.wall_point(frame.p_prime), axis=1)
        rel = np.abs(d1 + d2 - ct) / ct
        assert rel.max() < 1e-10


def test_ellipsoidal_nu_zero_on_axis_beyond_p():
    frame = G.EllipsoidFrame((0.0, 0.2), (0.0, -0.2), alpha=0.5)
    q = G.ellipsoidal_to_cartesian(1.2, 0.0, 0.3, frame)
    # on the focal axis, farther from the center than the illumination focus
    axis_coord = (q - frame.center) @ frame.axis_v
    assert np.isclose(np.linalg.norm(np.cross(q - frame.center, frame.axis_v)), 0.0,
                      atol=1e-12)
    assert axis_coord > frame.gamma


def test_ellipsoidal_map_requires_gamma():
    frame = G.EllipsoidFrame((0.1, 0.1), (0.1, 0.1), alpha=0.4)
    with pytest.raises(G.InvalidFrameError):
        G.ellipsoidal_to_cartesian(0.5, 0.5, 0.5, frame)


def test_jacobian_degeneracies():
    frame = G.EllipsoidFrame((-0.1, 0.0), (0.1, 0.0), alpha=0.4)
    assert G.ellipsoidal_jacobian(0.7, 0.0, frame) == 0.0
    assert G.ellipsoidal_jacobian(0.0, 0.9, frame) == 0.0


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(5)
    frame = G.EllipsoidFrame((-0.15, 0.05), (0.2, -0.1), alpha=0.6)
    h = 1e-6
    for _ in range(25):
        mu = rng.uniform(0.2, 2.0)
        nu = rng.uniform(0.2, np.pi - 0.2)
        vp = rng.uniform(0.1, 2 * np.pi - 0.1)
        cols = []
        for dm, dn, dv in ((h, 0, 0), (0, h, 0), (0, 0, h)):
            fwd = G.ellipsoidal_to_cartesian(mu + dm, nu + dn, vp + dv, frame)
            bwd = G.ellipsoidal_to_cartesian(mu - dm, nu - dn, vp - dv, frame)
            cols.append((fwd - bwd) / (2 * h))
        num = abs(np.linalg.det(np.stack(cols, axis=1)))
        ana = G.ellipsoidal_jacobian(mu, nu, frame)
        assert abs(num - ana) / ana < 1e-6


# --- hemisphere grid ---------------------------------------------------------


def test_hemisphere_grid_single_node():
    g = G.hemisphere_grid(1, 1)
    assert len(g) == 1
    assert np.isclose(g.theta[0], np.pi / 4)
    assert np.isclose(g.phi[0], np.pi)


def test_hemisphere_grid_weights():
    g = G.hemisphere_grid(64, 64)
    assert np.all(g.weight > 0)
    assert abs(g.weight.sum() - 2 * np.pi) / (2 * np.pi) < 1e-3


def test_hemisphere_grid_convergence_order():
    # midpoint rule: O(1/n^2) error in the solid angle
    errs = []
    for n in (8, 16, 32):
        g = G.hemisphere_grid(n, n)
        errs.append(abs(g.weight.sum() - 2 * np.pi))
    assert errs[1] < errs[0] / 3.5
    assert errs[2] < errs[1] / 3.5


def test_hemisphere_grid_validation():
    with pytest.raises(ValueError):
        G.hemisphere_grid(0, 4)
