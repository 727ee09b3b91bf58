"""Coordinate systems and sampling domains for wall-anchored scanning.

Global conventions (fixed for every dataset):
  * the relay wall is the plane z = 0, the hidden scene lives in z > 0;
  * theta is elevation from the wall normal, so theta = 0 points straight
    into the scene and the visible hemisphere is theta in [0, pi/2];
  * phi is azimuth in [0, 2*pi), with phi = 0 at theta = 0 by convention.

Spot pairs with a nonzero separation get a per-pair prolate-spheroidal frame:
the two spots are the foci, placed symmetrically about the segment midpoint,
with the focal axis lying in the wall plane.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Below this focal half-separation (meters) the prolate-spheroidal map is
# numerically singular and callers must take the spherical (confocal) path.
GAMMA_CONFOCAL_EPS = 1e-9


class DegeneratePointError(ValueError):
    """Raised when a point coincides with the spherical origin."""


class InvalidFrameError(ValueError):
    """Raised for ellipsoid frames with eccentricity >= 1 or gamma = 0 misuse."""


def wall_point(spot) -> np.ndarray:
    """Lift wall coordinates (x', y') to 3D points on the z = 0 plane.

    Accepts a single (2,) spot or an (N, 2) batch; returns (3,) or (N, 3).
    """
    spot = np.asarray(spot, dtype=float)
    out = np.zeros(spot.shape[:-1] + (3,))
    out[..., :2] = spot
    return out


def spherical_to_cartesian(r, theta, phi, origin) -> np.ndarray:
    """Map spherical coordinates anchored at a wall spot to world Cartesian.

    x = r sin(theta) cos(phi) + x', y = r sin(theta) sin(phi) + y',
    z = r cos(theta). Broadcasts over r/theta/phi.
    """
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    origin = np.asarray(origin, dtype=float)
    st = np.sin(theta)
    out = np.stack(
        [
            r * st * np.cos(phi) + origin[..., 0],
            r * st * np.sin(phi) + origin[..., 1],
            r * np.cos(theta),
        ],
        axis=-1,
    )
    return out


def cartesian_to_spherical(points, origin):
    """Inverse of :func:`spherical_to_cartesian` for points with z >= 0.

    Returns (r, theta, phi) with theta in [0, pi/2] for scene points and
    phi in [0, 2*pi). At theta = 0 the azimuth is 0 by convention.

    Raises:
        DegeneratePointError: if a point coincides with the origin.
    """
    points = np.asarray(points, dtype=float)
    origin = np.asarray(origin, dtype=float)
    d = points - wall_point(origin)
    r = np.linalg.norm(d, axis=-1)
    if np.any(r == 0.0):
        raise DegeneratePointError("point coincides with the spherical origin")
    theta = np.arccos(np.clip(d[..., 2] / r, -1.0, 1.0))
    phi = np.mod(np.arctan2(d[..., 1], d[..., 0]), 2.0 * np.pi)
    # atan2(0, 0) = 0 already gives the phi = 0 pole convention.
    return r, theta, phi


@dataclass(frozen=True)
class EllipsoidFrame:
    """Per-pair prolate-spheroidal frame for one illumination/detection pair.

    The foci are the two wall spots; gamma is half the focal separation and
    alpha = c*t/2 the semi-major axis of the shell reached at time t.
    The local axes are: axis_u in the wall plane transverse to the pair,
    axis_v along the focal axis pointing from the detection spot toward the
    illumination spot, axis_w = +z (into the scene).
    """

    p: np.ndarray        # illumination spot, (2,)
    p_prime: np.ndarray  # detection spot, (2,)
    alpha: float         # semi-major axis = c*t/2
    gamma: float = field(init=False)
    center: np.ndarray = field(init=False)   # (3,) midpoint on the wall
    axis_u: np.ndarray = field(init=False)
    axis_v: np.ndarray = field(init=False)
    axis_w: np.ndarray = field(init=False)

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        pp = np.asarray(self.p_prime, dtype=float)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "p_prime", pp)
        gamma = 0.5 * float(np.linalg.norm(p - pp))
        object.__setattr__(self, "gamma", gamma)
        center = wall_point(0.5 * (p + pp))
        object.__setattr__(self, "center", center)
        if gamma > 0.0:
            axis_v = (wall_point(p) - wall_point(pp)) / (2.0 * gamma)
        else:
            axis_v = np.array([0.0, 1.0, 0.0])
        axis_w = np.array([0.0, 0.0, 1.0])
        axis_u = np.cross(axis_v, axis_w)
        object.__setattr__(self, "axis_v", axis_v)
        object.__setattr__(self, "axis_w", axis_w)
        object.__setattr__(self, "axis_u", axis_u)
        if not (self.alpha > gamma):
            raise InvalidFrameError(
                f"semi-major axis {self.alpha} must exceed gamma {gamma} (e < 1)"
            )

    @property
    def eccentricity(self) -> float:
        return self.gamma / self.alpha


def ellipsoid_radius(theta, frame: EllipsoidFrame):
    """Focal-polar radius r1 = alpha (1 - e^2) / (1 - e cos(theta)).

    theta is measured at the illumination focus from the direction toward the
    other focus; the returned r1 puts the point on the ellipsoid so that
    r1 + r2 = 2*alpha.
    """
    e = frame.eccentricity
    if e >= 1.0:
        raise InvalidFrameError(f"eccentricity {e} >= 1")
    theta = np.asarray(theta, dtype=float)
    return frame.alpha * (1.0 - e * e) / (1.0 - e * np.cos(theta))


def ellipsoidal_to_cartesian(mu, nu, varphi, frame: EllipsoidFrame) -> np.ndarray:
    """Map prolate-spheroidal coordinates in a pair frame to world Cartesian.

    Local components are gamma*(sinh(mu) sin(nu) cos(varphi)) transverse,
    gamma*(cosh(mu) cos(nu)) along the focal axis and
    gamma*(sinh(mu) sin(nu) sin(varphi)) along +z; a point therefore satisfies
    |Q - P| + |Q - P'| = 2 gamma cosh(mu). The z > 0 half is varphi in (0, pi).

    Raises:
        InvalidFrameError: for gamma = 0 (use the spherical path instead).
    """
    if frame.gamma < GAMMA_CONFOCAL_EPS:
        raise InvalidFrameError("gamma ~ 0: ellipsoidal coordinates are singular")
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    varphi = np.asarray(varphi, dtype=float)
    g = frame.gamma
    su = np.sinh(mu) * np.sin(nu)
    u = g * su * np.cos(varphi)
    v = g * np.cosh(mu) * np.cos(nu)
    w = g * su * np.sin(varphi)
    return (
        frame.center
        + u[..., None] * frame.axis_u
        + v[..., None] * frame.axis_v
        + w[..., None] * frame.axis_w
    )


def ellipsoidal_jacobian(mu, nu, frame: EllipsoidFrame):
    """Volume Jacobian gamma^3 sinh(mu) sin(nu) (sinh^2(mu) + sin^2(nu))."""
    if frame.gamma < GAMMA_CONFOCAL_EPS:
        raise InvalidFrameError("gamma ~ 0: ellipsoidal coordinates are singular")
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    g = frame.gamma
    sh = np.sinh(mu)
    sn = np.sin(nu)
    return g**3 * sh * sn * (sh * sh + sn * sn)


def focal_distances(mu, nu, frame: EllipsoidFrame):
    """Distances (r1, r2) from the two foci, r1 from the illumination spot."""
    g = frame.gamma
    ch = np.cosh(np.asarray(mu, dtype=float))
    cn = np.cos(np.asarray(nu, dtype=float))
    return g * (ch - cn), g * (ch + cn)


def point_box_radial_range(point: np.ndarray, bounds: np.ndarray):
    """Min and max distance from a point to an axis-aligned box."""
    lo, hi = bounds[:, 0], bounds[:, 1]
    nearest = np.clip(point, lo, hi)
    rmin = float(np.linalg.norm(nearest - point))
    corners = np.array([[lo[i] if b & (1 << i) == 0 else hi[i] for i in range(3)]
                        for b in range(8)])
    rmax = float(np.max(np.linalg.norm(corners - point, axis=1)))
    return rmin, rmax


@dataclass
class SampleSet:
    """Nodes on a hemispherical shell (or semi-ellipsoid) with weights.

    weight carries the quadrature measure (dtheta dphi sin(theta) for the
    hemisphere); pdf, when present, holds importance-density values used by
    the fine estimator.
    """

    theta: np.ndarray
    phi: np.ndarray
    weight: np.ndarray
    pdf: np.ndarray | None = None

    def __len__(self):
        return self.theta.size


def hemisphere_grid(n_theta: int, n_phi: int) -> SampleSet:
    """Midpoint quadrature nodes over theta in [0, pi/2], phi in [0, 2*pi).

    Each node carries weight dtheta*dphi*sin(theta); the weights sum to the
    hemisphere solid angle 2*pi as the grid is refined.
    """
    if n_theta < 1 or n_phi < 1:
        raise ValueError("grid sizes must be >= 1")
    d_theta = 0.5 * np.pi / n_theta
    d_phi = 2.0 * np.pi / n_phi
    theta = (np.arange(n_theta) + 0.5) * d_theta
    phi = (np.arange(n_phi) + 0.5) * d_phi
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    w = d_theta * d_phi * np.sin(tt)
    return SampleSet(theta=tt.ravel(), phi=pp.ravel(), weight=w.ravel())
