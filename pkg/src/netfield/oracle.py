"""Ground-truth voxel scenes and the brute-force transient simulator.

The simulators share one histogram convention with the differentiable
renderer: times are taken at bin centers, t_k = (k + 0.5) * bin_width, and a
bin's value is the instantaneous shell integral at t_k multiplied by
c * bin_width (the per-bin path-length extent). Under that convention the
hemispherical quadrature, the Cartesian voxel sweep (with its 2*Gamma0
coefficient) and the ellipsoidal path all agree with each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from . import geometry
from .geometry import (GAMMA_CONFOCAL_EPS, EllipsoidFrame, hemisphere_grid,
                       point_box_radial_range, wall_point)


@dataclass(frozen=True)
class PhysicsConstants:
    """Speed of light, overall gain, and attenuation cross-section."""

    c: float = 3.0e8
    gamma0: float = 1.0
    a_atten: float = 1.0

    def __post_init__(self):
        if self.c <= 0 or self.gamma0 <= 0 or self.a_atten < 0:
            raise ValueError("invalid physics constants")


@dataclass
class ScanPattern:
    """Ordered illumination/detection spot pairs on the wall plane."""

    illumination: np.ndarray  # (N, 2)
    detection: np.ndarray     # (N, 2)

    def __post_init__(self):
        self.illumination = np.atleast_2d(np.asarray(self.illumination, dtype=float))
        self.detection = np.atleast_2d(np.asarray(self.detection, dtype=float))
        if len(self.illumination) == 0:
            raise ValueError("scan pattern must be non-empty")
        if self.illumination.shape != self.detection.shape:
            raise ValueError("illumination/detection lists differ in length")

    def __len__(self):
        return len(self.illumination)

    @property
    def confocal(self) -> bool:
        return bool(np.array_equal(self.illumination, self.detection))


def grid_scan(n: int, extent: float, center=(0.0, 0.0), detection_offset=None) -> ScanPattern:
    """n x n spot grid spanning [-extent/2, extent/2] around `center`.

    Confocal unless `detection_offset` (a 2-vector) separates the pairs.
    """
    coords = (np.arange(n) + 0.5) / n * extent - 0.5 * extent
    xx, yy = np.meshgrid(coords + center[0], coords + center[1], indexing="ij")
    spots = np.stack([xx.ravel(), yy.ravel()], axis=1)
    det = spots if detection_offset is None else spots + np.asarray(detection_offset, float)
    return ScanPattern(illumination=spots, detection=det)


@dataclass
class TransientImage:
    """Photon-count histograms, one row per scan entry."""

    scan: ScanPattern
    n_bins: int
    bin_width: float  # seconds
    data: np.ndarray  # (n_entries, n_bins)
    constants: PhysicsConstants = field(default_factory=PhysicsConstants)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape != (len(self.scan), self.n_bins):
            raise ValueError("histogram shape does not match scan/bins")
        if self.bin_width <= 0:
            raise ValueError("bin width must be positive")

    def bin_times(self) -> np.ndarray:
        return (np.arange(self.n_bins) + 0.5) * self.bin_width


@dataclass
class GroundTruthScene:
    """Voxelized density/albedo with optional directional albedo table.

    Voxel (i, j, k) is centered at origin + (i+0.5, j+0.5, k+0.5)*pitch;
    values interpolate trilinearly and vanish outside the grid.
    """

    sigma: np.ndarray
    rho: np.ndarray
    pitch: float
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    # directional albedo multiplier over (theta, phi) bins, shape (nt, np)
    directional: np.ndarray | None = None

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.rho = np.asarray(self.rho, dtype=float)
        self.origin = np.asarray(self.origin, dtype=float)
        if self.sigma.shape != self.rho.shape or self.sigma.ndim != 3:
            raise ValueError("sigma/rho must be matching 3D grids")
        if np.any(self.sigma < 0) or np.any(self.rho < 0):
            raise ValueError("sigma and rho must be nonnegative")
        if self.origin[2] < 0:
            raise ValueError("scene grid must lie in z >= 0")

    @property
    def dims(self):
        return self.sigma.shape

    @property
    def bounds(self) -> np.ndarray:
        lo = self.origin
        hi = self.origin + np.asarray(self.dims) * self.pitch
        return np.stack([lo, hi], axis=1)

    @property
    def support_bounds(self) -> np.ndarray:
        """Grid box inflated by half a pitch: where trilinear values can be
        nonzero."""
        b = self.bounds
        return b + np.array([-0.5, 0.5]) * self.pitch

    def _interp(self, grid, points):
        pts = np.atleast_2d(points)
        coords = (pts - self.origin) / self.pitch - 0.5
        return map_coordinates(grid, coords.T, order=1, mode="constant", cval=0.0)

    def sample_sigma(self, points) -> np.ndarray:
        return self._interp(self.sigma, points)

    def sample_rho(self, points, directions=None) -> np.ndarray:
        vals = self._interp(self.rho, points)
        if self.directional is not None and directions is not None:
            d = np.atleast_2d(directions)
            nt, npb = self.directional.shape
            it = np.clip((d[:, 0] / (0.5 * np.pi) * nt).astype(int), 0, nt - 1)
            ip = np.clip((d[:, 1] / (2.0 * np.pi) * npb).astype(int), 0, npb - 1)
            vals = vals * self.directional[it, ip]
        return vals

    def voxel_centers(self) -> np.ndarray:
        nx, ny, nz = self.dims
        ii, jj, kk = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                                 indexing="ij")
        idx = np.stack([ii, jj, kk], axis=-1).reshape(-1, 3)
        return self.origin + (idx + 0.5) * self.pitch


class EmptyScanError(ValueError):
    pass


class DirectionalSceneError(ValueError):
    pass


def _validate(scan, bin_width):
    if scan is None or len(scan) == 0:
        raise EmptyScanError("scan pattern is empty")
    if bin_width <= 0:
        raise ValueError("bin width must be positive")


def _transmittance_to_nodes(scene, spot3, nodes, r, constants):
    """exp(-2 A int_0^r sigma) along each spot->node ray, trapezoidal march.

    Steps are at most one voxel pitch long.
    """
    n_steps = max(2, int(np.ceil(r / scene.pitch)))
    frac = np.arange(n_steps + 1) / n_steps
    w = np.full(n_steps + 1, r / n_steps)
    w[0] *= 0.5
    w[-1] *= 0.5
    dirs = (nodes - spot3) / r
    pts = spot3 + dirs[:, None, :] * (frac[None, :, None] * r)
    sig = scene.sample_sigma(pts.reshape(-1, 3)).reshape(len(nodes), n_steps + 1)
    integral = sig @ w
    return np.exp(-2.0 * constants.a_atten * integral)


def simulate_confocal(scene: GroundTruthScene, scan: ScanPattern, n_bins: int,
                      bin_width: float, constants: PhysicsConstants | None = None,
                      occlusion: bool = False, n_theta: int = 64,
                      n_phi: int = 64) -> TransientImage:
    """Brute-force confocal forward model via hemispherical quadrature.

    With `occlusion` the integrand additionally carries the two-way
    transmittance accumulated by ray-marching sigma from the spot to the
    shell.
    """
    constants = constants or PhysicsConstants()
    _validate(scan, bin_width)
    if not scan.confocal:
        raise ValueError("simulate_confocal requires a confocal scan")
    grid = hemisphere_grid(n_theta, n_phi)
    st = np.sin(grid.theta)
    dirs3 = np.stack([st * np.cos(grid.phi), st * np.sin(grid.phi),
                      np.cos(grid.theta)], axis=1)
    dirs2 = np.stack([grid.theta, grid.phi], axis=1)
    times = (np.arange(n_bins) + 0.5) * bin_width
    radii = 0.5 * constants.c * times
    thickness = constants.c * bin_width

    data = np.zeros((len(scan), n_bins))
    for e, spot in enumerate(scan.illumination):
        spot3 = wall_point(spot)
        rmin, rmax = point_box_radial_range(spot3, scene.support_bounds)
        for k in np.nonzero((radii >= rmin) & (radii <= rmax))[0]:
            r = radii[k]
            nodes = spot3 + r * dirs3
            sig = scene.sample_sigma(nodes)
            rho = scene.sample_rho(nodes, dirs2)
            integrand = grid.weight * sig * rho / (r * r)
            if occlusion:
                live = sig * rho > 0
                if np.any(live):
                    trans = _transmittance_to_nodes(scene, spot3, nodes[live],
                                                    r, constants)
                    integrand[live] *= trans
                integrand[~live] = 0.0
            data[e, k] = constants.gamma0 * integrand.sum() * thickness
    return TransientImage(scan, n_bins, bin_width, data, constants)


def ellipsoid_quadrature_nodes(frame: EllipsoidFrame, mu: float, n_nu: int, n_phi: int):
    """Semi-ellipsoid midpoint nodes at fixed mu, restricted to z > 0.

    Returns (positions (M,3), weight (M,), view directions (M,2)) where the
    weight folds the area measure, the 1/(r1^2 r2^2) falloff and the
    delta-collection Jacobian 1/(gamma sinh mu), and the viewing direction is
    taken from the detection spot toward each node.
    """
    d_nu = np.pi / n_nu
    d_phi = np.pi / n_phi
    nu = (np.arange(n_nu) + 0.5) * d_nu
    phi = (np.arange(n_phi) + 0.5) * d_phi
    nn, pp = np.meshgrid(nu, phi, indexing="ij")
    nn = nn.ravel()
    pp = pp.ravel()
    pos = geometry.ellipsoidal_to_cartesian(mu, nn, pp, frame)
    jac = geometry.ellipsoidal_jacobian(mu, nn, frame)
    r1, r2 = geometry.focal_distances(mu, nn, frame)
    w = d_nu * d_phi * jac / (r1 * r1 * r2 * r2 * frame.gamma * np.sinh(mu))
    _, theta_v, phi_v = geometry.cartesian_to_spherical(pos, frame.p_prime)
    return pos, w, np.stack([theta_v, phi_v], axis=1)


def simulate_nonconfocal(scene: GroundTruthScene, scan: ScanPattern, n_bins: int,
                         bin_width: float, constants: PhysicsConstants | None = None,
                         n_nu: int = 64, n_phi: int = 64) -> TransientImage:
    """Forward model over semi-ellipsoids between separated spot pairs.

    Attenuation is not modeled on this path. Pairs closer than the confocal
    threshold fall back to the spherical code path; time bins with
    c*t <= 2*gamma produce zeros.
    """
    constants = constants or PhysicsConstants()
    _validate(scan, bin_width)
    times = (np.arange(n_bins) + 0.5) * bin_width
    thickness = constants.c * bin_width
    data = np.zeros((len(scan), n_bins))
    for e in range(len(scan)):
        p = scan.illumination[e]
        pp = scan.detection[e]
        gamma = 0.5 * np.linalg.norm(p - pp)
        if 2.0 * gamma < GAMMA_CONFOCAL_EPS:
            mid = 0.5 * (p + pp)
            sub = ScanPattern(mid[None, :], mid[None, :])
            img = simulate_confocal(scene, sub, n_bins, bin_width, constants,
                                    occlusion=False, n_theta=n_nu, n_phi=n_phi)
            data[e] = img.data[0]
            continue
        for k in range(n_bins):
            s = constants.c * times[k]
            if s <= 2.0 * gamma:
                continue
            frame = EllipsoidFrame(p, pp, alpha=0.5 * s)
            mu = np.arccosh(s / (2.0 * gamma))
            pos, w, dirs = ellipsoid_quadrature_nodes(frame, mu, n_nu, n_phi)
            vals = scene.sample_sigma(pos) * scene.sample_rho(pos, dirs)
            data[e, k] = constants.gamma0 * np.dot(w, vals) * thickness
    return TransientImage(scan, n_bins, bin_width, data, constants)


def simulate_lct_form(scene: GroundTruthScene, scan: ScanPattern, n_bins: int,
                      bin_width: float,
                      constants: PhysicsConstants | None = None) -> TransientImage:
    """Cartesian voxel sweep: each voxel adds 2*Gamma0*sigma*rho*v/r^4.

    Only valid for confocal scans over isotropic scenes; equivalent to the
    hemispherical quadrature up to discretization.
    """
    constants = constants or PhysicsConstants()
    _validate(scan, bin_width)
    if not scan.confocal:
        raise ValueError("simulate_lct_form requires a confocal scan")
    if scene.directional is not None:
        raise DirectionalSceneError("voxel sweep requires an isotropic scene")
    centers = scene.voxel_centers()
    product = (scene.sigma * scene.rho).ravel()
    mask = product > 0
    centers = centers[mask]
    product = product[mask]
    v = scene.pitch**3
    data = np.zeros((len(scan), n_bins))
    for e, spot in enumerate(scan.illumination):
        r = np.linalg.norm(centers - wall_point(spot), axis=1)
        k = np.floor(2.0 * r / (constants.c * bin_width)).astype(int)
        ok = (k >= 0) & (k < n_bins) & (r > 0)
        np.add.at(data[e], k[ok],
                  2.0 * constants.gamma0 * product[ok] * v / r[ok] ** 4)
    return TransientImage(scan, n_bins, bin_width, data, constants)


def add_poisson_noise(image: TransientImage, scale: float, seed: int) -> TransientImage:
    """Poisson-resample counts at the given intensity scale (robustness tests)."""
    rng = np.random.default_rng(seed)
    noisy = rng.poisson(image.data * scale).astype(float) / scale
    return TransientImage(image.scan, image.n_bins, image.bin_width, noisy,
                          image.constants)


# ---------------------------------------------------------------------------
# primitive scenes

_LETTER_BITMAPS = {
    "T": ["#####", "..#..", "..#..", "..#..", "..#.."],
    "L": ["#....", "#....", "#....", "#....", "#####"],
    "Z": ["#####", "...#.", "..#..", ".#...", "#####"],
    "H": ["#...#", "#...#", "#####", "#...#", "#...#"],
}


def make_primitive_scene(kind: str, dims=(64, 64, 64), pitch=0.01,
                         origin=(-0.32, -0.32, 0.0), sigma_value=1.0,
                         rho_value=1.0, **params) -> GroundTruthScene:
    """Deterministic test scenes: plane, sphere, two-planes-occluded, letter.

    Kind-specific params:
      plane:  z (depth, default 0.4), extent ((x0,x1),(y0,y1)) optional
      sphere: center (default mid-grid at z=0.45), radius (default 0.1)
      two-planes-occluded: z_front (0.35), z_back (0.55); the front plane
        covers the central half of the back plane's footprint
      letter: letter ("T"), z (0.45), size (0.3)
    """
    dims = tuple(int(d) for d in dims)
    origin = np.asarray(origin, dtype=float)
    sigma = np.zeros(dims)
    idx = np.indices(dims).reshape(3, -1).T
    centers = origin + (idx + 0.5) * pitch
    hi = origin + np.asarray(dims) * pitch

    def fill(mask):
        sigma.ravel()[mask] = sigma_value

    def layer_mask(z):
        # the one-voxel-thick layer whose cell contains depth z
        k = int(np.floor((z - origin[2]) / pitch))
        return np.floor((centers[:, 2] - origin[2]) / pitch).astype(int) == k

    if kind == "plane":
        z = params.pop("z", 0.4)
        extent = params.pop("extent", ((origin[0], hi[0]), (origin[1], hi[1])))
        if not (origin[2] <= z <= hi[2]):
            raise ValueError("plane depth outside grid bounds")
        mask = layer_mask(z)
        mask &= (centers[:, 0] >= extent[0][0]) & (centers[:, 0] <= extent[0][1])
        mask &= (centers[:, 1] >= extent[1][0]) & (centers[:, 1] <= extent[1][1])
        fill(mask)
    elif kind == "sphere":
        center = np.asarray(params.pop("center", (0.0, 0.0, 0.45)), dtype=float)
        radius = params.pop("radius", 0.1)
        if np.any(center - radius < origin) or np.any(center + radius > hi):
            raise ValueError("sphere extends outside grid bounds")
        fill(np.linalg.norm(centers - center, axis=1) <= radius)
    elif kind == "two-planes-occluded":
        z_front = params.pop("z_front", 0.35)
        z_back = params.pop("z_back", 0.55)
        if not (origin[2] <= z_front < z_back <= hi[2]):
            raise ValueError("plane depths outside grid bounds")
        span = hi[:2] - origin[:2]
        mid = origin[:2] + 0.5 * span
        # front plane over the central half so it shadows the back's center
        half = 0.25 * span
        front = layer_mask(z_front)
        front &= np.all(np.abs(centers[:, :2] - mid) <= half, axis=1)
        back = layer_mask(z_back)
        fill(front)
        fill(back)
    elif kind == "letter":
        glyph = _LETTER_BITMAPS[params.pop("letter", "T")]
        z = params.pop("z", 0.45)
        size = params.pop("size", 0.3)
        rows = len(glyph)
        cols = len(glyph[0])
        mask = layer_mask(z)
        mid = origin[:2] + 0.5 * (hi[:2] - origin[:2])
        u = (centers[:, 0] - (mid[0] - 0.5 * size)) / size * cols
        v = ((mid[1] + 0.5 * size) - centers[:, 1]) / size * rows
        inside = (u >= 0) & (u < cols) & (v >= 0) & (v < rows) & mask
        ui = np.clip(u.astype(int), 0, cols - 1)
        vi = np.clip(v.astype(int), 0, rows - 1)
        lit = np.array([[c == "#" for c in row] for row in glyph])
        fill(inside & lit[vi, ui])
    else:
        raise ValueError(f"unknown scene kind {kind!r}")
    if params:
        raise ValueError(f"unused scene params: {sorted(params)}")

    rho = np.where(sigma > 0, rho_value, 0.0)
    return GroundTruthScene(sigma=sigma, rho=rho, pitch=pitch, origin=origin)


def merge_scenes(a: GroundTruthScene, b: GroundTruthScene) -> GroundTruthScene:
    """Union of two scenes on the same grid (densities add, albedo blends)."""
    if a.dims != b.dims or a.pitch != b.pitch or not np.allclose(a.origin, b.origin):
        raise ValueError("scenes must share a grid")
    sigma = a.sigma + b.sigma
    with np.errstate(invalid="ignore"):
        rho = np.where(sigma > 0,
                       (a.sigma * a.rho + b.sigma * b.rho) / np.maximum(sigma, 1e-300),
                       0.0)
    return GroundTruthScene(sigma=sigma, rho=rho, pitch=a.pitch, origin=a.origin)


class SceneField:
    """Field-protocol adapter over a ground-truth scene (frozen oracle).

    Provides the same `query`/`bounds` surface as NeuralField so the
    differentiable renderer can be checked against the simulator.
    """

    def __init__(self, scene: GroundTruthScene):
        self.scene = scene

    @property
    def bounds(self) -> np.ndarray:
        return self.scene.support_bounds

    def query(self, positions, directions):
        positions = np.atleast_2d(positions)
        return (self.scene.sample_sigma(positions),
                self.scene.sample_rho(positions, directions))
