"""Volume extraction, isosurfaces, depth metrics and the backprojection baseline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import laplace
from skimage import measure as _sk_measure

from .errors import ShapeMismatchError
from .geometry import GAMMA_CONFOCAL_EPS, wall_point
from .oracle import GroundTruthScene, TransientImage

DEPTH_SENTINEL = np.nan
DEFAULT_ISO_FRACTION = 0.3   # iso threshold as a fraction of the volume max

FRONTAL_DIRECTION = np.array([0.0, 0.0])
# small cone of directions for the averaged albedo policy
_AVERAGE_DIRECTIONS = np.array(
    [[0.0, 0.0]] + [[np.pi / 8, k * np.pi / 2] for k in range(4)])


class BoundsError(ValueError):
    pass


class NoOverlapError(ValueError):
    pass


@dataclass
class VoxelVolume:
    """Density/albedo grids with uniform pitch; albedo = sigma * rho."""

    sigma: np.ndarray
    rho: np.ndarray
    pitch: float
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.rho = np.asarray(self.rho, dtype=float)
        self.origin = np.asarray(self.origin, dtype=float)
        if self.sigma.shape != self.rho.shape:
            raise ValueError("sigma/rho grids differ in shape")

    @property
    def dims(self):
        return self.sigma.shape

    @property
    def albedo(self) -> np.ndarray:
        return self.sigma * self.rho

    def voxel_centers(self) -> np.ndarray:
        idx = np.indices(self.dims).reshape(3, -1).T
        return self.origin + (idx + 0.5) * self.pitch

    def z_of_index(self, k) -> np.ndarray:
        return self.origin[2] + (np.asarray(k) + 0.5) * self.pitch


@dataclass
class TriMesh:
    """Triangle surface in meters; faces index into vertices."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=int).reshape(-1, 3)
        if self.faces.size and self.faces.max() >= len(self.vertices):
            raise ValueError("face index out of range")

    @property
    def empty(self) -> bool:
        return self.faces.size == 0

    def euler_characteristic(self) -> int:
        if self.empty:
            return 0
        edges = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]],
                                self.faces[:, [2, 0]]])
        edges = np.unique(np.sort(edges, axis=1), axis=0)
        return len(self.vertices) - len(edges) + len(self.faces)


@dataclass
class DepthMap:
    """Frontmost depth per (x, y) column; NaN marks empty columns."""

    depth: np.ndarray
    origin: np.ndarray
    pitch: float

    @property
    def coverage(self) -> float:
        return float(np.mean(np.isfinite(self.depth)))


def _volume_grid(dims, bounds):
    dims = np.asarray(dims, dtype=int)
    bounds = np.asarray(bounds, dtype=float)
    spans = bounds[:, 1] - bounds[:, 0]
    pitches = spans / dims
    if not np.allclose(pitches, pitches[0], rtol=1e-9, atol=0):
        raise BoundsError("bounds/dims imply non-cubic voxels")
    pitch = float(pitches[0])
    idx = np.indices(tuple(dims)).reshape(3, -1).T
    centers = bounds[:, 0] + (idx + 0.5) * pitch
    return centers, pitch, bounds[:, 0]


def query_volume(field_obj, dims, bounds, direction_policy: str = "frontal",
                 chunk: int = 65536) -> VoxelVolume:
    """Sample the field on a voxel grid; a pure function of (field, config).

    sigma is direction-free; rho follows the policy: "frontal" queries the
    straight-on direction, "average" means a small direction cone.
    """
    bounds = np.asarray(bounds, dtype=float)
    fb = np.asarray(field_obj.bounds, dtype=float)
    if np.any(bounds[:, 0] < fb[:, 0] - 1e-9) or np.any(bounds[:, 1] > fb[:, 1] + 1e-9):
        raise BoundsError("requested bounds exceed the field's domain")
    centers, pitch, origin = _volume_grid(dims, bounds)
    if direction_policy == "frontal":
        dir_set = FRONTAL_DIRECTION[None, :]
    elif direction_policy == "average":
        dir_set = _AVERAGE_DIRECTIONS
    else:
        raise ValueError(f"unknown direction policy {direction_policy!r}")
    n = len(centers)
    sigma = np.empty(n)
    rho = np.zeros(n)
    for lo in range(0, n, chunk):
        pts = centers[lo:lo + chunk]
        acc = None
        for d in dir_set:
            s, r_ = field_obj.query(pts, np.broadcast_to(d, (len(pts), 2)))
            acc = r_ if acc is None else acc + r_
        sigma[lo:lo + chunk] = s
        rho[lo:lo + chunk] = acc / len(dir_set)
    dims = tuple(int(d) for d in dims)
    return VoxelVolume(sigma.reshape(dims), rho.reshape(dims), pitch, origin)


def scene_to_volume(scene: GroundTruthScene) -> VoxelVolume:
    """View a ground-truth scene as a VoxelVolume (shared metric protocol)."""
    return VoxelVolume(scene.sigma.copy(), scene.rho.copy(), scene.pitch,
                       scene.origin.copy())


def marching_cubes(vol: VoxelVolume, iso: float, channel: str = "sigma") -> TriMesh:
    """Isosurface extraction with linear edge interpolation.

    Returns an empty mesh when the iso level crosses nothing; degenerate
    (zero-area) triangles are dropped. Output is deterministic and
    independent of traversal order.
    """
    grid = getattr(vol, channel) if channel != "albedo" else vol.albedo
    if grid.min() == grid.max() or not (grid.min() < iso < grid.max()):
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))
    verts, faces, _, _ = _sk_measure.marching_cubes(grid, level=iso)
    world = vol.origin + (verts + 0.5) * vol.pitch
    a = world[faces[:, 1]] - world[faces[:, 0]]
    b = world[faces[:, 2]] - world[faces[:, 0]]
    area2 = np.linalg.norm(np.cross(a, b), axis=1)
    keep = area2 > 2e-12
    faces = faces[keep]
    used = np.unique(faces)
    remap = np.zeros(len(world), dtype=int)
    remap[used] = np.arange(len(used))
    return TriMesh(world[used], remap[faces])


def depth_map(vol: VoxelVolume, threshold: float) -> DepthMap:
    """Per-column smallest z where sigma >= threshold (NaN where none)."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    hit = vol.sigma >= threshold
    any_hit = hit.any(axis=2)
    first = hit.argmax(axis=2)
    depth = np.where(any_hit, vol.z_of_index(first), DEPTH_SENTINEL)
    return DepthMap(depth=depth, origin=vol.origin.copy(), pitch=vol.pitch)


def depth_mae(a: DepthMap, b: DepthMap):
    """Mean absolute depth difference over mutually covered columns.

    Returns (mae_meters, overlap_fraction).
    """
    if a.depth.shape != b.depth.shape:
        raise ShapeMismatchError("depth map dims differ")
    both = np.isfinite(a.depth) & np.isfinite(b.depth)
    if not np.any(both):
        raise NoOverlapError("no mutually covered columns")
    mae = float(np.mean(np.abs(a.depth[both] - b.depth[both])))
    return mae, float(np.mean(both))


def backproject(measured: TransientImage, dims, bounds,
                filtered: bool = False) -> VoxelVolume:
    """Classic ellipsoidal/spherical backprojection of a transient image.

    Every voxel accumulates the measured bin its shell (confocal) or
    ellipsoid (non-confocal) passes through, normalized by the number of
    contributions; `filtered` applies a negative Laplacian afterwards.
    """
    centers, pitch, origin = _volume_grid(dims, bounds)
    consts = measured.constants
    acc = np.zeros(len(centers))
    hits = np.zeros(len(centers))
    for e in range(len(measured.scan)):
        p3 = wall_point(measured.scan.illumination[e])
        pp3 = wall_point(measured.scan.detection[e])
        if np.linalg.norm(p3 - pp3) < GAMMA_CONFOCAL_EPS:
            path = 2.0 * np.linalg.norm(centers - p3, axis=1)
        else:
            path = (np.linalg.norm(centers - p3, axis=1)
                    + np.linalg.norm(centers - pp3, axis=1))
        k = np.floor(path / (consts.c * measured.bin_width)).astype(int)
        ok = (k >= 0) & (k < measured.n_bins)
        acc[ok] += measured.data[e, k[ok]]
        hits[ok] += 1.0
    vals = np.divide(acc, hits, out=np.zeros_like(acc), where=hits > 0)
    dims = tuple(int(d) for d in dims)
    grid = vals.reshape(dims)
    if filtered:
        grid = np.maximum(-laplace(grid), 0.0)
    return VoxelVolume(grid, np.ones_like(grid), pitch, origin)


def project_max(vol: VoxelVolume, axis: str = "front") -> np.ndarray:
    """Maximum-intensity projection of the albedo for figure rendering.

    "front" collapses z (view from the wall, image over x/y); "top" collapses
    y (image over x/z).
    """
    alb = vol.albedo
    if axis == "front":
        return alb.max(axis=2)
    if axis == "top":
        return alb.max(axis=1)
    raise ValueError(f"unknown projection axis {axis!r}")
