"""Pure geometric kernels: depth lifting, sampling, normalization, volume.

Everything here is a pure function of its inputs; randomness always enters
through an explicit seed, so repeated calls are reproducible and the module
is safe to use from multiple threads.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatchError,
    GeometryError,
    OrientationError,
    WatertightError,
)


class Frame(enum.Enum):
    """Coordinate frame a point cloud lives in."""

    METRIC = "metric"
    PIXEL_LIFT = "pixel-lift"
    NORMALIZED = "normalized"


@dataclass
class PointCloud:
    """N x 3 point set with a frame tag.

    Coordinates are float64 in memory. ``metric`` clouds are in consistent
    length units (1 unit^3 == 1 ml elsewhere in the package), ``pixel-lift``
    clouds mix pixel xy with depth z, and ``normalized`` clouds live in the
    unit cube.
    """

    points: np.ndarray
    frame: Frame = Frame.METRIC

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise GeometryError(f"point array must be Nx3, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise GeometryError("point cloud contains non-finite coordinates")
        if self.frame is Frame.NORMALIZED:
            if pts.size and (pts.min() < -1e-12 or pts.max() > 1.0 + 1e-12):
                raise GeometryError("normalized cloud has coordinates outside [0, 1]")
        self.points = pts

    def __len__(self):
        return self.points.shape[0]

    def bounds(self):
        """(min_corner, max_corner) of the axis-aligned bounding box."""
        if len(self) == 0:
            raise GeometryError("empty cloud has no bounds")
        return self.points.min(axis=0), self.points.max(axis=0)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixel units."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise GeometryError("image dimensions must be positive")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise GeometryError("principal point must lie inside the image")


@dataclass
class DepthMap:
    """H x W depth grid in length units; 0 marks an invalid pixel."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise GeometryError(f"depth map must be 2-D, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise GeometryError("depth map contains non-finite values")
        if np.any(vals < 0):
            raise GeometryError("depth map contains negative values")
        self.values = vals

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    def valid(self) -> np.ndarray:
        return self.values > 0


@dataclass
class Mask:
    """H x W boolean foreground mask."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.ndim != 2:
            raise GeometryError(f"mask must be 2-D, got shape {vals.shape}")
        self.values = vals.astype(bool)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]


@dataclass
class Image:
    """H x W x 3 RGB image with channels in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise GeometryError(f"image must be HxWx3, got shape {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0 or px.max() > 1:
            raise GeometryError("image channels must be finite and in [0, 1]")
        self.pixels = px

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


@dataclass
class TriangleMesh:
    """Indexed triangle mesh.

    vertices: V x 3 float64, triangles: T x 3 int indices. Degenerate
    triangles with repeated indices are rejected at construction.
    """

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=np.float64)
        tris = np.asarray(self.triangles, dtype=np.int64)
        if verts.ndim != 2 or verts.shape[1] != 3:
            raise GeometryError(f"vertices must be Vx3, got shape {verts.shape}")
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise GeometryError(f"triangles must be Tx3, got shape {tris.shape}")
        if not np.all(np.isfinite(verts)):
            raise GeometryError("mesh has non-finite vertex coordinates")
        if tris.size:
            if tris.min() < 0 or tris.max() >= len(verts):
                raise GeometryError("triangle index out of range")
            a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
            if np.any((a == b) | (b == c) | (a == c)):
                raise GeometryError("degenerate triangle with repeated vertex index")
        self.vertices = verts
        self.triangles = tris

    def triangle_corners(self):
        """Returns the three T x 3 corner arrays (v0, v1, v2)."""
        v = self.vertices
        t = self.triangles
        return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]

    def face_areas(self) -> np.ndarray:
        v0, v1, v2 = self.triangle_corners()
        return 0.5 * np.linalg.norm(np.cross(v1 - v0, v2 - v0), axis=1)

    def face_normals(self) -> np.ndarray:
        """Unit face normals; zero-area faces get a zero normal."""
        v0, v1, v2 = self.triangle_corners()
        n = np.cross(v1 - v0, v2 - v0)
        lengths = np.linalg.norm(n, axis=1, keepdims=True)
        return np.divide(n, lengths, out=np.zeros_like(n), where=lengths > 0)

    def is_watertight(self) -> bool:
        """True if every undirected edge is shared by exactly two triangles."""
        edges = _undirected_edges(self.triangles)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def is_consistently_oriented(self) -> bool:
        """True if every directed edge appears exactly once.

        In a watertight, consistently wound mesh each undirected edge is
        traversed once in each direction; a flipped triangle duplicates a
        directed edge.
        """
        tris = self.triangles
        directed = np.concatenate(
            [tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]], axis=0
        )
        uniq = np.unique(directed, axis=0)
        return len(uniq) == len(directed)


def _undirected_edges(tris: np.ndarray) -> np.ndarray:
    edges = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]], axis=0)
    return np.sort(edges, axis=1)


def apply_mask(image: Image, mask: Mask) -> Image:
    """Zero out background pixels, keeping foreground untouched."""
    if (image.height, image.width) != (mask.height, mask.width):
        raise DimensionMismatchError(
            f"image is {image.height}x{image.width} but mask is "
            f"{mask.height}x{mask.width}"
        )
    out = np.where(mask.values[:, :, None], image.pixels, 0.0)
    return Image(out)


def lift_depth(depth: DepthMap, mask: Mask, pixel_scale: float = 1.0) -> PointCloud:
    """Lift a masked depth map to a point cloud.

    Keeps the two image coordinates (scaled by ``pixel_scale``) and appends
    depth as the third coordinate: pixel (u, v) with depth d becomes
    (u * pixel_scale, v * pixel_scale, d). Pixels with the invalid-depth
    sentinel 0 under the mask are skipped; an entirely empty foreground is
    an error, as is any negative depth under the mask.
    """
    if (depth.height, depth.width) != (mask.height, mask.width):
        raise DimensionMismatchError(
            f"depth is {depth.height}x{depth.width} but mask is "
            f"{mask.height}x{mask.width}"
        )
    m = mask.values
    if np.any(depth.values[m] < 0):
        raise GeometryError("negative depth under the mask")
    keep = m & depth.valid()
    if not keep.any():
        raise GeometryError("mask selects no valid depth pixels")
    v_idx, u_idx = np.nonzero(keep)
    pts = np.column_stack(
        [
            u_idx.astype(np.float64) * pixel_scale,
            v_idx.astype(np.float64) * pixel_scale,
            depth.values[v_idx, u_idx],
        ]
    )
    return PointCloud(pts, Frame.PIXEL_LIFT)


def backproject_pinhole(depth: DepthMap, mask: Mask, K: CameraIntrinsics) -> PointCloud:
    """Back-project masked depth pixels through a pinhole camera.

    Pixel (u, v) with depth d maps to ((u - cx) d / fx, (v - cy) d / fy, d)
    in the camera frame. Preconditions and error cases match lift_depth.
    """
    if (depth.height, depth.width) != (mask.height, mask.width):
        raise DimensionMismatchError(
            f"depth is {depth.height}x{depth.width} but mask is "
            f"{mask.height}x{mask.width}"
        )
    m = mask.values
    if np.any(depth.values[m] < 0):
        raise GeometryError("negative depth under the mask")
    keep = m & depth.valid()
    if not keep.any():
        raise GeometryError("mask selects no valid depth pixels")
    v_idx, u_idx = np.nonzero(keep)
    d = depth.values[v_idx, u_idx]
    x = (u_idx - K.cx) * d / K.fx
    y = (v_idx - K.cy) * d / K.fy
    return PointCloud(np.column_stack([x, y, d]), Frame.METRIC)


def project_pinhole(cloud: PointCloud, K: CameraIntrinsics) -> np.ndarray:
    """Perspective projection back to pixel coordinates, N x 2 (u, v)."""
    pts = cloud.points
    if np.any(pts[:, 2] <= 0):
        raise GeometryError("cannot project points at or behind the camera")
    u = pts[:, 0] * K.fx / pts[:, 2] + K.cx
    v = pts[:, 1] * K.fy / pts[:, 2] + K.cy
    return np.column_stack([u, v])


def sample_mesh_surface(mesh: TriangleMesh, n: int = 1024, seed: int = 0) -> PointCloud:
    """Draw n points uniformly over the mesh surface.

    Triangles are selected with probability proportional to area, then a
    point is drawn uniformly inside each selected triangle via barycentric
    coordinates. Deterministic for a fixed seed.
    """
    if len(mesh.triangles) == 0:
        raise GeometryError("cannot sample an empty mesh")
    if n < 1:
        raise GeometryError(f"sample count must be >= 1, got {n}")
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0:
        raise GeometryError("mesh has zero total surface area")
    rng = np.random.default_rng(seed)
    cum = np.cumsum(areas)
    face_idx = np.searchsorted(cum, rng.random(n) * total)
    face_idx = np.minimum(face_idx, len(areas) - 1)
    v0, v1, v2 = mesh.triangle_corners()
    a, b, c = v0[face_idx], v1[face_idx], v2[face_idx]
    # sqrt trick gives the uniform density over each triangle
    r1 = np.sqrt(rng.random((n, 1)))
    r2 = rng.random((n, 1))
    pts = (1.0 - r1) * a + r1 * (1.0 - r2) * b + r1 * r2 * c
    return PointCloud(pts, Frame.METRIC)


def subsample(cloud: PointCloud, n: int, seed: int = 0) -> PointCloud:
    """Choose n distinct points uniformly without replacement.

    Requesting more points than the cloud holds is an error rather than a
    silent upsample, since duplicated points would distort density-based
    features downstream.
    """
    size = len(cloud)
    if n < 1:
        raise GeometryError(f"sample count must be >= 1, got {n}")
    if n > size:
        raise GeometryError(f"cannot subsample {n} points from a cloud of {size}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(size, size=n, replace=False)
    return PointCloud(cloud.points[idx], cloud.frame)


class NormalizeMode(enum.Enum):
    PER_AXIS = "per_axis"
    UNIFORM = "uniform"


def normalize_unit_cube(
    cloud: PointCloud, mode: NormalizeMode = NormalizeMode.PER_AXIS
) -> PointCloud:
    """Rescale a cloud into the unit cube, discarding true scale.

    per_axis maps each axis independently onto [0, 1]; uniform translates
    the min corner to the origin and divides all axes by the largest extent
    so aspect ratio is preserved. An axis with zero extent maps to 0.
    """
    if len(cloud) == 0:
        raise GeometryError("cannot normalize an empty cloud")
    pts = cloud.points
    lo = pts.min(axis=0)
    extent = pts.max(axis=0) - lo
    if mode is NormalizeMode.PER_AXIS:
        scale = np.where(extent > 0, extent, 1.0)
        out = np.where(extent > 0, (pts - lo) / scale, 0.0)
    elif mode is NormalizeMode.UNIFORM:
        largest = extent.max()
        if largest > 0:
            out = (pts - lo) / largest
        else:
            out = np.zeros_like(pts)
    else:
        raise GeometryError(f"unknown normalization mode {mode!r}")
    return PointCloud(out, Frame.NORMALIZED)


def mesh_volume(mesh: TriangleMesh) -> float:
    """Enclosed volume of a watertight mesh in ml (1 length-unit^3 = 1 ml).

    Sums signed tetrahedron volumes v0 . (v1 x v2) / 6 over all triangles.
    Requires a closed mesh with consistent outward winding; a flipped
    triangle or an inward-wound mesh raises OrientationError.
    """
    if len(mesh.triangles) == 0:
        raise WatertightError("empty mesh has no volume")
    if not mesh.is_watertight():
        raise WatertightError("mesh is not watertight")
    if not mesh.is_consistently_oriented():
        raise OrientationError("mesh triangles are inconsistently oriented")
    v0, v1, v2 = mesh.triangle_corners()
    # summing tetrahedra about the centroid avoids the cancellation that a
    # small mesh far from the origin would otherwise suffer; the sum is
    # translation-invariant for closed surfaces, so this changes nothing
    # analytically
    center = mesh.vertices.mean(axis=0)
    signed = np.einsum(
        "ij,ij->i", v0 - center, np.cross(v1 - center, v2 - center), dtype=np.float64
    )
    volume = signed.sum() / 6.0
    if volume <= 0:
        raise OrientationError(
            f"signed volume {volume:.6g} is not positive; winding is inward"
        )
    return float(volume)
