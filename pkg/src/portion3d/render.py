"""Depth, mask and shaded-RGB rendering of a triangle mesh.

For every pixel the renderer finds the nearest intersection of the ray
through that pixel's (u, v) coordinate with the mesh, exactly as a ray
caster would. It is organized as a per-triangle rasterization: pixels
inside a triangle's screen projection get their depth from the
intersection of the pixel ray with the triangle's supporting plane, which
is algebraically the same intersection point. Shading is flat Lambertian
per face: albedo * (max(0, n . l) + 0.2 ambient), clamped to [0, 1].

Misses carry depth 0 (the invalid sentinel), a false mask bit and a black
pixel, so ``mask == (depth > 0)`` holds by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, RenderError
from .geometry import CameraIntrinsics, DepthMap, Image, Mask, TriangleMesh


@dataclass(frozen=True)
class RigidTransform:
    """World-to-camera transform: p_cam = rotation @ p_world + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if rot.shape != (3, 3) or t.shape != (3,):
            raise GeometryError("rigid transform needs a 3x3 rotation and 3-vector")
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-9):
            raise GeometryError("rotation matrix is not orthonormal")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", t)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def camera_center_world(self) -> np.ndarray:
        return -self.rotation.T @ self.translation


def look_at_pose(camera_pos, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)) -> RigidTransform:
    """Camera at ``camera_pos`` looking at ``target``.

    Convention: camera +z is the viewing direction, +x points right and +y
    points down so that image rows grow downward.
    """
    pos = np.asarray(camera_pos, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - pos
    norm = np.linalg.norm(fwd)
    if norm == 0:
        raise GeometryError("camera position coincides with the look-at target")
    fwd = fwd / norm
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(up, fwd) * -1.0
    rn = np.linalg.norm(right)
    if rn < 1e-12:
        raise GeometryError("viewing direction is parallel to the up vector")
    right /= rn
    down = np.cross(fwd, right)
    rot = np.vstack([right, down, fwd])
    return RigidTransform(rot, -rot @ pos)


def render(
    mesh: TriangleMesh,
    K: CameraIntrinsics,
    pose: RigidTransform,
    albedo=(0.8, 0.8, 0.8),
    light_dir=(0.3, -0.25, 0.9),
) -> tuple[Image, DepthMap, Mask]:
    """Render (RGB, depth, mask) for a pinhole camera.

    Raises RenderError when the mesh is entirely behind the camera or no
    pixel ray hits it.
    """
    albedo = np.asarray(albedo, dtype=np.float64)
    light = np.asarray(light_dir, dtype=np.float64)
    light = light / np.linalg.norm(light)

    verts_cam = pose.apply(mesh.vertices)
    if np.all(verts_cam[:, 2] <= 0):
        raise RenderError("mesh is entirely behind the camera")

    normals_world = mesh.face_normals()
    shade = np.clip(np.maximum(normals_world @ light, 0.0)[:, None] * albedo + 0.2 * albedo, 0.0, 1.0)

    width, height = K.width, K.height
    zbuf = np.full((height, width), np.inf)
    color = np.zeros((height, width, 3))

    tri = mesh.triangles
    v0 = verts_cam[tri[:, 0]]
    v1 = verts_cam[tri[:, 1]]
    v2 = verts_cam[tri[:, 2]]
    # camera-frame normals for backface culling and the plane equation
    n_cam = np.cross(v1 - v0, v2 - v0)
    plane_off = np.einsum("ij,ij->i", n_cam, v0)
    # camera sits at the origin: faces with plane offset >= 0 point away
    front = plane_off < 0
    in_front = (v0[:, 2] > 1e-9) & (v1[:, 2] > 1e-9) & (v2[:, 2] > 1e-9)
    candidates = np.nonzero(front & in_front)[0]

    def to_screen(p):
        return np.column_stack([p[:, 0] * K.fx / p[:, 2] + K.cx, p[:, 1] * K.fy / p[:, 2] + K.cy])

    s0, s1, s2 = to_screen(v0), to_screen(v1), to_screen(v2)

    for t in candidates:
        a, b, c = s0[t], s1[t], s2[t]
        umin = int(np.ceil(min(a[0], b[0], c[0])))
        umax = int(np.floor(max(a[0], b[0], c[0])))
        vmin = int(np.ceil(min(a[1], b[1], c[1])))
        vmax = int(np.floor(max(a[1], b[1], c[1])))
        umin, umax = max(umin, 0), min(umax, width - 1)
        vmin, vmax = max(vmin, 0), min(vmax, height - 1)
        if umin > umax or vmin > vmax:
            continue
        us = np.arange(umin, umax + 1, dtype=np.float64)
        vs = np.arange(vmin, vmax + 1, dtype=np.float64)
        uu, vv = np.meshgrid(us, vs)
        # inclusive edge-function inside test; screen winding of a front
        # face is fixed by the camera handedness, so one sign works
        e0 = (b[0] - a[0]) * (vv - a[1]) - (b[1] - a[1]) * (uu - a[0])
        e1 = (c[0] - b[0]) * (vv - b[1]) - (c[1] - b[1]) * (uu - b[0])
        e2 = (a[0] - c[0]) * (vv - c[1]) - (a[1] - c[1]) * (uu - c[0])
        inside = ((e0 >= 0) & (e1 >= 0) & (e2 >= 0)) | ((e0 <= 0) & (e1 <= 0) & (e2 <= 0))
        if not inside.any():
            continue
        # ray through pixel (u, v) is t * ((u-cx)/fx, (v-cy)/fy, 1); the
        # plane intersection parameter equals the camera-frame depth z
        dir_x = (uu - K.cx) / K.fx
        dir_y = (vv - K.cy) / K.fy
        denom = n_cam[t, 0] * dir_x + n_cam[t, 1] * dir_y + n_cam[t, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            z = plane_off[t] / denom
        zwin = zbuf[vmin : vmax + 1, umin : umax + 1]
        hit = inside & np.isfinite(z) & (z > 1e-9) & (z < zwin)
        if not hit.any():
            continue
        zwin[hit] = z[hit]
        color[vmin : vmax + 1, umin : umax + 1][hit] = shade[t]

    mask_vals = np.isfinite(zbuf)
    if not mask_vals.any():
        raise RenderError("no pixel ray hits the mesh")
    depth_vals = np.where(mask_vals, zbuf, 0.0)
    return Image(color), DepthMap(depth_vals), Mask(mask_vals)


def perturb_depth(depth: DepthMap, sigma: float, seed: int = 0) -> DepthMap:
    """Multiply each valid depth by (1 + eps), eps ~ N(0, sigma^2).

    Perturbed values are clamped to stay positive so no valid pixel turns
    into the invalid sentinel. Deterministic per seed; sigma 0 returns an
    identical map.
    """
    if sigma < 0:
        raise GeometryError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return DepthMap(depth.values.copy())
    rng = np.random.default_rng(seed)
    eps = rng.normal(0.0, sigma, size=depth.values.shape)
    valid = depth.valid()
    factor = np.where(valid, 1.0 + eps, 1.0)
    out = depth.values * factor
    tiny = np.finfo(np.float64).tiny
    out[valid] = np.maximum(out[valid], tiny)
    return DepthMap(out)
