"""Parametric solids with analytic volumes.

These are the stand-in "food objects": each kind has a watertight,
outward-wound triangulation and a closed-form volume that serves as an
independent oracle for the signed-tetrahedron volume computation.

Tessellation semantics per kind:
  sphere / ellipsoid  icosphere subdivision level (level 3 = 1280 faces)
  cylinder / cone     number of radial segments
  box                 ignored (always 12 triangles)
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError
from .geometry import TriangleMesh


class ShapeKind(enum.Enum):
    SPHERE = "sphere"
    BOX = "box"
    CYLINDER = "cylinder"
    ELLIPSOID = "ellipsoid"
    CONE = "cone"


# size parameter names each kind requires, all in length units (cm)
_PARAM_NAMES = {
    ShapeKind.SPHERE: ("radius",),
    ShapeKind.BOX: ("half_x", "half_y", "half_z"),
    ShapeKind.CYLINDER: ("radius", "height"),
    ShapeKind.ELLIPSOID: ("semi_x", "semi_y", "semi_z"),
    ShapeKind.CONE: ("radius", "height"),
}

_DEFAULT_TESSELLATION = {
    ShapeKind.SPHERE: 3,
    ShapeKind.BOX: 1,
    ShapeKind.CYLINDER: 64,
    ShapeKind.ELLIPSOID: 3,
    ShapeKind.CONE: 64,
}


@dataclass(frozen=True)
class ShapeSpec:
    """One parametric solid: kind, positive size parameters, tessellation."""

    kind: ShapeKind
    params: dict = field(default_factory=dict)
    tessellation: int | None = None

    def __post_init__(self):
        expected = _PARAM_NAMES[self.kind]
        if set(self.params) != set(expected):
            raise GeometryError(
                f"{self.kind.value} needs parameters {expected}, got {tuple(self.params)}"
            )
        for name, value in self.params.items():
            if not (value > 0 and math.isfinite(value)):
                raise GeometryError(f"{self.kind.value}.{name} must be positive, got {value}")
        if self.tessellation is not None and self.tessellation < 1:
            raise GeometryError("tessellation level must be >= 1")

    @property
    def level(self) -> int:
        return self.tessellation if self.tessellation is not None else _DEFAULT_TESSELLATION[self.kind]


def analytic_volume(spec: ShapeSpec) -> float:
    """Closed-form volume in ml; the oracle mesh_volume is checked against."""
    p = spec.params
    if spec.kind is ShapeKind.SPHERE:
        return 4.0 / 3.0 * math.pi * p["radius"] ** 3
    if spec.kind is ShapeKind.BOX:
        return 8.0 * p["half_x"] * p["half_y"] * p["half_z"]
    if spec.kind is ShapeKind.CYLINDER:
        return math.pi * p["radius"] ** 2 * p["height"]
    if spec.kind is ShapeKind.ELLIPSOID:
        return 4.0 / 3.0 * math.pi * p["semi_x"] * p["semi_y"] * p["semi_z"]
    if spec.kind is ShapeKind.CONE:
        return math.pi * p["radius"] ** 2 * p["height"] / 3.0
    raise GeometryError(f"unknown shape kind {spec.kind!r}")


def generate_mesh(spec: ShapeSpec) -> TriangleMesh:
    """Watertight, outward-oriented triangulation of the solid.

    All shapes are centered on the origin with their symmetry axis on z.
    """
    if spec.kind is ShapeKind.SPHERE:
        r = spec.params["radius"]
        return _icosphere(spec.level, scale=(r, r, r))
    if spec.kind is ShapeKind.ELLIPSOID:
        p = spec.params
        return _icosphere(spec.level, scale=(p["semi_x"], p["semi_y"], p["semi_z"]))
    if spec.kind is ShapeKind.BOX:
        return _box(spec.params["half_x"], spec.params["half_y"], spec.params["half_z"])
    if spec.kind is ShapeKind.CYLINDER:
        return _cylinder(spec.params["radius"], spec.params["height"], max(spec.level, 3))
    if spec.kind is ShapeKind.CONE:
        return _cone(spec.params["radius"], spec.params["height"], max(spec.level, 3))
    raise GeometryError(f"unknown shape kind {spec.kind!r}")


def _box(hx: float, hy: float, hz: float) -> TriangleMesh:
    verts = np.array(
        [
            [-hx, -hy, -hz],
            [hx, -hy, -hz],
            [hx, hy, -hz],
            [-hx, hy, -hz],
            [-hx, -hy, hz],
            [hx, -hy, hz],
            [hx, hy, hz],
            [-hx, hy, hz],
        ],
        dtype=np.float64,
    )
    # two triangles per face, wound so normals point outward
    tris = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # bottom (-z)
            [4, 5, 6], [4, 6, 7],  # top (+z)
            [0, 1, 5], [0, 5, 4],  # -y
            [2, 3, 7], [2, 7, 6],  # +y
            [1, 2, 6], [1, 6, 5],  # +x
            [3, 0, 4], [3, 4, 7],  # -x
        ],
        dtype=np.int64,
    )
    return TriangleMesh(verts, tris)


def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    tris = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    return verts, tris


def _icosphere(level: int, scale: tuple[float, float, float]) -> TriangleMesh:
    """Subdivided icosahedron projected to the unit sphere, then scaled."""
    verts, tris = _icosahedron()
    verts = list(map(tuple, verts))
    midpoint_cache: dict[tuple[int, int], int] = {}

    def midpoint(i: int, j: int) -> int:
        key = (i, j) if i < j else (j, i)
        cached = midpoint_cache.get(key)
        if cached is not None:
            return cached
        a = np.array(verts[i])
        b = np.array(verts[j])
        m = a + b
        m /= np.linalg.norm(m)
        verts.append(tuple(m))
        midpoint_cache[key] = len(verts) - 1
        return len(verts) - 1

    faces = [tuple(t) for t in tris]
    for _ in range(level):
        next_faces = []
        for a, b, c in faces:
            ab = midpoint(a, b)
            bc = midpoint(b, c)
            ca = midpoint(c, a)
            next_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = next_faces
    vert_arr = np.array(verts, dtype=np.float64) * np.asarray(scale, dtype=np.float64)
    return TriangleMesh(vert_arr, np.array(faces, dtype=np.int64))


def _rim(radius: float, z: float, segments: int) -> np.ndarray:
    theta = 2.0 * math.pi * np.arange(segments) / segments
    return np.column_stack(
        [radius * np.cos(theta), radius * np.sin(theta), np.full(segments, z)]
    )


def _cylinder(radius: float, height: float, segments: int) -> TriangleMesh:
    hz = height / 2.0
    bottom = _rim(radius, -hz, segments)
    top = _rim(radius, hz, segments)
    verts = np.vstack([bottom, top, [[0, 0, -hz]], [[0, 0, hz]]])
    bc = 2 * segments      # bottom center index
    tc = 2 * segments + 1  # top center index
    tris = []
    for i in range(segments):
        j = (i + 1) % segments
        bi, bj = i, j
        ti, tj = segments + i, segments + j
        tris += [[bi, bj, tj], [bi, tj, ti]]   # side, outward
        tris += [[bc, bj, bi]]                 # bottom cap faces -z
        tris += [[tc, ti, tj]]                 # top cap faces +z
    return TriangleMesh(verts, np.array(tris, dtype=np.int64))


def _cone(radius: float, height: float, segments: int) -> TriangleMesh:
    """Cone with base at z = -height/2 and apex at z = +height/2."""
    hz = height / 2.0
    base = _rim(radius, -hz, segments)
    verts = np.vstack([base, [[0, 0, -hz]], [[0, 0, hz]]])
    center = segments
    apex = segments + 1
    tris = []
    for i in range(segments):
        j = (i + 1) % segments
        tris += [[i, j, apex]]      # side, outward
        tris += [[center, j, i]]    # base cap faces -z
    return TriangleMesh(verts, np.array(tris, dtype=np.int64))
