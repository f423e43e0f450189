import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from portion3d.errors import (
    DimensionMismatchError,
    GeometryError,
    OrientationError,
    WatertightError,
)
from portion3d.geometry import (
    CameraIntrinsics,
    DepthMap,
    Frame,
    Image,
    Mask,
    NormalizeMode,
    PointCloud,
    TriangleMesh,
    apply_mask,
    backproject_pinhole,
    lift_depth,
    mesh_volume,
    normalize_unit_cube,
    project_pinhole,
    sample_mesh_surface,
    subsample,
)
from portion3d.shapes import ShapeKind, ShapeSpec, generate_mesh


def unit_cube_mesh():
    return generate_mesh(
        ShapeSpec(ShapeKind.BOX, {"half_x": 0.5, "half_y": 0.5, "half_z": 0.5})
    )


class TestApplyMask:
    def test_all_true_is_identity(self, rng):
        img = Image(rng.uniform(0, 1, size=(4, 5, 3)))
        out = apply_mask(img, Mask(np.ones((4, 5), dtype=bool)))
        np.testing.assert_array_equal(out.pixels, img.pixels)

    def test_all_false_is_black(self, rng):
        img = Image(rng.uniform(0, 1, size=(4, 5, 3)))
        out = apply_mask(img, Mask(np.zeros((4, 5), dtype=bool)))
        assert np.all(out.pixels == 0)

    def test_two_pixel_example(self):
        img = Image(np.array([[[0.5, 0.5, 0.5], [1.0, 1.0, 1.0]]]))
        out = apply_mask(img, Mask(np.array([[True, False]])))
        np.testing.assert_array_equal(
            out.pixels, np.array([[[0.5, 0.5, 0.5], [0.0, 0.0, 0.0]]])
        )

    def test_dimension_mismatch(self, rng):
        img = Image(rng.uniform(0, 1, size=(4, 5, 3)))
        with pytest.raises(DimensionMismatchError):
            apply_mask(img, Mask(np.ones((5, 4), dtype=bool)))


class TestLiftDepth:
    def test_single_pixel(self):
        depth = DepthMap(np.array([[0.5]]))
        cloud = lift_depth(depth, Mask(np.array([[True]])), pixel_scale=1.0)
        np.testing.assert_array_equal(cloud.points, [[0.0, 0.0, 0.5]])
        assert cloud.frame is Frame.PIXEL_LIFT

    def test_full_2x2(self):
        depth = DepthMap(np.ones((2, 2)))
        cloud = lift_depth(depth, Mask(np.ones((2, 2), dtype=bool)))
        got = {tuple(p) for p in cloud.points}
        assert got == {(0, 0, 1), (1, 0, 1), (0, 1, 1), (1, 1, 1)}

    def test_pixel_scale(self):
        depth = DepthMap(np.array([[0.0, 2.0]]))
        cloud = lift_depth(depth, Mask(np.array([[False, True]])), pixel_scale=0.5)
        np.testing.assert_array_equal(cloud.points, [[0.5, 0.0, 2.0]])

    def test_empty_foreground_errors(self):
        depth = DepthMap(np.ones((2, 2)))
        with pytest.raises(GeometryError):
            lift_depth(depth, Mask(np.zeros((2, 2), dtype=bool)))

    def test_sentinel_only_foreground_errors(self):
        depth = DepthMap(np.zeros((2, 2)))
        with pytest.raises(GeometryError):
            lift_depth(depth, Mask(np.ones((2, 2), dtype=bool)))

    def test_sentinel_pixels_skipped(self):
        depth = DepthMap(np.array([[0.0, 3.0]]))
        cloud = lift_depth(depth, Mask(np.array([[True, True]])))
        assert len(cloud) == 1

    def test_point_count_matches_masked_valid_pixels(self, rng):
        vals = rng.uniform(0.5, 2.0, size=(8, 9))
        vals[rng.uniform(size=(8, 9)) < 0.4] = 0.0
        mask = rng.uniform(size=(8, 9)) < 0.7
        depth = DepthMap(vals)
        expected = int((mask & (vals > 0)).sum())
        if expected == 0:
            pytest.skip("degenerate draw")
        assert len(lift_depth(depth, Mask(mask))) == expected


class TestBackprojectPinhole:
    def test_forced_by_formula(self):
        K = CameraIntrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0, width=8, height=8)
        depth = DepthMap(np.zeros((8, 8)))
        depth.values[3, 2] = 2.0
        mask = Mask(depth.values > 0)
        cloud = backproject_pinhole(depth, mask, K)
        np.testing.assert_allclose(cloud.points, [[4.0, 6.0, 2.0]])
        assert cloud.frame is Frame.METRIC

    def test_principal_point_maps_to_axis(self):
        K = CameraIntrinsics(fx=50.0, fy=60.0, cx=3.0, cy=2.0, width=8, height=8)
        depth = DepthMap(np.zeros((8, 8)))
        depth.values[2, 3] = 1.75
        cloud = backproject_pinhole(depth, Mask(depth.values > 0), K)
        np.testing.assert_allclose(cloud.points, [[0.0, 0.0, 1.75]])

    def test_reprojection_round_trip(self, rng):
        K = CameraIntrinsics(fx=110.0, fy=95.0, cx=31.5, cy=23.5, width=64, height=48)
        vals = rng.uniform(0.5, 4.0, size=(48, 64))
        depth = DepthMap(vals)
        mask = Mask(np.ones((48, 64), dtype=bool))
        cloud = backproject_pinhole(depth, mask, K)
        uv = project_pinhole(cloud, K)
        vv, uu = np.nonzero(mask.values)
        np.testing.assert_allclose(uv[:, 0], uu, atol=1e-9)
        np.testing.assert_allclose(uv[:, 1], vv, atol=1e-9)


class TestSampleMeshSurface:
    def test_single_triangle_on_plane(self):
        mesh = TriangleMesh(
            np.array([[0.0, 0.0, 1.0], [2.0, 0.0, 1.0], [0.0, 3.0, 1.0]]),
            np.array([[0, 1, 2]]),
        )
        cloud = sample_mesh_surface(mesh, n=500, seed=1)
        assert np.all(np.abs(cloud.points[:, 2] - 1.0) < 1e-9)
        # inside the triangle: x/2 + y/3 <= 1 in the plane
        assert np.all(cloud.points[:, 0] / 2 + cloud.points[:, 1] / 3 <= 1 + 1e-9)

    def test_cube_face_fractions(self):
        cloud = sample_mesh_surface(unit_cube_mesh(), n=100_000, seed=5)
        pts = cloud.points
        fractions = []
        for axis in range(3):
            for side in (-0.5, 0.5):
                on_face = np.abs(pts[:, axis] - side) < 1e-12
                fractions.append(on_face.mean())
        assert abs(sum(fractions) - 1.0) < 1e-9
        for frac in fractions:
            assert abs(frac - 1.0 / 6.0) < 0.01

    def test_default_sample_count(self):
        assert len(sample_mesh_surface(unit_cube_mesh(), seed=0)) == 1024

    def test_deterministic_per_seed(self):
        mesh = unit_cube_mesh()
        a = sample_mesh_surface(mesh, 64, seed=9)
        b = sample_mesh_surface(mesh, 64, seed=9)
        np.testing.assert_array_equal(a.points, b.points)
        c = sample_mesh_surface(mesh, 64, seed=10)
        assert not np.array_equal(a.points, c.points)

    def test_zero_area_errors(self):
        mesh = TriangleMesh(np.zeros((3, 3)) + [[0, 0, 0], [0, 0, 0], [0, 0, 0]], np.array([[0, 1, 2]]))
        with pytest.raises(GeometryError):
            sample_mesh_surface(mesh, 10, seed=0)


class TestSubsample:
    def test_full_size_is_permutation(self, rng):
        cloud = PointCloud(rng.normal(size=(20, 3)))
        out = subsample(cloud, 20, seed=3)
        assert sorted(map(tuple, out.points)) == sorted(map(tuple, cloud.points))

    def test_single_point(self):
        cloud = PointCloud([[1.0, 2.0, 3.0]])
        out = subsample(cloud, 1, seed=0)
        np.testing.assert_array_equal(out.points, cloud.points)

    def test_deterministic(self, rng):
        cloud = PointCloud(rng.normal(size=(50, 3)))
        a = subsample(cloud, 10, seed=4)
        b = subsample(cloud, 10, seed=4)
        np.testing.assert_array_equal(a.points, b.points)

    def test_no_silent_upsampling(self, rng):
        cloud = PointCloud(rng.normal(size=(5, 3)))
        with pytest.raises(GeometryError):
            subsample(cloud, 6, seed=0)

    def test_points_distinct(self, rng):
        cloud = PointCloud(rng.normal(size=(30, 3)))
        out = subsample(cloud, 30, seed=1)
        assert len({tuple(p) for p in out.points}) == 30


class TestNormalizeUnitCube:
    def test_per_axis_example(self):
        cloud = PointCloud([[0, 0, 0], [2, 4, 8]])
        out = normalize_unit_cube(cloud, NormalizeMode.PER_AXIS)
        np.testing.assert_array_equal(out.points, [[0, 0, 0], [1, 1, 1]])
        assert out.frame is Frame.NORMALIZED

    def test_uniform_example(self):
        cloud = PointCloud([[0, 0, 0], [2, 4, 8]])
        out = normalize_unit_cube(cloud, NormalizeMode.UNIFORM)
        np.testing.assert_array_equal(out.points, [[0, 0, 0], [0.25, 0.5, 1.0]])

    def test_already_normalized_unchanged(self, rng):
        pts = rng.uniform(size=(40, 3))
        pts[0] = 0.0
        pts[1] = 1.0
        cloud = PointCloud(pts)
        out = normalize_unit_cube(cloud)
        np.testing.assert_allclose(out.points, pts, atol=1e-15)

    def test_exact_bounds_and_idempotence(self, rng):
        cloud = PointCloud(rng.normal(5.0, 3.0, size=(25, 3)))
        once = normalize_unit_cube(cloud)
        assert np.all(once.points.min(axis=0) == 0.0)
        assert np.all(once.points.max(axis=0) == 1.0)
        twice = normalize_unit_cube(once)
        np.testing.assert_allclose(twice.points, once.points, atol=1e-12)

    def test_degenerate_axis_maps_to_zero(self):
        cloud = PointCloud([[1.0, 2.0, 5.0], [3.0, 2.0, 6.0]])
        out = normalize_unit_cube(cloud)
        np.testing.assert_array_equal(out.points[:, 1], [0.0, 0.0])

    def test_single_point_uniform(self):
        out = normalize_unit_cube(PointCloud([[3.0, 4.0, 5.0]]), NormalizeMode.UNIFORM)
        np.testing.assert_array_equal(out.points, [[0.0, 0.0, 0.0]])

    @settings(max_examples=25, deadline=None)
    @given(
        seed=st.integers(0, 10_000),
        tx=st.floats(-50, 50),
        ty=st.floats(-50, 50),
        tz=st.floats(-50, 50),
        scale=st.floats(0.1, 20),
    )
    def test_rigid_translation_and_uniform_scale_invariance(self, seed, tx, ty, tz, scale):
        pts = np.random.default_rng(seed).normal(size=(12, 3))
        moved = pts * scale + np.array([tx, ty, tz])
        for mode in NormalizeMode:
            base = normalize_unit_cube(PointCloud(pts), mode)
            shifted = normalize_unit_cube(PointCloud(moved), mode)
            np.testing.assert_allclose(shifted.points, base.points, atol=1e-9)


class TestMeshVolume:
    def test_unit_cube_exact(self):
        assert abs(mesh_volume(unit_cube_mesh()) - 1.0) < 1e-12

    def test_icosphere_within_two_percent(self):
        mesh = generate_mesh(ShapeSpec(ShapeKind.SPHERE, {"radius": 1.0}, 3))
        vol = mesh_volume(mesh)
        assert abs(vol - 4.18879020478639) / 4.18879020478639 < 0.02

    def test_flipped_triangle_is_orientation_error(self):
        mesh = unit_cube_mesh()
        tris = mesh.triangles.copy()
        tris[0] = tris[0][::-1]
        flipped = TriangleMesh(mesh.vertices, tris)
        with pytest.raises(OrientationError):
            mesh_volume(flipped)

    def test_open_mesh_is_watertight_error(self):
        mesh = unit_cube_mesh()
        open_mesh = TriangleMesh(mesh.vertices, mesh.triangles[:-1])
        with pytest.raises(WatertightError):
            mesh_volume(open_mesh)

    def test_inward_mesh_is_orientation_error(self):
        mesh = unit_cube_mesh()
        inside_out = TriangleMesh(mesh.vertices, mesh.triangles[:, ::-1])
        with pytest.raises(OrientationError):
            mesh_volume(inside_out)

    @settings(max_examples=20, deadline=None)
    @given(
        tx=st.floats(-100, 100),
        ty=st.floats(-100, 100),
        tz=st.floats(-100, 100),
        scale=st.floats(0.05, 10),
    )
    def test_translation_invariance_and_cubic_scaling(self, tx, ty, tz, scale):
        mesh = unit_cube_mesh()
        base = mesh_volume(mesh)
        moved = TriangleMesh(mesh.vertices * scale + [tx, ty, tz], mesh.triangles)
        got = mesh_volume(moved)
        assert abs(got - base * scale**3) / (base * scale**3) < 1e-9


class TestTypeInvariants:
    def test_normalized_frame_rejects_out_of_cube(self):
        with pytest.raises(GeometryError):
            PointCloud([[0.0, 0.0, 1.5]], Frame.NORMALIZED)

    def test_non_finite_rejected(self):
        with pytest.raises(GeometryError):
            PointCloud([[np.nan, 0.0, 0.0]])
        with pytest.raises(GeometryError):
            DepthMap(np.array([[np.inf]]))

    def test_intrinsics_validation(self):
        with pytest.raises(GeometryError):
            CameraIntrinsics(fx=-1, fy=1, cx=0, cy=0, width=4, height=4)
        with pytest.raises(GeometryError):
            CameraIntrinsics(fx=1, fy=1, cx=9, cy=0, width=4, height=4)

    def test_degenerate_triangle_rejected(self):
        with pytest.raises(GeometryError):
            TriangleMesh(np.eye(3), np.array([[0, 0, 1]]))

    def test_image_channel_range(self):
        with pytest.raises(GeometryError):
            Image(np.full((2, 2, 3), 1.5))
