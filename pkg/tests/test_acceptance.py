"""Acceptance suite: one test per criterion, each printing a verdict line.

Criteria 5 and 6 train real models on the full default dataset and
dominate the suite's runtime (roughly 10 and 70 minutes respectively on a
single desktop core). Everything else completes in seconds.
"""

import json
import time

import numpy as np
import pytest

from util_geom import point_to_mesh_distance

from portion3d.cli import main
from portion3d.dataset import GeneratorConfig, build_dataset, scene_params
from portion3d.errors import ConfigError, FormatError
from portion3d.evaluation import evaluate, fit_baseline, mae, mape
from portion3d.formats import read_depth, read_obj, read_pgm, read_ply, write_ply
from portion3d.gradcheck import ENCODER_TOLERANCE, OP_TOLERANCE, run_suite
from portion3d.geometry import PointCloud, backproject_pinhole, mesh_volume
from portion3d.shapes import ShapeKind, ShapeSpec, analytic_volume, generate_mesh
from portion3d.training import TrainConfig, build_cache, save_checkpoint, train
from portion3d.dataset import render_scene


def verdict(criterion: int, detail: str):
    print(f"ACCEPTANCE criterion={criterion} status=PASS {detail}")


class TestCriterion1PaperNumbersAreFootnotesOnly:
    def test_reference_points_are_annotations_not_targets(self, tiny_dataset, tmp_path):
        """Full-scale reference metrics appear only as labelled footnotes."""
        _, manifest = tiny_dataset
        config = json.dumps(
            {
                "attribute": "volume", "modality": "pc_only", "variant": "gtpc",
                "batch_size": 8, "epochs": 1, "lr": 0.01, "seed": 0,
                "feature_dim": 4, "k_neighbors": 3, "n_points": 1024,
                "mlp_widths": [6, 6], "conv_channels": [2, 3], "image_size": 96,
            }
        )
        cfg_path = tmp_path / "base.json"
        cfg_path.write_text(config)
        code = main(
            [
                "ablate",
                "--manifest", str(manifest.root / "manifest.json"),
                "--out", str(tmp_path / "report"),
                "--replicates", "1",
                "--config", str(cfg_path),
            ]
        )
        assert code == 0
        meta = json.loads((tmp_path / "report" / "report.json").read_text())
        footnotes = " ".join(meta["footnotes"])
        for number in ("77.98", "68.05", "62.60", "41.43", "114.73", "19.19"):
            assert number in footnotes
        assert "not a target" in footnotes
        # the numbers appear nowhere as assertions: trend verdicts carry no
        # reference magnitudes, only replicate counts
        for trend in meta["trends"].values():
            assert set(trend) == {"passed_replicates", "total_replicates", "usable_replicates", "verdict"}
        verdict(1, "detail=reference-numbers-footnoted-not-asserted")


class TestCriterion2GradientSuite:
    def test_ops_and_encoders_over_twenty_seeds(self):
        start = time.perf_counter()
        results = run_suite(n_seeds=20, include_encoders=True)
        elapsed = time.perf_counter() - start
        failures = [r for r in results if not r.passed]
        assert not failures, failures
        op_worst = max(r.max_rel_err for r in results if r.tolerance == OP_TOLERANCE)
        enc_worst = max(r.max_rel_err for r in results if r.tolerance == ENCODER_TOLERANCE)
        assert op_worst < 1e-4
        assert enc_worst < 1e-3
        assert elapsed < 60.0
        verdict(
            2,
            f"detail=checks={len(results)} op_worst={op_worst:.2e} "
            f"encoder_worst={enc_worst:.2e} runtime={elapsed:.1f}s",
        )


class TestCriterion3GeometryOracles:
    def test_volume_oracles_and_renderer_round_trip(self, default_dataset):
        start = time.perf_counter()
        cube = generate_mesh(ShapeSpec(ShapeKind.BOX, {"half_x": 0.5, "half_y": 0.5, "half_z": 0.5}))
        assert abs(mesh_volume(cube) - 1.0) < 1e-12
        cases = [
            (ShapeSpec(ShapeKind.SPHERE, {"radius": 1.0}, 3), 0.02),
            (ShapeSpec(ShapeKind.ELLIPSOID, {"semi_x": 1.2, "semi_y": 0.9, "semi_z": 1.5}, 3), 0.02),
            (ShapeSpec(ShapeKind.CYLINDER, {"radius": 1.0, "height": 2.0}, 64), 0.01),
            (ShapeSpec(ShapeKind.CONE, {"radius": 1.1, "height": 1.8}, 64), 0.01),
        ]
        for spec, tol in cases:
            got = mesh_volume(generate_mesh(spec))
            want = analytic_volume(spec)
            assert abs(got - want) / want < tol, spec.kind

        config, manifest = default_dataset
        K = config.intrinsics()
        rng = np.random.default_rng(0)
        worst_margin = np.inf
        for sample in manifest.samples:
            scene = scene_params(config, sample.id)
            food_class = config.classes[scene.class_id]
            mesh, pose, _, _, _ = render_scene(config, scene, food_class)
            depth = read_depth(manifest.path(sample.depth))
            mask = read_pgm(manifest.path(sample.mask))
            cloud = backproject_pinhole(depth, mask, K)
            keep = rng.choice(len(cloud), size=min(200, len(cloud)), replace=False)
            cam_pts = cloud.points[keep]
            world = (cam_pts - pose.translation) @ pose.rotation
            # 64 candidate triangles: cylinder side triangles are long and
            # thin, so centroid pruning needs the wider net
            dist = point_to_mesh_distance(world, mesh, candidates=64)
            bound = 2.0 * cam_pts[:, 2] / min(K.fx, K.fy)
            margin = float((bound - dist).min())
            worst_margin = min(worst_margin, margin)
            assert np.all(dist <= bound), f"sample {sample.id}"
        elapsed = time.perf_counter() - start
        assert elapsed < 60.0
        verdict(3, f"detail=round_trip_worst_margin={worst_margin:.2e} runtime={elapsed:.1f}s")


class TestCriterion4MetricsExactness:
    def test_metrics_match_brute_force(self):
        rng = np.random.default_rng(123)
        preds = rng.normal(150.0, 80.0, size=1000)
        gts = rng.uniform(5.0, 400.0, size=1000)
        slow_mae = sum(abs(p - g) for p, g in zip(preds, gts)) / 1000.0
        slow_mape = 100.0 * sum(abs(p - g) / g for p, g in zip(preds, gts)) / 1000.0
        assert abs(mae(preds, gts) - slow_mae) < 1e-9
        assert abs(mape(preds, gts) - slow_mape) < 1e-9
        with pytest.raises(ConfigError):
            mape([1.0, 2.0], [3.0, 0.0])
        targets = rng.uniform(20, 500, size=300)
        baseline = fit_baseline(targets)
        mad = sum(abs(t - targets.mean()) for t in targets) / 300.0
        got = mae(np.full(300, baseline.constant), targets)
        assert abs(got - mad) < 1e-9
        verdict(4, "detail=mae/mape/baseline-match-brute-force-at-1e-9")


class TestCriterion5EndToEndLearning:
    def test_default_dataset_volume_and_energy_models(self, default_dataset, tmp_path):
        _, manifest = default_dataset
        assert len(manifest.samples) == 500
        assert len(manifest.split_samples("train")) == 400
        assert len(manifest.split_samples("test")) == 100
        # the stored ground-truth clouds carry 1024 points end to end
        ply = tmp_path / "s0.ply"
        assert (
            main(
                [
                    "reconstruct",
                    "--manifest", str(manifest.root / "manifest.json"),
                    "--sample", "0",
                    "--variant", "gtpc",
                    "--out", str(ply),
                ]
            )
            == 0
        )
        assert len(read_ply(ply)) == 1024
        start = time.perf_counter()
        results = {}
        caches = {}
        for attribute, ceiling in (("volume", 20.0), ("energy", 25.0)):
            config = TrainConfig(attribute=attribute)  # defaults: gtpc + RGB, 60 epochs
            assert config.epochs == 60 and config.modality == "pc_rgb" and config.variant == "gtpc"
            if "train" not in caches:
                caches["train"] = build_cache(manifest, config, "train")
                caches["test"] = build_cache(manifest, config, "test")
            ckpt = train(manifest, config, cache=caches["train"])
            row = evaluate(ckpt, manifest, "test", cache=caches["test"])
            results[attribute] = row
            assert row.mape <= ceiling, f"{attribute} MAPE {row.mape:.2f}% exceeds {ceiling}%"
        elapsed = time.perf_counter() - start
        assert elapsed < 15 * 60.0
        verdict(
            5,
            f"detail=volume_mape={results['volume'].mape:.2f}% "
            f"energy_mape={results['energy'].mape:.2f}% runtime={elapsed / 60.0:.1f}min",
        )


class TestCriterion6AblationTrends:
    def test_five_replicate_trends(self, default_dataset, tmp_path):
        _, manifest = default_dataset
        start = time.perf_counter()
        code = main(
            [
                "ablate",
                "--manifest", str(manifest.root / "manifest.json"),
                "--out", str(tmp_path / "report"),
                "--replicates", "5",
            ]
        )
        elapsed = time.perf_counter() - start
        assert code == 0
        meta = json.loads((tmp_path / "report" / "report.json").read_text())
        counts = {}
        for name in ("trend_a", "trend_b", "trend_c"):
            trend = meta["trends"][name]
            assert trend["total_replicates"] == 5
            assert trend["passed_replicates"] >= 4, f"{name}: {trend}"
            assert trend["verdict"] == "pass"
            counts[name] = trend["passed_replicates"]
        assert elapsed < 2 * 3600.0
        # every trained model beats the mean baseline on its attribute
        csv_lines = (tmp_path / "report" / "report.csv").read_text().splitlines()[1:]
        rows = [line.split(",") for line in csv_lines]
        baseline_mape = {
            row[2]: float(row[4]) for row in rows if row[0] == "baseline"
        }
        for row in rows:
            if row[0] != "baseline":
                assert row[6] == "ok", row
                assert float(row[4]) < baseline_mape[row[2]], row
        verdict(
            6,
            f"detail=trend_a={counts['trend_a']}/5 trend_b={counts['trend_b']}/5 "
            f"trend_c={counts['trend_c']}/5 runtime={elapsed / 60.0:.1f}min",
        )


class TestCriterion7Determinism:
    def test_manifests_checkpoints_reports_reproduce(self, tmp_path):
        gen = GeneratorConfig(n_samples=8, seed=17, image_size=16, n_points=64)
        roots = []
        for name in ("a", "b"):
            out = tmp_path / name
            build_dataset(gen, out)
            roots.append(out)
        files_a = {p.name: p.read_bytes() for p in sorted(roots[0].iterdir())}
        files_b = {p.name: p.read_bytes() for p in sorted(roots[1].iterdir())}
        assert files_a == files_b

        config = TrainConfig(
            attribute="volume", modality="pc_rgb", variant="depth_lift",
            batch_size=4, epochs=2, lr=0.01, seed=3,
            feature_dim=4, k_neighbors=3, n_points=64,
            mlp_widths=(6, 6), conv_channels=(2, 3), image_size=16,
        )
        from portion3d.dataset import load_manifest

        manifest = load_manifest(roots[0] / "manifest.json")
        blobs = []
        rows = []
        for name in ("m1.ckpt", "m2.ckpt"):
            ckpt = train(manifest, config)
            save_checkpoint(ckpt, tmp_path / name)
            blobs.append((tmp_path / name).read_bytes())
            row = evaluate(ckpt, manifest, "test")
            rows.append((row.mae, row.mape))
        assert blobs[0] == blobs[1]
        assert rows[0] == rows[1]
        verdict(7, "detail=manifest+checkpoint+report-bytes-identical-across-reruns")


class TestCriterion8FormatRoundTrips:
    def test_round_trips_and_error_exit_codes(self, tiny_dataset, tmp_path):
        rng = np.random.default_rng(9)
        # randomized file round trips (bit-exact) are covered in depth by
        # test_formats; here one randomized pass per format plus exit codes
        cloud = PointCloud(rng.normal(0, 5, size=(33, 3)).astype(np.float32).astype(np.float64))
        ply = tmp_path / "c.ply"
        write_ply(cloud, ply)
        np.testing.assert_array_equal(read_ply(ply).points, cloud.points)

        _, manifest = tiny_dataset
        sample = manifest.samples[0]
        for reader, rel in (
            (read_obj, sample.mesh),
            (read_depth, sample.depth),
            (read_pgm, sample.mask),
            (read_ply, sample.gtpc),
        ):
            path = manifest.path(rel)
            reader(path)  # parses clean
            corrupt = tmp_path / path.name
            raw = bytearray(path.read_bytes())
            raw[0] ^= 0x5A
            corrupt.write_bytes(bytes(raw))
            with pytest.raises(FormatError):
                reader(corrupt)

        # exit code 2: malformed config JSON with position info
        bad = tmp_path / "bad.json"
        bad.write_text("{broken")
        assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
        # exit code 3: corrupt checkpoint magic
        fake = tmp_path / "fake.ckpt"
        fake.write_bytes(b"NOTMAGIC" + bytes(16))
        assert main(["eval", "--ckpt", str(fake), "--manifest", str(manifest.root / "manifest.json")]) == 3
        # exit code 4: unknown variant
        assert (
            main(
                [
                    "reconstruct",
                    "--manifest", str(manifest.root / "manifest.json"),
                    "--sample", "0",
                    "--variant", "nope",
                    "--out", str(tmp_path / "o.ply"),
                ]
            )
            == 4
        )
        verdict(8, "detail=round-trips-bit-exact-and-documented-exit-codes")
