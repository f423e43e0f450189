"""Synthetic eating-occasion generator with analytic ground truth.

Each sample is one parametric solid ("food object") with a class that
fixes its albedo color and energy density. The scene is rendered with a
pinhole camera to RGB + depth + mask; the ground-truth point cloud is
sampled directly from the mesh surface; volume comes from the signed
tetrahedron sum, cross-checked against the closed form, and energy is
exactly volume times the class energy density.

Camera framing keeps the projected object between ``fill_lo`` and
``fill_hi`` of the frame width, scaling apparent size with true size so
the image carries a (coarse) scale cue while even the smallest object
still covers enough pixels to lift a full point cloud from its depth map.

Shape kind is drawn independently of class: only color identifies the
class, so energy density is invisible to any pure-geometry branch.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, GeometryError
from .formats import write_depth, write_obj, write_pgm, write_ply, write_ppm
from .geometry import CameraIntrinsics, mesh_volume, sample_mesh_surface
from .render import look_at_pose, render
from .shapes import ShapeKind, ShapeSpec, generate_mesh

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
LIGHT_DIR = (0.35, 0.25, 0.88)

# seed-stream tags so every random decision has its own substream
_TAG_SHAPE = 0x51
_TAG_CAMERA = 0xCA
_TAG_GTPC = 0x6C
_TAG_SPLIT = 0x5B117
_TAG_DEPTH_NOISE = 0xD0
_TAG_SUBSAMPLE = 0x5B


@dataclass(frozen=True)
class FoodClass:
    id: int
    name: str
    energy_density: float  # kCal per ml
    albedo: tuple

    def __post_init__(self):
        if self.energy_density <= 0:
            raise ConfigError(f"class {self.name!r} needs positive energy density")
        if len(self.albedo) != 3 or any(not (0 <= c <= 1) for c in self.albedo):
            raise ConfigError(f"class {self.name!r} albedo must be an RGB triple in [0,1]")


DEFAULT_CLASSES = (
    FoodClass(0, "leaf_salad", 1.0, (0.20, 0.75, 0.22)),
    FoodClass(1, "steamed_rice", 1.15, (0.92, 0.90, 0.80)),
    FoodClass(2, "pasta_bake", 1.35, (0.95, 0.78, 0.25)),
    FoodClass(3, "rye_bread", 1.6, (0.62, 0.40, 0.18)),
    FoodClass(4, "berry_cheesecake", 1.9, (0.88, 0.35, 0.55)),
)


@dataclass(frozen=True)
class GeneratorConfig:
    """Dataset-level knobs; the defaults build the standard 500-sample set."""

    n_samples: int = 500
    split_fraction: float = 0.8
    seed: int = 0
    image_size: int = 96
    focal_px: float = 120.0
    n_points: int = 1024
    fill_lo: float = 0.48
    fill_hi: float = 0.96
    size_ratio: float = 4.0
    base_size: float = 1.0
    classes: tuple = DEFAULT_CLASSES

    def __post_init__(self):
        if self.n_samples < 2:
            raise ConfigError("n_samples must be >= 2")
        if not (0.0 < self.split_fraction < 1.0):
            raise ConfigError("split_fraction must be in (0, 1)")
        if self.image_size < 8:
            raise ConfigError("image_size must be >= 8")
        if not (0 < self.fill_lo <= self.fill_hi <= 1.0):
            raise ConfigError("need 0 < fill_lo <= fill_hi <= 1")
        if self.size_ratio <= 1:
            raise ConfigError("size_ratio must exceed 1")
        if self.base_size <= 0:
            raise ConfigError("base_size must be positive")
        ids = [c.id for c in self.classes]
        if len(set(ids)) != len(ids):
            raise ConfigError("class ids must be distinct")
        albedos = {tuple(c.albedo) for c in self.classes}
        if len(albedos) != len(self.classes):
            raise ConfigError("class albedos must be distinct")

    def intrinsics(self) -> CameraIntrinsics:
        half = (self.image_size - 1) / 2.0
        return CameraIntrinsics(
            fx=self.focal_px,
            fy=self.focal_px,
            cx=half,
            cy=half,
            width=self.image_size,
            height=self.image_size,
        )


_KINDS = (ShapeKind.SPHERE, ShapeKind.BOX, ShapeKind.CYLINDER, ShapeKind.ELLIPSOID, ShapeKind.CONE)


def _draw_shape(
    rng: np.random.Generator, size_ratio: float, base_size: float = 1.0
) -> tuple[ShapeSpec, float]:
    """Random solid: kind uniform, base scale log-uniform over size_ratio.

    The returned relative scale in [1, size_ratio] drives camera framing;
    base_size only multiplies the physical size parameters.
    """
    kind = _KINDS[rng.integers(len(_KINDS))]
    rel = math.exp(rng.uniform(0.0, math.log(size_ratio)))
    scale = rel * base_size

    def jitter():
        return rng.uniform(0.85, 1.15)

    if kind is ShapeKind.SPHERE:
        params = {"radius": 1.9 * scale * jitter()}
    elif kind is ShapeKind.BOX:
        params = {
            "half_x": 1.7 * scale * jitter(),
            "half_y": 1.7 * scale * jitter(),
            "half_z": 1.3 * scale * jitter(),
        }
    elif kind is ShapeKind.CYLINDER:
        params = {"radius": 1.6 * scale * jitter(), "height": 3.2 * scale * jitter()}
    elif kind is ShapeKind.ELLIPSOID:
        params = {
            "semi_x": 2.1 * scale * jitter(),
            "semi_y": 1.7 * scale * jitter(),
            "semi_z": 1.4 * scale * jitter(),
        }
    else:
        params = {"radius": 2.0 * scale * jitter(), "height": 2.6 * scale * jitter()}
    return ShapeSpec(kind, params), rel


@dataclass
class SceneParams:
    """Everything deterministic about one sample before rendering."""

    sample_id: int
    class_id: int
    spec: ShapeSpec
    scale: float
    azimuth: float
    elevation: float
    fill: float


@dataclass
class SampleRecord:
    """One generated sample plus its target attributes."""

    id: int
    class_id: int
    split: str
    volume_ml: float
    energy_kcal: float
    image: str
    depth: str
    mask: str
    mesh: str
    gtpc: str

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "class_id": self.class_id,
            "split": self.split,
            "volume_ml": self.volume_ml,
            "energy_kcal": self.energy_kcal,
            "image": self.image,
            "depth": self.depth,
            "mask": self.mask,
            "mesh": self.mesh,
            "gtpc": self.gtpc,
        }


@dataclass
class DatasetManifest:
    version: int
    seed: int
    classes: list
    samples: list
    root: Path = field(default=Path("."))

    def class_by_id(self, class_id: int) -> FoodClass:
        for c in self.classes:
            if c.id == class_id:
                return c
        raise ConfigError(f"unknown class id {class_id}")

    def sample_by_id(self, sample_id: int) -> SampleRecord:
        for s in self.samples:
            if s.id == sample_id:
                return s
        raise ConfigError(f"unknown sample id {sample_id}")

    def split_samples(self, split: str) -> list:
        return [s for s in self.samples if s.split == split]

    def path(self, relative: str) -> Path:
        return self.root / relative


def scene_params(config: GeneratorConfig, sample_id: int) -> SceneParams:
    """Deterministic scene draw for one sample id.

    This is the single source of the per-sample randomness: dataset
    construction calls it, and tests can call it again to recover the
    camera for a stored sample.
    """
    shape_rng = np.random.default_rng(
        np.random.SeedSequence([config.seed & 0xFFFFFFFF, sample_id, _TAG_SHAPE])
    )
    cam_rng = np.random.default_rng(
        np.random.SeedSequence([config.seed & 0xFFFFFFFF, sample_id, _TAG_CAMERA])
    )
    spec, scale = _draw_shape(shape_rng, config.size_ratio, config.base_size)
    azimuth = cam_rng.uniform(0.0, 2.0 * math.pi)
    elevation = cam_rng.uniform(math.radians(30.0), math.radians(55.0))
    # apparent size scales with sqrt of the true scale: fill fraction
    # fill_lo * (scale ** gamma) with gamma chosen so the largest scale
    # lands on fill_hi
    gamma = math.log(config.fill_hi / config.fill_lo) / math.log(config.size_ratio)
    fill = config.fill_lo * scale**gamma
    return SceneParams(sample_id, sample_id % len(config.classes), spec, scale, azimuth, elevation, fill)


def _camera_distance(bound_radius: float, fill: float, config: GeneratorConfig) -> float:
    # exact apparent bounding-circle fit: 2 * fx * r / sqrt(d^2 - r^2) = fill * W
    ratio = 2.0 * config.focal_px / (fill * config.image_size)
    return bound_radius * math.sqrt(1.0 + ratio * ratio)


def _camera_position(distance: float, azimuth: float, elevation: float) -> np.ndarray:
    ce = math.cos(elevation)
    return distance * np.array(
        [ce * math.cos(azimuth), ce * math.sin(azimuth), math.sin(elevation)]
    )


def render_scene(config: GeneratorConfig, scene: SceneParams, food_class: FoodClass):
    """Render one scene, nudging the camera closer until the foreground
    covers enough pixels to lift a full point cloud from the depth map."""
    mesh = generate_mesh(scene.spec)
    # quantize vertices to float32 so the OBJ file reproduces the mesh
    # (and therefore the manifest volume) bit-exactly
    mesh = type(mesh)(mesh.vertices.astype(np.float32).astype(np.float64), mesh.triangles)
    bound_radius = float(np.linalg.norm(mesh.vertices, axis=1).max())
    K = config.intrinsics()
    min_pixels = int(config.n_points * 1.15)
    distance = _camera_distance(bound_radius, scene.fill, config)
    for _ in range(12):
        pose = look_at_pose(_camera_position(distance, scene.azimuth, scene.elevation))
        image, depth, mask = render(mesh, K, pose, albedo=food_class.albedo, light_dir=LIGHT_DIR)
        if int(mask.values.sum()) >= min_pixels:
            return mesh, pose, image, depth, mask
        distance *= 0.88
    raise GeometryError(
        f"sample {scene.sample_id}: foreground stayed below {min_pixels} pixels"
    )


def _splits(config: GeneratorConfig) -> list:
    rng = np.random.default_rng(
        np.random.SeedSequence([config.seed & 0xFFFFFFFF, _TAG_SPLIT])
    )
    order = rng.permutation(config.n_samples)
    n_train = int(round(config.n_samples * config.split_fraction))
    n_train = min(max(n_train, 1), config.n_samples - 1)
    split = ["test"] * config.n_samples
    for i in order[:n_train]:
        split[i] = "train"
    return split


def depth_noise_seed(manifest_seed: int, sample_id: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([manifest_seed & 0xFFFFFFFF, sample_id, _TAG_DEPTH_NOISE])


def subsample_seed(manifest_seed: int, sample_id: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([manifest_seed & 0xFFFFFFFF, sample_id, _TAG_SUBSAMPLE])


def build_dataset(config: GeneratorConfig, out_dir) -> DatasetManifest:
    """Generate all samples and write media plus manifest.json under out_dir.

    Identical config + seed produces byte-identical files. Volume comes
    from the mesh (signed tetrahedra); energy is exactly volume times the
    class energy density.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    splits = _splits(config)
    samples = []
    for sample_id in range(config.n_samples):
        scene = scene_params(config, sample_id)
        food_class = config.classes[scene.class_id]
        mesh, pose, image, depth, mask = render_scene(config, scene, food_class)
        volume = mesh_volume(mesh)
        energy = volume * food_class.energy_density
        gtpc = sample_mesh_surface(
            mesh,
            config.n_points,
            np.random.SeedSequence([config.seed & 0xFFFFFFFF, sample_id, _TAG_GTPC]),
        )
        stem = f"sample_{sample_id:04d}"
        record = SampleRecord(
            id=sample_id,
            class_id=scene.class_id,
            split=splits[sample_id],
            volume_ml=volume,
            energy_kcal=energy,
            image=f"{stem}.ppm",
            depth=f"{stem}.depth",
            mask=f"{stem}.pgm",
            mesh=f"{stem}.obj",
            gtpc=f"{stem}.ply",
        )
        write_ppm(image, out / record.image)
        write_depth(depth, out / record.depth)
        write_pgm(mask, out / record.mask)
        write_obj(mesh, out / record.mesh)
        write_ply(gtpc, out / record.gtpc)
        samples.append(record)
    manifest = DatasetManifest(
        version=MANIFEST_VERSION,
        seed=config.seed,
        classes=list(config.classes),
        samples=samples,
        root=out,
    )
    save_manifest(manifest, out / MANIFEST_NAME)
    return manifest


def save_manifest(manifest: DatasetManifest, path) -> None:
    doc = {
        "version": manifest.version,
        "seed": manifest.seed,
        "classes": [
            {
                "id": c.id,
                "name": c.name,
                "energy_density": c.energy_density,
                "albedo": list(c.albedo),
            }
            for c in manifest.classes
        ],
        "samples": [s.to_json_dict() for s in manifest.samples],
    }
    Path(path).write_bytes(
        (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode("utf-8")
    )


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_bytes().decode("utf-8"))
    except OSError as exc:
        raise OSError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}") from exc
    for key in ("version", "seed", "classes", "samples"):
        if key not in doc:
            raise ConfigError(f"{path}: manifest lacks key {key!r}")
    classes = [
        FoodClass(c["id"], c["name"], c["energy_density"], tuple(c["albedo"]))
        for c in doc["classes"]
    ]
    samples = [
        SampleRecord(
            id=s["id"],
            class_id=s["class_id"],
            split=s["split"],
            volume_ml=s["volume_ml"],
            energy_kcal=s["energy_kcal"],
            image=s["image"],
            depth=s["depth"],
            mask=s["mask"],
            mesh=s["mesh"],
            gtpc=s["gtpc"],
        )
        for s in doc["samples"]
    ]
    for s in samples:
        if s.split not in ("train", "test"):
            raise ConfigError(f"{path}: sample {s.id} has bad split {s.split!r}")
    return DatasetManifest(
        version=doc["version"],
        seed=doc["seed"],
        classes=classes,
        samples=samples,
        root=path.parent,
    )


_GENERATOR_KEYS = {
    "n_samples": int,
    "split_fraction": float,
    "seed": int,
    "image_size": int,
    "focal_px": float,
    "n_points": int,
    "fill_lo": float,
    "fill_hi": float,
    "size_ratio": float,
    "base_size": float,
    "classes": list,
}


def generator_config_from_dict(doc: dict) -> GeneratorConfig:
    """Validate a JSON-level generator config; unknown keys are rejected."""
    if not isinstance(doc, dict):
        raise ConfigError("generator config must be a JSON object")
    unknown = set(doc) - set(_GENERATOR_KEYS)
    if unknown:
        raise ConfigError(f"unknown generator config keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in doc.items():
        expected = _GENERATOR_KEYS[key]
        if expected in (int, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"config key {key!r} must be a number")
            kwargs[key] = expected(value)
        elif key == "classes":
            if not isinstance(value, list) or not value:
                raise ConfigError("classes must be a non-empty array")
            try:
                kwargs["classes"] = tuple(
                    FoodClass(c["id"], c["name"], c["energy_density"], tuple(c["albedo"]))
                    for c in value
                )
            except (KeyError, TypeError) as exc:
                raise ConfigError(f"malformed class entry: {exc}") from exc
    return GeneratorConfig(**kwargs)
