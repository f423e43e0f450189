"""Regression head, end-to-end training loop, and checkpointing.

One model is trained per target attribute (volume or energy): swapping the
attribute changes only the labels, never the input tensors, which is why
the checkpoint records a digest of the inputs it was trained on.

Stage 1 of the forward pipeline selects the point-cloud variant:
  gtpc             the stored metric ground-truth cloud, used as-is
  gtpc_normalized  the stored cloud rescaled into the unit cube
  depth_lift       rendered depth with multiplicative noise, lifted to a
                   pixel/depth cloud, normalized, then subsampled to n
Noise and subsampling seeds derive from (dataset seed, sample id), so a
sample's reconstructed cloud is the same in every run that shares the
dataset.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, ParameterSet, Tape, Tensor, backward, seeded_init
from .dataset import DatasetManifest, SampleRecord, depth_noise_seed, subsample_seed
from .encoders import (
    ImageEncoderConfig,
    PointEncoderConfig,
    concat_features,
    encode_image_batch,
    encode_points_batch,
    image_to_array,
    init_image_encoder,
    init_point_encoder,
    point_encoder_inputs,
)
from .errors import ConfigError, DimensionMismatchError, FormatError, NumericalError
from .formats import (
    build_checkpoint_header,
    read_checkpoint_blob,
    read_depth,
    read_pgm,
    read_ply,
    read_ppm,
    write_checkpoint_blob,
)
from .geometry import Frame, NormalizeMode, lift_depth, normalize_unit_cube, subsample
from .render import perturb_depth

ATTRIBUTES = ("volume", "energy")
MODALITIES = ("pc_only", "pc_rgb")
VARIANTS = ("gtpc", "gtpc_normalized", "depth_lift")


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run depends on besides the dataset itself."""

    attribute: str = "volume"
    modality: str = "pc_rgb"
    variant: str = "gtpc"
    batch_size: int = 16
    epochs: int = 60
    optimizer: str = "adam"
    lr: float = 1e-2
    seed: int = 0
    feature_dim: int = 64
    k_neighbors: int = 16
    n_points: int = 1024
    mlp_widths: tuple = (64, 64)
    conv_channels: tuple = (8, 16, 32)
    image_size: int = 96
    depth_noise_sigma: float = 0.05

    def __post_init__(self):
        if self.attribute not in ATTRIBUTES:
            raise ConfigError(f"attribute must be one of {ATTRIBUTES}, got {self.attribute!r}")
        if self.modality not in MODALITIES:
            raise ConfigError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.depth_noise_sigma < 0:
            raise ConfigError("depth_noise_sigma must be >= 0")

    @property
    def uses_image(self) -> bool:
        return self.modality == "pc_rgb"

    @property
    def head_dim(self) -> int:
        return 2 * self.feature_dim if self.uses_image else self.feature_dim

    def image_encoder_config(self) -> ImageEncoderConfig:
        return ImageEncoderConfig(
            input_size=self.image_size,
            conv_channels=tuple(self.conv_channels),
            feature_dim=self.feature_dim,
        )

    def point_encoder_config(self) -> PointEncoderConfig:
        return PointEncoderConfig(
            n_points=self.n_points,
            k_neighbors=self.k_neighbors,
            mlp_widths=tuple(self.mlp_widths),
            feature_dim=self.feature_dim,
        )

    def to_dict(self) -> dict:
        return {
            "attribute": self.attribute,
            "modality": self.modality,
            "variant": self.variant,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "optimizer": self.optimizer,
            "lr": self.lr,
            "seed": self.seed,
            "feature_dim": self.feature_dim,
            "k_neighbors": self.k_neighbors,
            "n_points": self.n_points,
            "mlp_widths": list(self.mlp_widths),
            "conv_channels": list(self.conv_channels),
            "image_size": self.image_size,
            "depth_noise_sigma": self.depth_noise_sigma,
        }


_TRAIN_KEYS = set(TrainConfig().to_dict())


def train_config_from_dict(doc: dict) -> TrainConfig:
    """Build a TrainConfig from JSON, rejecting unknown keys."""
    if not isinstance(doc, dict):
        raise ConfigError("train config must be a JSON object")
    unknown = set(doc) - _TRAIN_KEYS
    if unknown:
        raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
    kwargs = dict(doc)
    for key in ("mlp_widths", "conv_channels"):
        if key in kwargs:
            if not isinstance(kwargs[key], (list, tuple)):
                raise ConfigError(f"{key} must be an array")
            kwargs[key] = tuple(kwargs[key])
    try:
        return TrainConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad train config value: {exc}") from exc


@dataclass
class RegressionHead:
    """Linear map from a feature vector to one scalar portion value."""

    weights: Tensor
    bias: Tensor


def predict_portion(features: Tensor, head: RegressionHead) -> Tensor:
    """w . f + b as a differentiable scalar tensor."""
    if features.shape != head.weights.shape:
        raise DimensionMismatchError(
            f"feature shape {features.shape} does not match head {head.weights.shape}"
        )
    return ad.add(ad.sum_all(ad.mul(features, head.weights)), head.bias)


def build_parameters(config: TrainConfig, dtype=np.float32) -> ParameterSet:
    """All trainable tensors for the configured modality, in a fixed order.

    Encoders use seeded fan-in initialization; the head starts at zero so
    first predictions are exactly the head bias (zero).
    """
    params = ParameterSet()
    if config.uses_image:
        image_params = init_image_encoder(config.image_encoder_config(), config.seed, dtype)
        for name, tensor in image_params.items():
            params.add(name, tensor)
    point_params = init_point_encoder(config.point_encoder_config(), config.seed, dtype)
    for name, tensor in point_params.items():
        params.add(name, tensor)
    params.add("head.w", seeded_init((config.head_dim, 1), "zeros", 0, dtype=dtype))
    params.add("head.b", seeded_init((1,), "zeros", 0, dtype=dtype))
    return params


def head_view(params: ParameterSet) -> RegressionHead:
    w = params["head.w"]
    return RegressionHead(weights=ad.reshape(w, (w.shape[0],)), bias=ad.reshape(params["head.b"], ()))


def variant_cloud(manifest: DatasetManifest, sample: SampleRecord, config: TrainConfig):
    """Stage 1: construct the configured point-cloud variant for a sample."""
    gtpc_path = manifest.path(sample.gtpc)
    if config.variant == "gtpc":
        cloud = read_ply(gtpc_path, frame=Frame.METRIC)
        _check_point_count(cloud, config, sample)
        return cloud
    if config.variant == "gtpc_normalized":
        cloud = read_ply(gtpc_path, frame=Frame.METRIC)
        _check_point_count(cloud, config, sample)
        return normalize_unit_cube(cloud, NormalizeMode.PER_AXIS)
    depth = read_depth(manifest.path(sample.depth))
    mask = read_pgm(manifest.path(sample.mask))
    noisy = perturb_depth(depth, config.depth_noise_sigma, depth_noise_seed(manifest.seed, sample.id))
    lifted = lift_depth(noisy, mask)
    normalized = normalize_unit_cube(lifted, NormalizeMode.PER_AXIS)
    return subsample(normalized, config.n_points, subsample_seed(manifest.seed, sample.id))


def _check_point_count(cloud, config: TrainConfig, sample: SampleRecord):
    if len(cloud) != config.n_points:
        raise FormatError(
            f"sample {sample.id}: stored cloud has {len(cloud)} points, "
            f"config expects {config.n_points}"
        )


def _batch_forward(point_in: Tensor, image_in, params: ParameterSet, config: TrainConfig) -> Tensor:
    f_points = encode_points_batch(point_in, params, config.point_encoder_config())
    if config.uses_image:
        f_image = encode_image_batch(image_in, params, config.image_encoder_config())
        fused = concat_features(f_image, f_points)
    else:
        fused = f_points
    pred = ad.matmul(fused, params["head.w"])
    pred = ad.add(pred, params["head.b"])
    return ad.reshape(pred, (point_in.shape[0],))


def forward_pipeline(
    manifest: DatasetManifest,
    sample: SampleRecord,
    params: ParameterSet,
    config: TrainConfig,
) -> Tensor:
    """Full Stage 1 -> 2 -> 3 forward pass for one sample; scalar output."""
    cloud = variant_cloud(manifest, sample, config)
    point_in = Tensor(point_encoder_inputs(cloud, config.point_encoder_config())[None])
    image_in = None
    if config.uses_image:
        image = read_ppm(manifest.path(sample.image))
        image_in = Tensor(image_to_array(image, config.image_encoder_config())[None])
    pred = _batch_forward(point_in, image_in, params, config)
    return ad.reshape(pred, ())


@dataclass
class SampleCache:
    """Preprocessed encoder inputs for one split, sorted by sample id."""

    ids: np.ndarray
    volumes: np.ndarray
    energies: np.ndarray
    point_inputs: np.ndarray
    images: np.ndarray | None

    def targets(self, attribute: str) -> np.ndarray:
        if attribute == "volume":
            return self.volumes
        if attribute == "energy":
            return self.energies
        raise ConfigError(f"unknown attribute {attribute!r}")

    def input_digest(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.ids.tobytes())
        digest.update(self.point_inputs.tobytes())
        if self.images is not None:
            digest.update(self.images.tobytes())
        return digest.hexdigest()


def build_cache(manifest: DatasetManifest, config: TrainConfig, split: str) -> SampleCache:
    samples = sorted(manifest.split_samples(split), key=lambda s: s.id)
    if not samples:
        raise ConfigError(f"manifest has no {split!r} samples")
    pcfg = config.point_encoder_config()
    icfg = config.image_encoder_config() if config.uses_image else None
    point_rows = np.empty((len(samples), pcfg.n_points, pcfg.input_dim), dtype=np.float32)
    images = (
        np.empty((len(samples), 3, icfg.input_size, icfg.input_size), dtype=np.float32)
        if icfg
        else None
    )
    for row, sample in enumerate(samples):
        cloud = variant_cloud(manifest, sample, config)
        point_rows[row] = point_encoder_inputs(cloud, pcfg)
        if icfg:
            images[row] = image_to_array(read_ppm(manifest.path(sample.image)), icfg)
    return SampleCache(
        ids=np.array([s.id for s in samples], dtype=np.int64),
        volumes=np.array([s.volume_ml for s in samples], dtype=np.float32),
        energies=np.array([s.energy_kcal for s in samples], dtype=np.float32),
        point_inputs=point_rows,
        images=images,
    )


@dataclass
class Checkpoint:
    """Config echo, trained parameters, per-epoch train loss history."""

    config: TrainConfig
    parameters: dict
    history: list
    input_digest: str
    manifest_seed: int

    def parameter_set(self) -> ParameterSet:
        params = ParameterSet()
        for name, arr in self.parameters.items():
            params.add(name, Tensor(arr.copy(), requires_grad=True, dtype=np.float32))
        return params


def train(manifest: DatasetManifest, config: TrainConfig, cache: SampleCache | None = None) -> Checkpoint:
    """Mini-batch L1 training over the train split; returns the checkpoint.

    Batches are reshuffled every epoch from the config seed, so identical
    (dataset, config) runs reproduce the loss history and the final
    parameters bit for bit. A non-finite loss aborts immediately, naming
    the epoch, step and sample ids of the offending batch.
    """
    if cache is None:
        cache = build_cache(manifest, config, "train")
    targets_all = cache.targets(config.attribute)
    n = len(cache.ids)
    params = build_parameters(config)
    adam = AdamState()
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence([config.seed & 0xFFFFFFFF, 0xBA7C4])
    )
    history = []
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for step, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            point_in = Tensor(cache.point_inputs[idx])
            image_in = Tensor(cache.images[idx]) if config.uses_image else None
            target = Tensor(targets_all[idx])
            with Tape() as tape:
                pred = _batch_forward(point_in, image_in, params, config)
                loss = ad.l1_loss(pred, target)
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise NumericalError(
                    f"non-finite loss {loss_value} at epoch {epoch} step {step} "
                    f"(samples {cache.ids[idx].tolist()})",
                    epoch=epoch,
                    step=step,
                    sample_ids=cache.ids[idx].tolist(),
                )
            backward(loss, tape)
            if config.optimizer == "adam":
                ad.adam_step(params, config.lr, adam)
            else:
                ad.sgd_step(params, config.lr)
            loss_sum += loss_value * len(idx)
        history.append(loss_sum / n)
    return Checkpoint(
        config=config,
        parameters={name: p.data.copy() for name, p in params.items()},
        history=history,
        input_digest=cache.input_digest(),
        manifest_seed=manifest.seed,
    )


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    names_shapes = [(name, arr.shape) for name, arr in ckpt.parameters.items()]
    meta = {
        "version": 1,
        "config": ckpt.config.to_dict(),
        "history": [float(h) for h in ckpt.history],
        "input_digest": ckpt.input_digest,
        "manifest_seed": ckpt.manifest_seed,
    }
    header = build_checkpoint_header(names_shapes, meta)
    write_checkpoint_blob(header, list(ckpt.parameters.values()), path)


def load_checkpoint(path) -> Checkpoint:
    header, arrays = read_checkpoint_blob(path)
    for key in ("config", "history", "input_digest", "manifest_seed"):
        if key not in header:
            raise FormatError(f"{path}: checkpoint header lacks {key!r}")
    config = train_config_from_dict(header["config"])
    names = [entry["name"] for entry in header["parameters"]]
    parameters = dict(zip(names, arrays))
    expected = [(name, tuple(p.shape)) for name, p in build_parameters(config).items()]
    found = [(name, tuple(arr.shape)) for name, arr in parameters.items()]
    if expected != found:
        raise FormatError(f"{path}: parameter layout does not match its config")
    return Checkpoint(
        config=config,
        parameters=parameters,
        history=list(header["history"]),
        input_digest=header["input_digest"],
        manifest_seed=header["manifest_seed"],
    )


def write_history_csv(history: list, path) -> None:
    lines = ["epoch,train_l1"]
    lines += [f"{epoch},{float(loss)!r}" for epoch, loss in enumerate(history)]
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("ascii"))
