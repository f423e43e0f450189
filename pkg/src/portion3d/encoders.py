"""Feature extraction: 2D conv encoder, 3D point encoder, feature fusion.

The image branch is a small conv stack (conv -> relu -> 2x2 max-pool per
layer) followed by a fully connected projection to the feature dimension.
The point branch aggregates local structure first: each point's own xyz is
concatenated with the offsets to its k nearest neighbors, a shared MLP
processes every point identically, a channel-wise max over all points
forms the global descriptor, and a final FC maps it to the same feature
dimension as the image branch. Branch features are fused by concatenation,
image features first.

Feature vectors are plain Tensors: shape (C,) per branch, (2C,) fused,
or batched (B, C) / (B, 2C) on the internal batched paths.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor, seeded_init
from .errors import DimensionMismatchError, GeometryError
from .geometry import Image, PointCloud


@dataclass(frozen=True)
class ImageEncoderConfig:
    """Square input size, conv filter counts, and output feature length."""

    input_size: int = 96
    conv_channels: tuple = (8, 16, 32)
    kernel: int = 3
    feature_dim: int = 64

    def __post_init__(self):
        if self.feature_dim < 1:
            raise GeometryError("feature_dim must be >= 1")
        if self.input_size % (2 ** len(self.conv_channels)) != 0:
            raise GeometryError(
                f"input size {self.input_size} not divisible by "
                f"{2 ** len(self.conv_channels)} for {len(self.conv_channels)} pool layers"
            )

    @property
    def flat_dim(self) -> int:
        side = self.input_size // (2 ** len(self.conv_channels))
        return side * side * self.conv_channels[-1]


@dataclass(frozen=True)
class PointEncoderConfig:
    """Point count, neighborhood size, shared-MLP widths, feature length."""

    n_points: int = 1024
    k_neighbors: int = 16
    mlp_widths: tuple = (64, 64)
    feature_dim: int = 64

    def __post_init__(self):
        if not (1 <= self.k_neighbors < self.n_points):
            raise GeometryError(
                f"need 1 <= k < n, got k={self.k_neighbors}, n={self.n_points}"
            )
        if self.feature_dim < 1:
            raise GeometryError("feature_dim must be >= 1")

    @property
    def input_dim(self) -> int:
        return 3 + 3 * self.k_neighbors


def _name_seed(base_seed: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([base_seed & 0xFFFFFFFF, zlib.crc32(name.encode())])


def _init_weight(params: ParameterSet, name: str, shape, seed, dtype):
    params.add(name, seeded_init(shape, "uniform_fan_in", _name_seed(seed, name), dtype=dtype))


def _init_zeros(params: ParameterSet, name: str, shape, dtype):
    params.add(name, seeded_init(shape, "zeros", 0, dtype=dtype))


def init_image_encoder(
    config: ImageEncoderConfig, seed: int, dtype=np.float32, prefix: str = "image"
) -> ParameterSet:
    params = ParameterSet()
    in_ch = 3
    for i, out_ch in enumerate(config.conv_channels):
        _init_weight(params, f"{prefix}.conv{i}.w", (out_ch, in_ch, config.kernel, config.kernel), seed, dtype)
        _init_zeros(params, f"{prefix}.conv{i}.b", (out_ch,), dtype)
        in_ch = out_ch
    _init_weight(params, f"{prefix}.fc.w", (config.flat_dim, config.feature_dim), seed, dtype)
    _init_zeros(params, f"{prefix}.fc.b", (config.feature_dim,), dtype)
    return params


def init_point_encoder(
    config: PointEncoderConfig, seed: int, dtype=np.float32, prefix: str = "point"
) -> ParameterSet:
    params = ParameterSet()
    in_dim = config.input_dim
    for i, width in enumerate(config.mlp_widths):
        _init_weight(params, f"{prefix}.mlp{i}.w", (in_dim, width), seed, dtype)
        _init_zeros(params, f"{prefix}.mlp{i}.b", (width,), dtype)
        in_dim = width
    _init_weight(params, f"{prefix}.fc.w", (in_dim, config.feature_dim), seed, dtype)
    _init_zeros(params, f"{prefix}.fc.b", (config.feature_dim,), dtype)
    return params


def image_to_array(image: Image, config: ImageEncoderConfig) -> np.ndarray:
    """(3, H, W) float32 channel-first array, validated against the config."""
    if image.height != config.input_size or image.width != config.input_size:
        raise DimensionMismatchError(
            f"image is {image.height}x{image.width}, encoder expects "
            f"{config.input_size}x{config.input_size}"
        )
    return np.ascontiguousarray(image.pixels.transpose(2, 0, 1), dtype=np.float32)


def encode_image_batch(x: Tensor, params: ParameterSet, config: ImageEncoderConfig, prefix: str = "image") -> Tensor:
    """Batched conv-stack forward: (B, 3, H, W) -> (B, C)."""
    if x.data.ndim != 4 or x.shape[1] != 3 or x.shape[2] != config.input_size or x.shape[3] != config.input_size:
        raise DimensionMismatchError(
            f"encoder input must be (B, 3, {config.input_size}, {config.input_size}), got {x.shape}"
        )
    h = x
    pad = config.kernel // 2
    for i in range(len(config.conv_channels)):
        w = params[f"{prefix}.conv{i}.w"]
        b = params[f"{prefix}.conv{i}.b"]
        h = ad.conv2d(h, w, stride=1, padding=pad)
        h = ad.add(h, ad.reshape(b, (b.shape[0], 1, 1)))
        h = ad.relu(h)
        h = ad.maxpool2d(h, 2)
    flat = ad.reshape(h, (h.shape[0], config.flat_dim))
    out = ad.matmul(flat, params[f"{prefix}.fc.w"])
    return ad.add(out, params[f"{prefix}.fc.b"])


def encode_image(image: Image, params: ParameterSet, config: ImageEncoderConfig) -> Tensor:
    """Encode one masked RGB image to a (C,) feature vector."""
    arr = image_to_array(image, config)
    batch = encode_image_batch(Tensor(arr[None]), params, config)
    return ad.reshape(batch, (config.feature_dim,))


def knn_indices(cloud: PointCloud, k: int) -> np.ndarray:
    """n x k table of each point's k nearest neighbors, excluding itself.

    Distance ties break toward the lower index. Duplicate points are fine;
    only the point's own row/column is excluded.
    """
    n = len(cloud)
    if not (1 <= k < n):
        raise GeometryError(f"need 1 <= k < n, got k={k}, n={n}")
    pts = cloud.points
    diff = pts[:, None, :] - pts[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")
    return np.ascontiguousarray(order[:, :k])


def point_encoder_inputs(cloud: PointCloud, config: PointEncoderConfig) -> np.ndarray:
    """Per-point local feature rows: own xyz plus k neighbor offsets.

    Returns (n, 3 + 3k) float32. Neighbors are ordered by increasing
    distance, so the rows only depend on the cloud as a point set.
    """
    if len(cloud) != config.n_points:
        raise GeometryError(
            f"encoder expects exactly {config.n_points} points, got {len(cloud)}"
        )
    idx = knn_indices(cloud, config.k_neighbors)
    pts = cloud.points
    offsets = pts[idx] - pts[:, None, :]
    feats = np.concatenate([pts, offsets.reshape(len(cloud), -1)], axis=1)
    return feats.astype(np.float32)


def encode_points_batch(x: Tensor, params: ParameterSet, config: PointEncoderConfig, prefix: str = "point") -> Tensor:
    """Batched point-branch forward: (B, n, 3+3k) -> (B, C)."""
    if x.data.ndim != 3 or x.shape[1] != config.n_points or x.shape[2] != config.input_dim:
        raise DimensionMismatchError(
            f"point encoder input must be (B, {config.n_points}, {config.input_dim}), got {x.shape}"
        )
    batch = x.shape[0]
    h = ad.reshape(x, (batch * config.n_points, config.input_dim))
    for i in range(len(config.mlp_widths)):
        h = ad.matmul(h, params[f"{prefix}.mlp{i}.w"])
        h = ad.add(h, params[f"{prefix}.mlp{i}.b"])
        h = ad.relu(h)
    h = ad.reshape(h, (batch, config.n_points, config.mlp_widths[-1]))
    pooled, _ = ad.max_over_axis(h, axis=1)
    out = ad.matmul(pooled, params[f"{prefix}.fc.w"])
    return ad.add(out, params[f"{prefix}.fc.b"])


def encode_points(cloud: PointCloud, params: ParameterSet, config: PointEncoderConfig) -> Tensor:
    """Encode one point cloud to a (C,) feature vector.

    Permutation-invariant in the input point order: the neighbor rows are
    distance-ordered and the global max aggregation ignores row order.
    """
    feats = point_encoder_inputs(cloud, config)
    batch = encode_points_batch(Tensor(feats[None]), params, config)
    return ad.reshape(batch, (config.feature_dim,))


def concat_features(f_image: Tensor, f_points: Tensor) -> Tensor:
    """Fuse branch features, image first; works on (C,) and (B, C) alike."""
    if f_image.data.ndim != f_points.data.ndim:
        raise DimensionMismatchError(
            f"feature ranks differ: {f_image.shape} vs {f_points.shape}"
        )
    last = f_image.data.ndim - 1
    if f_image.shape[last] != f_points.shape[last]:
        raise DimensionMismatchError(
            f"feature lengths differ: {f_image.shape} vs {f_points.shape}"
        )
    return ad.concat(f_image, f_points, axis=last)
