"""Central finite-difference verification of every differentiable op.

The suite runs each op (and both full encoders) in float64, compares the
tape gradient against a central-difference estimate, and reports the worst
elementwise relative error. It backs both the pytest gradient tests and
the ``gradcheck`` CLI command.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward

OP_TOLERANCE = 1e-4
ENCODER_TOLERANCE = 1e-3
STEP = 1e-4


@dataclass
class CheckResult:
    name: str
    seed: int
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def numeric_gradient(fn, tensor: Tensor, h: float = STEP) -> np.ndarray:
    """Central-difference d fn / d tensor, elementwise."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def compare_gradients(build, tensors: list[Tensor], tolerance: float) -> float:
    """Max relative error between tape and finite-difference gradients.

    ``build`` constructs a scalar loss Tensor from the current data of
    ``tensors``; it is re-invoked for every probe, so it must be a pure
    function of those arrays.
    """
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        loss = build()
    backward(loss, tape)
    worst = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numeric_gradient(lambda: build().item(), t)
        floor = 1e-6 * max(1.0, float(np.abs(numeric).max(initial=0.0)))
        denom = np.maximum(np.abs(numeric), floor)
        rel = np.abs(analytic - numeric) / denom
        worst = max(worst, float(rel.max(initial=0.0)))
        t.grad = None
    return worst


def _leaf(rng, shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True, dtype=np.float64)


def _away_from_zero(rng, shape, margin=0.1):
    signs = rng.choice([-1.0, 1.0], size=shape)
    return Tensor(signs * rng.uniform(margin, 1.0, size=shape), requires_grad=True, dtype=np.float64)


def _distinct(rng, shape, gap=0.05):
    """Values with pairwise gaps well above the probe step (safe argmax)."""
    n = int(np.prod(shape))
    vals = (rng.permutation(n) * gap + rng.uniform(0, gap / 10)).reshape(shape)
    return Tensor(vals, requires_grad=True, dtype=np.float64)


def _weighted_sum(t: Tensor, weights: np.ndarray) -> Tensor:
    return ad.sum_all(ad.mul(t, Tensor(weights, dtype=np.float64)))


def op_checks(seed: int) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []

    def run(name, build, tensors, tol=OP_TOLERANCE):
        err = compare_gradients(build, tensors, tol)
        results.append(CheckResult(name, seed, err, tol))

    a = _leaf(rng, (3, 4))
    b = _leaf(rng, (4, 2))
    w = rng.standard_normal((3, 2))
    run("matmul", lambda: _weighted_sum(ad.matmul(a, b), w), [a, b])

    x = _leaf(rng, (2, 3, 4))
    y = _leaf(rng, (3, 1))
    w = rng.standard_normal((2, 3, 4))
    run("add_broadcast", lambda: _weighted_sum(ad.add(x, y), w), [x, y])
    run("sub_broadcast", lambda: _weighted_sum(ad.sub(x, y), w), [x, y])
    run("mul_broadcast", lambda: _weighted_sum(ad.mul(x, y), w), [x, y])

    r = _away_from_zero(rng, (4, 5))
    w = rng.standard_normal((4, 5))
    run("relu", lambda: _weighted_sum(ad.relu(r), w), [r])

    m = _distinct(rng, (3, 6))
    w = rng.standard_normal((3,))
    run("max_over_axis", lambda: _weighted_sum(ad.max_over_axis(m, 1)[0], w), [m])

    mm = _leaf(rng, (3, 5))
    w = rng.standard_normal((5,))
    run("mean_over_axis", lambda: _weighted_sum(ad.mean_over_axis(mm, 0), w), [mm])

    s = _leaf(rng, (2, 3))
    run("sum_all", lambda: ad.sum_all(s), [s])

    ca = _leaf(rng, (2, 3))
    cb = _leaf(rng, (2, 4))
    w = rng.standard_normal((2, 7))
    run("concat", lambda: _weighted_sum(ad.concat(ca, cb, axis=1), w), [ca, cb])

    rs = _leaf(rng, (2, 6))
    w = rng.standard_normal((3, 4))
    run("reshape", lambda: _weighted_sum(ad.reshape(rs, (3, 4)), w), [rs])

    tr = _leaf(rng, (2, 3, 4))
    w = rng.standard_normal((4, 2, 3))
    run("transpose", lambda: _weighted_sum(ad.transpose(tr, (2, 0, 1)), w), [tr])

    cx = _leaf(rng, (2, 2, 5, 5))
    ck = _leaf(rng, (3, 2, 3, 3))
    w = rng.standard_normal((2, 3, 5, 5))
    run("conv2d_pad1", lambda: _weighted_sum(ad.conv2d(cx, ck, 1, 1), w), [cx, ck])
    w2 = rng.standard_normal((2, 3, 2, 2))
    run("conv2d_stride2", lambda: _weighted_sum(ad.conv2d(cx, ck, 2, 0), w2), [cx, ck])

    px = _distinct(rng, (1, 2, 4, 4))
    w = rng.standard_normal((1, 2, 2, 2))
    run("maxpool2d", lambda: _weighted_sum(ad.maxpool2d(px, 2), w), [px])

    pred = _leaf(rng, (6,))
    offset = Tensor(
        pred.data + rng.choice([-1.0, 1.0], size=6) * rng.uniform(0.3, 1.0, size=6),
        requires_grad=True,
        dtype=np.float64,
    )
    run("l1_loss", lambda: ad.l1_loss(pred, offset), [pred, offset])

    w1 = _leaf(rng, (5, 7))
    w2_ = _leaf(rng, (7, 4))
    w3 = _leaf(rng, (4, 1))
    inp = rng.standard_normal((2, 5))

    def mlp3():
        h1 = ad.relu(ad.matmul(Tensor(inp, dtype=np.float64), w1))
        h2 = ad.relu(ad.matmul(h1, w2_))
        return ad.sum_all(ad.matmul(h2, w3))

    run("mlp_3layer", mlp3, [w1, w2_, w3])
    return results


def encoder_checks(seed: int) -> list[CheckResult]:
    """Finite-difference checks through both full encoders at tiny sizes."""
    from .encoders import (
        ImageEncoderConfig,
        PointEncoderConfig,
        encode_image_batch,
        encode_points_batch,
        init_image_encoder,
        init_point_encoder,
        point_encoder_inputs,
    )
    from .geometry import PointCloud

    rng = np.random.default_rng(seed)
    results = []

    icfg = ImageEncoderConfig(input_size=8, conv_channels=(2, 3), feature_dim=3)
    iparams = init_image_encoder(icfg, seed=seed, dtype=np.float64)
    pixels = rng.uniform(0.0, 1.0, size=(1, 3, 8, 8))
    wi = rng.standard_normal((1, 3))

    def image_loss():
        feats = encode_image_batch(Tensor(pixels, dtype=np.float64), iparams, icfg)
        return ad.sum_all(ad.mul(feats, Tensor(wi, dtype=np.float64)))

    tensors = [t for _, t in iparams.items()]
    err = compare_gradients(image_loss, tensors, ENCODER_TOLERANCE)
    results.append(CheckResult("image_encoder", seed, err, ENCODER_TOLERANCE))

    pcfg = PointEncoderConfig(n_points=16, k_neighbors=3, mlp_widths=(6, 6), feature_dim=3)
    pparams = init_point_encoder(pcfg, seed=seed, dtype=np.float64)
    cloud = PointCloud(rng.uniform(0.0, 1.0, size=(16, 3)))
    feats_in = point_encoder_inputs(cloud, pcfg).astype(np.float64)
    wp = rng.standard_normal((1, 3))

    def point_loss():
        feats = encode_points_batch(Tensor(feats_in[None], dtype=np.float64), pparams, pcfg)
        return ad.sum_all(ad.mul(feats, Tensor(wp, dtype=np.float64)))

    tensors = [t for _, t in pparams.items()]
    err = compare_gradients(point_loss, tensors, ENCODER_TOLERANCE)
    results.append(CheckResult("point_encoder", seed, err, ENCODER_TOLERANCE))
    return results


def run_suite(n_seeds: int = 20, include_encoders: bool = True) -> list[CheckResult]:
    results = []
    for seed in range(n_seeds):
        results.extend(op_checks(seed))
        if include_encoders:
            results.extend(encoder_checks(seed))
    return results
