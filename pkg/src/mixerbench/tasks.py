"""Synthetic pixel and image level tasks, their metrics, and their losses.

Three task families share one shape synthesizer: dense segmentation of
ellipse classes, denoising at a randomized noise level, and binary
classification of a compact intensity anomaly.  Samples are plain numpy
arrays wrapped in :class:`TaskSample`; losses operate on tracked
tensors so they can sit at the end of a taped forward pass.

Serialized samples use a little-endian flat layout::

    magic b'MBTS' | u8 version | u8 task code
    image block   | target block
    u32 meta length | meta JSON (sorted keys, utf-8)

where each array block is ``u8 dtype code | u8 rank | u32 * rank
extents | raw C-order bytes`` with dtype codes 1=float32, 2=float64,
3=int64.  Writing the same sample twice yields identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.stats import rankdata

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "TaskSample",
    "gen_segmentation",
    "gen_denoising",
    "gen_classification",
    "make_dataset",
    "augment",
    "AugmentParams",
    "dice",
    "mean_dice",
    "ssim",
    "auroc",
    "bootstrap_ci",
    "cross_entropy",
    "denoise_loss",
    "gaussian_blur",
    "save_sample",
    "load_sample",
]

MIN_EXTENT = 16
NOISE_FLOOR = 0.05           # measurement noise always present in denoising inputs
NOISE_FACTOR_RANGE = (1.0, 40.0)
POSITIVE_RATE = 0.15


@dataclass
class TaskSample:
    task: str
    image: np.ndarray            # (channels, *spatial) float32
    target: np.ndarray           # class grid, clean image, or scalar label
    meta: dict = field(default_factory=dict)


def _require_extents(extents) -> tuple:
    extents = tuple(int(e) for e in extents)
    if len(extents) not in (2, 3):
        raise ValueError(f"extents must be 2-d or 3-d, got {extents}")
    if any(e < MIN_EXTENT for e in extents):
        raise ValueError(f"extents {extents} too small, need at least {MIN_EXTENT} per axis")
    return extents


def _smooth_field(extents, rng, scale: float) -> np.ndarray:
    """Low-resolution noise upsampled to a smooth background."""
    coarse = [max(e // 8, 2) for e in extents]
    field_ = rng.normal(size=coarse)
    zoom = [e / c for e, c in zip(extents, coarse)]
    return scale * ndimage.zoom(field_, zoom, order=3, mode="nearest")


def _ellipse_mask(extents, center, axes_len, angle) -> np.ndarray:
    """Boolean inside-ellipse mask; rotation acts on the trailing two axes."""
    coords = np.indices(extents).astype(np.float64)
    rel = [coords[i] - center[i] for i in range(len(extents))]
    c, s = np.cos(angle), np.sin(angle)
    u, v = rel[-2], rel[-1]
    rel[-2] = c * u + s * v
    rel[-1] = -s * u + c * v
    q = sum((r / a) ** 2 for r, a in zip(rel, axes_len))
    return q <= 1.0


def _draw_shapes(extents, rng, count: int, num_classes: int):
    """Paint ellipses into an intensity field; returns (field, class grid)."""
    intensity = np.zeros(extents)
    labels = np.zeros(extents, dtype=np.int64)
    for _ in range(count):
        center = [rng.uniform(0.2 * e, 0.8 * e) for e in extents]
        axes_len = [max(rng.uniform(0.08, 0.25) * e, 2.0) for e in extents]
        angle = rng.uniform(0.0, np.pi)
        cls = int(rng.integers(1, num_classes))
        level = 0.5 + 0.5 * cls / max(num_classes - 1, 1) + 0.1 * rng.normal()
        mask = _ellipse_mask(extents, center, axes_len, angle)
        intensity[mask] = level
        labels[mask] = cls
    return intensity, labels


def _standardize(x: np.ndarray) -> np.ndarray:
    x = x - x.mean()
    return x / max(float(x.std()), 1e-8)


def gen_segmentation(extents, num_classes: int = 4, num_shapes=None, rng=None,
                     seed: int = 0) -> TaskSample:
    """Ellipses of ``num_classes - 1`` foreground classes on a smooth background.

    ``num_shapes=None`` draws 2..5 shapes; an explicit 0 yields an
    all-background mask.
    """
    extents = _require_extents(extents)
    if num_classes < 2:
        raise ValueError(f"segmentation needs at least 2 classes, got {num_classes}")
    rng = np.random.default_rng(seed) if rng is None else rng
    count = int(rng.integers(2, 6)) if num_shapes is None else int(num_shapes)
    if count < 0:
        raise ValueError(f"num_shapes must be non-negative, got {num_shapes}")
    intensity, labels = _draw_shapes(extents, rng, count, num_classes)
    image = _smooth_field(extents, rng, 0.3) + intensity
    image = image + 0.05 * rng.normal(size=extents)
    image = _standardize(image).astype(np.float32)[None]
    return TaskSample("segmentation", image, labels, {"num_classes": num_classes, "shapes": count})


def gen_denoising(extents, rng=None, seed: int = 0,
                  snr_ratio_range=NOISE_FACTOR_RANGE) -> TaskSample:
    """Clean structured image (unit RMS) corrupted by Gaussian noise.

    Every sample carries at least the floor noise (sigma ``NOISE_FLOOR``),
    which fixes the reference SNR at ``1 / NOISE_FLOOR``.  A factor r drawn
    uniformly from ``snr_ratio_range`` scales the total noise sigma to
    ``NOISE_FLOOR * r``, dividing the sample SNR by exactly r.
    """
    extents = _require_extents(extents)
    lo, hi = float(snr_ratio_range[0]), float(snr_ratio_range[1])
    if lo < 1.0 or hi < lo:
        raise ValueError(f"snr_ratio_range must satisfy 1 <= lo <= hi, got {snr_ratio_range}")
    rng = np.random.default_rng(seed) if rng is None else rng
    count = int(rng.integers(2, 6))
    intensity, _ = _draw_shapes(extents, rng, count, num_classes=4)
    clean = _smooth_field(extents, rng, 0.5) + intensity
    clean = clean - clean.mean()
    rms = float(np.sqrt(np.mean(clean**2)))
    if rms < 1e-8:
        raise ValueError("degenerate clean image: zero RMS")
    clean = clean / rms

    factor = float(rng.uniform(lo, hi))
    extra = NOISE_FLOOR * np.sqrt(factor**2 - 1.0)
    noisy = (
        clean
        + NOISE_FLOOR * rng.normal(size=extents)
        + extra * rng.normal(size=extents)
    )
    sigma = NOISE_FLOOR * factor
    return TaskSample(
        "denoising",
        noisy.astype(np.float32)[None],
        clean.astype(np.float32)[None],
        {"noise_sigma": sigma, "noise_factor": factor, "snr": 1.0 / sigma},
    )


def gen_classification(extents, rng=None, seed: int = 0,
                       positive_rate: float = POSITIVE_RATE,
                       force_label=None) -> TaskSample:
    """Binary anomaly detection: a compact intensity bump is present or not.

    All anomaly parameters are drawn whether or not the sample is positive,
    so a forced-positive and forced-negative sample from the same seed
    consume the same random stream and differ only inside the bump support.
    That twin property also rules out per-sample normalisation here: the
    image is left on its native scale.
    """
    extents = _require_extents(extents)
    if not 0.0 < positive_rate < 1.0:
        raise ValueError(f"positive_rate must lie in (0, 1), got {positive_rate}")
    rng = np.random.default_rng(seed) if rng is None else rng
    count = int(rng.integers(2, 6))
    intensity, _ = _draw_shapes(extents, rng, count, num_classes=4)
    base = _smooth_field(extents, rng, 0.3) + intensity

    drawn = int(rng.uniform() < positive_rate)
    label = drawn if force_label is None else int(force_label)
    if label not in (0, 1):
        raise ValueError(f"force_label must be 0 or 1, got {force_label}")
    center = [rng.uniform(0.25 * e, 0.75 * e) for e in extents]
    radius = rng.uniform(0.06, 0.12) * min(extents)
    amplitude = rng.choice([-1.0, 1.0]) * rng.uniform(0.8, 1.5)
    if label:
        coords = np.indices(extents).astype(np.float64)
        dist2 = sum((coords[i] - center[i]) ** 2 for i in range(len(extents)))
        profile = np.clip(1.0 - dist2 / radius**2, 0.0, None) ** 2
        base = base + amplitude * profile

    image = (base + 0.05 * rng.normal(size=extents)).astype(np.float32)[None]
    meta = {
        "anomaly_center": [float(c) for c in center],
        "anomaly_radius": float(radius),
        "anomaly_amplitude": float(amplitude),
    }
    return TaskSample("classification", image, np.int64(label), meta)


_GENERATORS = {
    "segmentation": gen_segmentation,
    "denoising": gen_denoising,
    "classification": gen_classification,
}


def make_dataset(task: str, count: int, extents, seed: int = 0, **kwargs) -> list:
    """``count`` independent samples; sample i depends only on (seed, i)."""
    if task not in _GENERATORS:
        raise ValueError(f"task must be one of {sorted(_GENERATORS)}, got {task!r}")
    gen = _GENERATORS[task]
    return [gen(extents, rng=np.random.default_rng((seed, i)), **kwargs) for i in range(count)]


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentParams:
    """In-plane warp parameters: rotation (radians), isotropic scale,
    translation in pixels along the trailing two axes, brightness gain."""

    angle: float = 0.0
    scale: float = 1.0
    shift: tuple = (0.0, 0.0)
    brightness: float = 1.0

    @property
    def is_identity(self) -> bool:
        return (self.angle == 0.0 and self.scale == 1.0
                and all(v == 0.0 for v in self.shift) and self.brightness == 1.0)


def _draw_augment_params(extents, rng) -> AugmentParams:
    return AugmentParams(
        angle=float(np.deg2rad(rng.uniform(-10.0, 10.0))),
        scale=float(rng.uniform(0.9, 1.1)),
        shift=tuple(float(rng.uniform(-0.05, 0.05) * e) for e in extents[-2:]),
        brightness=float(rng.uniform(0.9, 1.1)),
    )


def _affine_matrix(extents, angle, scale, shift):
    """Output-to-input matrix and offset for scipy's affine_transform.

    Rotation, scaling, and translation act on the trailing two spatial
    axes; a leading depth axis passes through untouched.
    """
    rank = len(extents)
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, -s], [s, c]]) * scale
    matrix = np.eye(rank)
    matrix[rank - 2:, rank - 2:] = np.linalg.inv(rot)
    center = np.array([(e - 1) / 2.0 for e in extents])
    translated = center.copy()
    translated[rank - 2:] += np.asarray(shift)
    offset = center - matrix @ translated
    return matrix, offset


def augment(sample: TaskSample, rng=None, seed: int = 0,
            params: AugmentParams = None) -> TaskSample:
    """In-plane rotation, scale, translation, and brightness.

    Parameters are drawn from ``rng`` unless given explicitly; identity
    parameters return the sample untouched.  The geometric transform is
    shared between image and target; target interpolation is nearest for
    class grids and linear otherwise.  Brightness is skipped for
    denoising, where it would decouple the noisy input from its clean
    target.
    """
    spatial = sample.image.shape[1:]
    if params is None:
        rng = np.random.default_rng(seed) if rng is None else rng
        params = _draw_augment_params(spatial, rng)
    if params.is_identity:
        return sample
    angle, scale, shift, brightness = params.angle, params.scale, params.shift, params.brightness
    matrix, offset = _affine_matrix(spatial, angle, scale, shift)

    def warp(arr, order):
        return ndimage.affine_transform(arr, matrix, offset=offset, order=order, mode="nearest")

    image = np.stack([warp(ch, 1) for ch in sample.image]).astype(sample.image.dtype)
    target = sample.target
    if sample.task == "segmentation":
        target = warp(target.astype(np.float64), 0).astype(target.dtype)
    elif sample.task == "denoising":
        target = np.stack([warp(ch, 1) for ch in target]).astype(target.dtype)
    if sample.task != "denoising":
        image = (image * brightness).astype(sample.image.dtype)
    meta = dict(sample.meta)
    meta["augment"] = {
        "angle": float(angle),
        "scale": float(scale),
        "shift": [float(v) for v in shift],
        "brightness": float(brightness) if sample.task != "denoising" else 1.0,
    }
    return TaskSample(sample.task, image, target, meta)


# ---------------------------------------------------------------------------
# Metrics (plain numpy, evaluated outside the tape)
# ---------------------------------------------------------------------------

def dice(pred_mask: np.ndarray, true_mask: np.ndarray, class_id=None) -> float:
    """Binary overlap 2|A n B| / (|A| + |B|); two empty masks count as 1.

    With ``class_id`` the inputs are label grids and the overlap is taken
    over pixels equal to that class.
    """
    if class_id is not None:
        pred_mask = np.asarray(pred_mask) == class_id
        true_mask = np.asarray(true_mask) == class_id
    p = np.asarray(pred_mask, dtype=bool)
    t = np.asarray(true_mask, dtype=bool)
    if p.shape != t.shape:
        raise ValueError(f"dice shape mismatch: {p.shape} vs {t.shape}")
    total = int(p.sum()) + int(t.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, t).sum()) / total


def mean_dice(pred_ids: np.ndarray, true_ids: np.ndarray, num_classes: int) -> float:
    """Average dice over the foreground classes 1..num_classes-1."""
    scores = [dice(pred_ids == c, true_ids == c) for c in range(1, num_classes)]
    return float(np.mean(scores))


def ssim(x: np.ndarray, y: np.ndarray, data_range=None, window: int = 7) -> float:
    """Mean structural similarity over valid uniform windows.

    Every axis of the input is treated as spatial.  The dynamic range
    defaults to the joint range of both images, which keeps the metric
    symmetric in its arguments.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"ssim shape mismatch: {x.shape} vs {y.shape}")
    if any(e < window for e in x.shape):
        raise ValueError(f"ssim needs every extent >= {window}, got {x.shape}")
    if data_range is None:
        lo = min(float(x.min()), float(y.min()))
        hi = max(float(x.max()), float(y.max()))
        data_range = hi - lo
    if data_range == 0.0:
        return 1.0

    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    def box(a):
        return ndimage.uniform_filter(a, size=window, mode="reflect")

    mu_x, mu_y = box(x), box(y)
    sxx = box(x * x) - mu_x**2
    syy = box(y * y) - mu_y**2
    sxy = box(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    ssim_map = num / den
    margin = window // 2
    valid = tuple(slice(margin, e - margin) for e in x.shape)
    return float(ssim_map[valid].mean())


def auroc(scores, labels) -> float:
    """Rank-based area under the ROC curve with average tie handling."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.shape != labels.shape:
        raise ValueError(f"auroc shape mismatch: {scores.shape} vs {labels.shape}")
    pos = int(labels.sum())
    neg = labels.size - pos
    if pos == 0 or neg == 0:
        raise ValueError("auroc needs at least one positive and one negative label")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - pos * (pos + 1) / 2.0) / (pos * neg))


def bootstrap_ci(values, statistic=np.mean, n_boot: int = 1000, level: float = 0.95,
                 seed: int = 0) -> tuple:
    """Seeded percentile bootstrap interval for ``statistic`` of ``values``."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("bootstrap_ci needs at least one value")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must be in (0, 1), got {level}")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, values.size, size=(n_boot, values.size))
    stats = np.array([statistic(values[row]) for row in idx])
    alpha = 100.0 * (1.0 - level) / 2.0
    return float(np.percentile(stats, alpha)), float(np.percentile(stats, 100.0 - alpha))


# ---------------------------------------------------------------------------
# Losses (tracked tensors)
# ---------------------------------------------------------------------------

_CE_EPS = 1e-12


def cross_entropy(logits: Tensor, target_ids) -> Tensor:
    """Mean negative log likelihood of integer targets.

    Accepts image-level logits ``(num_classes,)`` with a scalar target,
    or dense logits ``(num_classes, *spatial)`` with a class grid.
    """
    ids = np.asarray(target_ids, dtype=np.int64)
    if logits.ndim == 1:
        flat = T.reshape(logits, (1, logits.shape[0]))
        ids = ids.reshape(1)
    else:
        k = logits.shape[0]
        moved = T.transpose(logits, tuple(range(1, logits.ndim)) + (0,))
        flat = T.reshape(moved, (int(np.prod(logits.shape[1:])), k))
        ids = ids.ravel()
    n, k = flat.shape
    if ids.shape != (n,):
        raise ValueError(f"target shape {np.asarray(target_ids).shape} does not match logits")
    if ids.min() < 0 or ids.max() >= k:
        raise ValueError(f"target ids outside [0, {k})")
    onehot = np.zeros((n, k), dtype=flat.dtype)
    onehot[np.arange(n), ids] = 1.0
    picked = T.reduce_sum(T.softmax(flat) * T.constant(onehot), axis=1)
    return T.mul_scalar(T.reduce_mean(T.log(T.add_scalar(picked, _CE_EPS))), -1.0)


def gaussian_blur(x: Tensor, sigma: float = 1.5) -> Tensor:
    """Separable Gaussian blur over every axis after the first (channel) axis."""
    radius = max(int(3.0 * sigma + 0.5), 1)
    taps = np.exp(-0.5 * (np.arange(-radius, radius + 1) / sigma) ** 2)
    taps = (taps / taps.sum()).astype(x.dtype)
    for axis in range(1, x.ndim):
        order = tuple(i for i in range(x.ndim) if i != axis) + (axis,)
        moved = T.transpose(x, order)
        lead_shape = moved.shape[:-1]
        flat = T.reshape(moved, (int(np.prod(lead_shape)), moved.shape[-1]))
        kernel = T.constant(np.tile(taps, (flat.shape[0], 1)), dtype=x.dtype)
        blurred = T.depthwise_conv1d(flat, kernel)
        moved = T.reshape(blurred, (*lead_shape, moved.shape[-1]))
        inverse = tuple(np.argsort(order))
        x = T.transpose(moved, inverse)
    return x


CHARBONNIER_EPS = 1e-3
BLUR_SIGMA = 1.5


def denoise_loss(pred: Tensor, clean, use_blur: bool = True) -> Tensor:
    """Sum of MSE, a Charbonnier term, and a blurred-residual MSE.

    The Charbonnier term sqrt(d^2 + eps^2) floors the loss at
    ``CHARBONNIER_EPS`` even for a perfect prediction.  The blur term
    compares Gaussian-smoothed residuals (sigma ``BLUR_SIGMA``), which
    penalizes low-frequency residue that plain MSE underweights; the flag
    exists so that the term can be dropped or swapped wholesale.
    """
    target = clean if isinstance(clean, Tensor) else T.constant(np.asarray(clean), dtype=pred.dtype)
    diff = pred - target
    mse = T.reduce_mean(diff * diff)
    char = T.reduce_mean(T.sqrt(T.add_scalar(diff * diff, CHARBONNIER_EPS**2)))
    total = mse + char
    if use_blur:
        smooth = gaussian_blur(diff, BLUR_SIGMA)
        total = total + T.reduce_mean(smooth * smooth)
    return total


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_MAGIC = b"MBTS"
_VERSION = 1
_TASK_CODES = {"segmentation": 1, "denoising": 2, "classification": 3}
_TASK_NAMES = {v: k for k, v in _TASK_CODES.items()}
_DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2, np.dtype(np.int64): 3}
_DTYPE_NAMES = {1: np.dtype(np.float32), 2: np.dtype(np.float64), 3: np.dtype(np.int64)}


def _pack_array(arr: np.ndarray) -> bytes:
    # ascontiguousarray would promote 0-d scalars to rank one
    arr = np.asarray(arr)
    if not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    if arr.dtype not in _DTYPE_CODES:
        raise ValueError(f"unsupported dtype {arr.dtype} for sample serialization")
    head = struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def _unpack_array(buf: bytes, pos: int):
    code, rank = struct.unpack_from("<BB", buf, pos)
    pos += 2
    shape = struct.unpack_from(f"<{rank}I", buf, pos)
    pos += 4 * rank
    dtype = _DTYPE_NAMES[code]
    count = int(np.prod(shape)) if rank else 1
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=pos).reshape(shape).copy()
    pos += count * dtype.itemsize
    if rank == 0:
        arr = arr[()]
    return arr, pos


def save_sample(sample: TaskSample, path) -> None:
    if sample.task not in _TASK_CODES:
        raise ValueError(f"unknown task {sample.task!r}")
    meta = json.dumps(sample.meta, sort_keys=True).encode()
    blob = _MAGIC + struct.pack("<BB", _VERSION, _TASK_CODES[sample.task])
    blob += _pack_array(sample.image)
    blob += _pack_array(np.asarray(sample.target))
    blob += struct.pack("<I", len(meta)) + meta
    with open(path, "wb") as fh:
        fh.write(blob)


def load_sample(path) -> TaskSample:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != _MAGIC:
        raise ValueError(f"{path}: not a task sample file")
    version, task_code = struct.unpack_from("<BB", buf, 4)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    image, pos = _unpack_array(buf, 6)
    target, pos = _unpack_array(buf, pos)
    (meta_len,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    meta = json.loads(buf[pos : pos + meta_len].decode())
    return TaskSample(_TASK_NAMES[task_code], image, target, meta)
