"""ViT and Swin style backbones over interchangeable token mixers.

Images are channel-first, tokens are raster ordered (row-major over the
spatial axes, first axis slowest).  A ViT embeds at one patch size and
runs a flat stack of pre-norm blocks; a Swin embeds at a small patch
size and alternates windowed mixing with patch merging across four
stages.  Context length is the token count a single mixer application
sees: the full grid for ViT, one window for Swin.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, fields

import numpy as np

from . import tensor as T
from . import mixers as MX
from .tensor import Tensor

__all__ = [
    "ModelConfig",
    "Dense",
    "BlockParams",
    "ForwardResult",
    "Model",
    "context_length",
    "parse_config_file",
    "config_text",
    "config_hash",
    "patch_embed",
    "unpatchify",
    "tokens_to_grid",
    "grid_to_tokens",
    "window_partition",
    "window_reverse",
    "cyclic_shift",
    "patch_merge",
    "init_block",
    "block_forward",
    "token_stack_forward",
    "init_token_stack",
    "vit_backbone_features",
    "swin_backbone_features",
    "vit_forward",
    "swin_forward",
    "build_model",
    "param_count",
]

VIT_PATCH_SIZES = (4, 8, 16, 32)
SWIN_PATCH_SIZES = (2, 4)
SWIN_WINDOW_SIZES = (4, 8, 16)
SWIN_STAGES = 4
MLP_RATIO = 4

TASK_KINDS = ("segmentation", "denoising", "classification", "features")


@dataclass
class ModelConfig:
    backbone: str = "vit"
    mixer: str = "attention"
    spatial_rank: int = 2
    patch_size: int = 16
    window_size: int = 8
    embed_dim: int = 64
    depth: object = 2                 # int for vit, int or 4-tuple for swin
    num_heads: int = 4
    shift_enabled: object = None      # None -> swin attention default
    pos_embed: str = "learned"

    def __post_init__(self):
        if self.backbone not in ("vit", "swin"):
            raise ValueError(f"backbone must be 'vit' or 'swin', got {self.backbone!r}")
        if self.mixer not in MX.MIXER_KINDS:
            raise ValueError(f"mixer must be one of {MX.MIXER_KINDS}, got {self.mixer!r}")
        if self.spatial_rank not in (2, 3):
            raise ValueError(f"spatial_rank must be 2 or 3, got {self.spatial_rank}")
        if self.backbone == "vit":
            if self.patch_size not in VIT_PATCH_SIZES:
                raise ValueError(f"vit patch_size must be in {VIT_PATCH_SIZES}, got {self.patch_size}")
            if not isinstance(self.depth, int) or self.depth < 0:
                raise ValueError(f"vit depth must be a non-negative int, got {self.depth!r}")
        else:
            if self.patch_size not in SWIN_PATCH_SIZES:
                raise ValueError(f"swin patch_size must be in {SWIN_PATCH_SIZES}, got {self.patch_size}")
            if self.window_size not in SWIN_WINDOW_SIZES:
                raise ValueError(f"swin window_size must be in {SWIN_WINDOW_SIZES}, got {self.window_size}")
            if isinstance(self.depth, int):
                self.depth = (self.depth,) * SWIN_STAGES
            else:
                self.depth = tuple(int(d) for d in self.depth)
            if len(self.depth) != SWIN_STAGES or any(d < 0 for d in self.depth):
                raise ValueError(f"swin depth must be {SWIN_STAGES} non-negative ints, got {self.depth}")
        if self.mixer == "attention" and self.embed_dim % self.num_heads:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.mixer == "mamba_vision" and self.embed_dim % 2:
            raise ValueError(f"embed_dim must be even for mamba_vision, got {self.embed_dim}")
        if self.shift_enabled is None:
            self.shift_enabled = self.backbone == "swin" and self.mixer == "attention"
        if self.shift_enabled and (self.backbone != "swin" or self.mixer != "attention"):
            raise ValueError("shift_enabled is only valid for the swin backbone with attention")
        if self.pos_embed not in ("learned", "none"):
            raise ValueError(f"pos_embed must be 'learned' or 'none', got {self.pos_embed!r}")


def context_length(config: ModelConfig, image_extents) -> int:
    """Tokens seen by one mixer application."""
    if config.backbone == "vit":
        n = 1
        for extent in image_extents:
            if extent % config.patch_size:
                raise ValueError(f"extent {extent} not divisible by patch {config.patch_size}")
            n *= extent // config.patch_size
        return n
    return config.window_size**config.spatial_rank


# ---------------------------------------------------------------------------
# Config file io
# ---------------------------------------------------------------------------

_BOOL_WORDS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def parse_config_file(path) -> ModelConfig:
    """Read a plain 'key = value' file into a ModelConfig.

    Comment lines start with '#'.  ``depth`` accepts a comma separated
    list for per-stage swin depths.  Unknown keys are rejected.
    """
    known = {f.name for f in fields(ModelConfig)}
    values: dict = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = value
    return config_from_strings(values)


def config_from_strings(values: dict) -> ModelConfig:
    kwargs: dict = {}
    for key, value in values.items():
        if key in ("backbone", "mixer", "pos_embed"):
            kwargs[key] = value
        elif key == "depth":
            parts = [p for p in value.split(",") if p.strip()]
            kwargs[key] = int(parts[0]) if len(parts) == 1 else tuple(int(p) for p in parts)
        elif key == "shift_enabled":
            word = value.strip().lower()
            if word not in _BOOL_WORDS:
                raise ValueError(f"shift_enabled must be a boolean word, got {value!r}")
            kwargs[key] = _BOOL_WORDS[word]
        else:
            kwargs[key] = int(value)
    return ModelConfig(**kwargs)


def config_text(config: ModelConfig) -> str:
    """Canonical key = value rendering, stable across runs."""
    lines = []
    for f in fields(ModelConfig):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def config_hash(config: ModelConfig) -> str:
    return hashlib.sha256(config_text(config).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Token / grid rearrangement
# ---------------------------------------------------------------------------

def patch_embed(image: Tensor, embed_w: Tensor, embed_b: Tensor, patch_size: int):
    """Image (C, *spatial) -> raster tokens (n, d) and the token grid."""
    channels, *spatial = image.shape
    p = patch_size
    grid = []
    for extent in spatial:
        if extent % p:
            raise ValueError(f"spatial extent {extent} not divisible by patch size {p}")
        grid.append(extent // p)
    rank = len(spatial)
    shape = [channels]
    for g in grid:
        shape.extend([g, p])
    x = T.reshape(image, shape)
    axes = tuple(1 + 2 * i for i in range(rank)) + (0,) + tuple(2 + 2 * i for i in range(rank))
    x = T.transpose(x, axes)
    n = int(np.prod(grid))
    tokens = T.reshape(x, (n, channels * p**rank))
    return tokens @ embed_w + embed_b, tuple(grid)


def unpatchify(tokens: Tensor, grid, patch_size: int, channels: int) -> Tensor:
    """Tokens (n, channels * p**rank) -> image (channels, *grid * p)."""
    grid = tuple(grid)
    rank = len(grid)
    p = patch_size
    x = T.reshape(tokens, (*grid, channels, *(p,) * rank))
    axes = (rank,) + tuple(i + delta for i in range(rank) for delta in (0, rank + 1))
    x = T.transpose(x, axes)
    return T.reshape(x, (channels, *(g * p for g in grid)))


def tokens_to_grid(tokens: Tensor, grid) -> Tensor:
    """(n, c) raster tokens -> (c, *grid)."""
    grid = tuple(grid)
    channels = tokens.shape[-1]
    x = T.reshape(tokens, (*grid, channels))
    return T.transpose(x, (len(grid),) + tuple(range(len(grid))))


def grid_to_tokens(x: Tensor) -> Tensor:
    """(c, *grid) -> raster tokens (n, c)."""
    channels = x.shape[0]
    rank = x.ndim - 1
    out = T.transpose(x, tuple(range(1, rank + 1)) + (0,))
    return T.reshape(out, (int(np.prod(x.shape[1:])), channels))


def window_partition(x: Tensor, window_size: int):
    """Token grid (*grid, d) -> windows (num_windows, window**rank, d).

    Grid extents that are not multiples of the window are zero padded on
    the high side first; the possibly padded grid is returned so
    :func:`window_reverse` can undo the partition.
    """
    *grid, d = x.shape
    w = window_size
    padded = tuple(math.ceil(g / w) * w for g in grid)
    if padded != tuple(grid):
        widths = tuple((0, pg - g) for g, pg in zip(grid, padded)) + ((0, 0),)
        x = T.pad(x, widths)
    rank = len(grid)
    shape = []
    for g in padded:
        shape.extend([g // w, w])
    x = T.reshape(x, (*shape, d))
    axes = tuple(2 * i for i in range(rank)) + tuple(2 * i + 1 for i in range(rank)) + (2 * rank,)
    x = T.transpose(x, axes)
    num = int(np.prod([g // w for g in padded]))
    return T.reshape(x, (num, w**rank, d)), padded


def window_reverse(windows: Tensor, window_size: int, grid) -> Tensor:
    """Inverse of :func:`window_partition` for a divisible ``grid``."""
    grid = tuple(grid)
    w = window_size
    rank = len(grid)
    d = windows.shape[-1]
    counts = tuple(g // w for g in grid)
    x = T.reshape(windows, (*counts, *(w,) * rank, d))
    axes = []
    for i in range(rank):
        axes.extend([i, rank + i])
    x = T.transpose(x, (*axes, 2 * rank))
    return T.reshape(x, (*grid, d))


def cyclic_shift(x: Tensor, shift: int) -> Tensor:
    """Roll a token grid (*grid, d) by -shift along every spatial axis."""
    if shift == 0:
        return x
    spatial = tuple(range(x.ndim - 1))
    return T.roll(x, (-shift,) * len(spatial), spatial)


def patch_merge(tokens: Tensor, grid, merge: "Dense"):
    """Concatenate 2**rank neighbors and project to double width."""
    grid = tuple(grid)
    if any(g % 2 for g in grid):
        raise ValueError(f"patch merging needs even grid extents, got {grid}")
    c = tokens.shape[-1]
    rank = len(grid)
    shape = []
    for g in grid:
        shape.extend([g // 2, 2])
    x = T.reshape(tokens, (*shape, c))
    axes = tuple(2 * i for i in range(rank)) + tuple(2 * i + 1 for i in range(rank)) + (2 * rank,)
    x = T.transpose(x, axes)
    n = int(np.prod([g // 2 for g in grid]))
    x = T.reshape(x, (n, (2**rank) * c))
    return dense(x, merge), tuple(g // 2 for g in grid)


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------

@dataclass
class Dense:
    w: Tensor
    b: Tensor


@dataclass
class BlockParams:
    norm1_g: Tensor
    norm1_b: Tensor
    mixer: object
    norm2_g: Tensor
    norm2_b: Tensor
    mlp_in: Dense
    mlp_out: Dense


@dataclass
class ViTParams:
    embed: Dense
    pos_embed: object            # Tensor or None
    blocks: list
    norm_g: Tensor
    norm_b: Tensor


@dataclass
class SwinStageParams:
    blocks: list
    merge: object                # Dense or None for the last stage


@dataclass
class SwinParams:
    embed: Dense
    stages: list
    norm_g: Tensor
    norm_b: Tensor


@dataclass
class LinearHead:
    proj: Dense


@dataclass
class ViTDecoder:
    """Progressive pixel-shuffle upsampling back to pixel resolution.

    Each stage doubles the grid; early stages concatenate a projected
    skip taken from an intermediate block depth.
    """

    deconvs: list                # Dense: c_prev -> c_j * 2**rank
    skip_projs: list             # Dense: d -> c_j * (2**j)**rank, aligned to first stages
    fuses: list                  # Dense after each skip concat
    out: Dense


@dataclass
class FpnDecoder:
    """Per-stage lateral projections summed at the finest grid."""

    laterals: list               # Dense per stage, width -> fpn width
    fuse: Dense
    out: Dense                   # fpn width -> out_channels * patch**rank


@dataclass
class ForwardResult:
    tokens: Tensor
    output: object               # Tensor or None for features-only


def dense(x: Tensor, p: Dense) -> Tensor:
    return x @ p.w + p.b


def _init_dense(rng, n_in, n_out, dtype, std=0.02) -> Dense:
    return Dense(
        w=T.parameter(rng.normal(0.0, std, size=(n_in, n_out)).astype(dtype)),
        b=T.parameter(np.zeros(n_out, dtype=dtype)),
    )


def _ones(d, dtype):
    return T.parameter(np.ones(d, dtype=dtype))


def _zeros(d, dtype):
    return T.parameter(np.zeros(d, dtype=dtype))


def init_block(mixer_kind: str, embed_dim: int, num_heads: int, rng, dtype) -> BlockParams:
    return BlockParams(
        norm1_g=_ones(embed_dim, dtype),
        norm1_b=_zeros(embed_dim, dtype),
        mixer=MX.init_mixer(mixer_kind, embed_dim, num_heads, rng, dtype),
        norm2_g=_ones(embed_dim, dtype),
        norm2_b=_zeros(embed_dim, dtype),
        mlp_in=_init_dense(rng, embed_dim, MLP_RATIO * embed_dim, dtype),
        mlp_out=_init_dense(rng, MLP_RATIO * embed_dim, embed_dim, dtype),
    )


def block_forward(kind: str, x: Tensor, blk: BlockParams, mix_apply=None) -> Tensor:
    """Pre-norm residual block: x + mix(ln(x)), then x + mlp(ln(x)).

    ``mix_apply`` overrides how the mixer is applied to the normed
    tokens; the swin path uses it to window the sequence first.
    """
    normed = T.layer_norm(x, blk.norm1_g, blk.norm1_b)
    if mix_apply is None:
        mixed = MX.mixer_forward(kind, normed, blk.mixer)
    else:
        mixed = mix_apply(normed, blk.mixer)
    x = x + mixed
    normed = T.layer_norm(x, blk.norm2_g, blk.norm2_b)
    hidden = T.gelu(dense(normed, blk.mlp_in))
    return x + dense(hidden, blk.mlp_out)


def init_token_stack(mixer_kind: str, embed_dim: int, depth: int, num_heads: int = 4,
                     seed: int = 0, dtype=np.float32) -> list:
    """A bare stack of blocks for sequence-level runs (no embedding)."""
    rng = np.random.default_rng(seed)
    return [init_block(mixer_kind, embed_dim, num_heads, rng, dtype) for _ in range(depth)]


def token_stack_forward(kind: str, x: Tensor, blocks: list) -> Tensor:
    for blk in blocks:
        x = block_forward(kind, x, blk)
    return x


# ---------------------------------------------------------------------------
# ViT
# ---------------------------------------------------------------------------

def _skip_depths(depth: int) -> list:
    picks = {math.ceil(depth / 3), math.ceil(2 * depth / 3)} - {0, depth}
    return sorted(picks)


def init_vit(config: ModelConfig, image_extents, in_channels: int, rng, dtype) -> ViTParams:
    d = config.embed_dim
    p = config.patch_size
    rank = config.spatial_rank
    n = context_length(config, image_extents)
    pos = None
    if config.pos_embed == "learned":
        pos = T.parameter(rng.normal(0.0, 0.02, size=(n, d)).astype(dtype))
    return ViTParams(
        embed=_init_dense(rng, in_channels * p**rank, d, dtype),
        pos_embed=pos,
        blocks=[init_block(config.mixer, d, config.num_heads, rng, dtype)
                for _ in range(config.depth)],
        norm_g=_ones(d, dtype),
        norm_b=_zeros(d, dtype),
    )


def vit_backbone_features(image: Tensor, config: ModelConfig, params: ViTParams):
    """Returns (final tokens, grid, skip list of (depth, tokens))."""
    tokens, grid = patch_embed(image, params.embed.w, params.embed.b, config.patch_size)
    if params.pos_embed is not None:
        n = tokens.shape[0]
        tokens = tokens + T.embedding_lookup(params.pos_embed, np.arange(n))
    skips = []
    wanted = set(_skip_depths(len(params.blocks)))
    for i, blk in enumerate(params.blocks, start=1):
        tokens = block_forward(config.mixer, tokens, blk)
        if i in wanted:
            skips.append((i, tokens))
    tokens = T.layer_norm(tokens, params.norm_g, params.norm_b)
    return tokens, grid, skips


# ---------------------------------------------------------------------------
# Swin
# ---------------------------------------------------------------------------

def init_swin(config: ModelConfig, image_extents, in_channels: int, rng, dtype) -> SwinParams:
    d = config.embed_dim
    p = config.patch_size
    rank = config.spatial_rank
    stages = []
    for i, depth in enumerate(config.depth):
        width = d * 2**i
        blocks = [init_block(config.mixer, width, config.num_heads, rng, dtype)
                  for _ in range(depth)]
        merge = None
        if i < SWIN_STAGES - 1:
            merge = _init_dense(rng, (2**rank) * width, 2 * width, dtype)
        stages.append(SwinStageParams(blocks=blocks, merge=merge))
    return SwinParams(
        embed=_init_dense(rng, in_channels * p**rank, d, dtype),
        stages=stages,
        norm_g=_ones(d * 2 ** (SWIN_STAGES - 1), dtype),
        norm_b=_zeros(d * 2 ** (SWIN_STAGES - 1), dtype),
    )


_MASK_CACHE: dict = {}


def _cached_mask(grid, window: int, shift: int) -> MX.ShiftMask:
    key = (tuple(grid), window, shift)
    mask = _MASK_CACHE.get(key)
    if mask is None:
        mask = MX.build_shift_mask(grid, window, shift)
        _MASK_CACHE[key] = mask
    return mask


def _windowed_mixer(config: ModelConfig, grid, shift: int):
    w = config.window_size

    def apply(normed: Tensor, mixer_params) -> Tensor:
        n, d = normed.shape
        x = T.reshape(normed, (*grid, d))
        if shift:
            x = cyclic_shift(x, shift)
        windows, padded = window_partition(x, w)
        mask = _cached_mask(padded, w, shift) if shift else None
        mixed = MX.mixer_forward(config.mixer, windows, mixer_params, mask)
        x = window_reverse(mixed, w, padded)
        if shift:
            x = cyclic_shift(x, -shift)
        return T.reshape(x, (n, d))

    return apply


def swin_backbone_features(image: Tensor, config: ModelConfig, params: SwinParams):
    """Returns (stage outputs [(tokens, grid), ...], final normed tokens)."""
    tokens, grid = patch_embed(image, params.embed.w, params.embed.b, config.patch_size)
    w = config.window_size
    stage_outputs = []
    for i, stage in enumerate(params.stages):
        if stage.blocks and any(g < w for g in grid):
            raise ValueError(
                f"swin stage {i} grid {grid} is smaller than window {w}; "
                f"use a larger image or smaller window"
            )
        # Shift only helps when windows have neighbors to exchange with;
        # a grid one window wide stays unshifted, as in standard Swin.
        can_shift = all(g >= 2 * w for g in grid)
        for j, blk in enumerate(stage.blocks):
            shift = w // 2 if (config.shift_enabled and can_shift and j % 2 == 1) else 0
            tokens = block_forward(
                config.mixer, tokens, blk, mix_apply=_windowed_mixer(config, grid, shift)
            )
        stage_outputs.append((tokens, grid))
        if stage.merge is not None:
            tokens, grid = patch_merge(tokens, grid, stage.merge)
    final = T.layer_norm(stage_outputs[-1][0], params.norm_g, params.norm_b)
    return stage_outputs, final


# ---------------------------------------------------------------------------
# Heads
# ---------------------------------------------------------------------------

def init_linear_head(d_in: int, n_out: int, rng, dtype) -> LinearHead:
    return LinearHead(proj=_init_dense(rng, d_in, n_out, dtype))


def linear_head_forward(tokens: Tensor, head: LinearHead) -> Tensor:
    pooled = T.reshape(T.reduce_mean(tokens, axis=0), (1, tokens.shape[-1]))
    return T.reshape(dense(pooled, head.proj), (head.proj.b.shape[0],))


def _decoder_widths(d: int, stages: int) -> list:
    widths = []
    c = d
    for _ in range(stages):
        c = max(c // 2, 16)
        widths.append(c)
    return widths


def init_vit_decoder(config: ModelConfig, out_channels: int, rng, dtype) -> ViTDecoder:
    d = config.embed_dim
    rank = config.spatial_rank
    stages = int(math.log2(config.patch_size))
    widths = _decoder_widths(d, stages)
    skip_count = len(_skip_depths(config.depth))
    deconvs, skip_projs, fuses = [], [], []
    c_prev = d
    for j, c in enumerate(widths, start=1):
        deconvs.append(_init_dense(rng, c_prev, c * 2**rank, dtype))
        if j <= skip_count:
            skip_projs.append(_init_dense(rng, d, c * (2**j) ** rank, dtype))
            fuses.append(_init_dense(rng, 2 * c, c, dtype))
        c_prev = c
    return ViTDecoder(
        deconvs=deconvs,
        skip_projs=skip_projs,
        fuses=fuses,
        out=_init_dense(rng, widths[-1], out_channels, dtype),
    )


def vit_decoder_forward(tokens: Tensor, skips: list, grid, config: ModelConfig,
                        head: ViTDecoder, out_spatial) -> Tensor:
    rank = config.spatial_rank
    x = tokens
    cur_grid = tuple(grid)
    for j, deconv in enumerate(head.deconvs, start=1):
        x = dense(x, deconv)
        c = x.shape[-1] // 2**rank
        x = grid_to_tokens(unpatchify(x, cur_grid, 2, c))
        cur_grid = tuple(g * 2 for g in cur_grid)
        if j <= len(head.skip_projs):
            skip_tokens = skips[j - 1][1] if j - 1 < len(skips) else tokens
            s = dense(skip_tokens, head.skip_projs[j - 1])
            cs = s.shape[-1] // (2**j) ** rank
            s = grid_to_tokens(unpatchify(s, grid, 2**j, cs))
            x = T.gelu(dense(T.concat([x, s], axis=1), head.fuses[j - 1]))
    out = dense(x, head.out)
    return tokens_to_grid(out, out_spatial)


def init_fpn_decoder(config: ModelConfig, out_channels: int, rng, dtype) -> FpnDecoder:
    d = config.embed_dim
    rank = config.spatial_rank
    laterals = [_init_dense(rng, d * 2**i, d, dtype) for i in range(SWIN_STAGES)]
    return FpnDecoder(
        laterals=laterals,
        fuse=_init_dense(rng, d, d, dtype),
        out=_init_dense(rng, d, out_channels * config.patch_size**rank, dtype),
    )


def fpn_decoder_forward(stage_outputs: list, config: ModelConfig, head: FpnDecoder,
                        out_channels: int) -> Tensor:
    base_grid = stage_outputs[0][1]
    rank = config.spatial_rank
    total = None
    for i, ((tokens, grid), lateral) in enumerate(zip(stage_outputs, head.laterals)):
        x = dense(tokens, lateral)
        if i > 0:
            factor = base_grid[0] // grid[0]
            spatial_axes = tuple(range(1, rank + 1))
            up = T.upsample_nearest(tokens_to_grid(x, grid), (factor,) * rank, spatial_axes)
            x = grid_to_tokens(up)
        total = x if total is None else total + x
    fused = T.gelu(dense(total, head.fuse))
    out = dense(fused, head.out)
    return unpatchify(out, base_grid, config.patch_size, out_channels)


# ---------------------------------------------------------------------------
# Model assembly
# ---------------------------------------------------------------------------

@dataclass
class Model:
    config: ModelConfig
    image_extents: tuple
    in_channels: int
    task: str
    num_classes: int
    backbone: object
    head: object

    def forward(self, image: Tensor) -> ForwardResult:
        if self.config.backbone == "vit":
            return vit_forward(image, self.config, self)
        return swin_forward(image, self.config, self)


def vit_forward(image: Tensor, config: ModelConfig, model: Model) -> ForwardResult:
    tokens, grid, skips = vit_backbone_features(image, config, model.backbone)
    if model.task == "features":
        return ForwardResult(tokens, None)
    if model.task == "classification":
        return ForwardResult(tokens, linear_head_forward(tokens, model.head))
    out = vit_decoder_forward(tokens, skips, grid, config, model.head, model.image_extents)
    if model.task == "denoising":
        out = out + image
    return ForwardResult(tokens, out)


def swin_forward(image: Tensor, config: ModelConfig, model: Model) -> ForwardResult:
    stage_outputs, final = swin_backbone_features(image, config, model.backbone)
    if model.task == "features":
        return ForwardResult(final, None)
    if model.task == "classification":
        return ForwardResult(final, linear_head_forward(final, model.head))
    out_channels = model.num_classes if model.task == "segmentation" else model.in_channels
    out = fpn_decoder_forward(stage_outputs, config, model.head, out_channels)
    if model.task == "denoising":
        out = out + image
    return ForwardResult(final, out)


def build_model(config: ModelConfig, image_extents, in_channels: int = 1,
                task: str = "features", num_classes: int = 4, seed: int = 0,
                dtype=np.float32) -> Model:
    """Construct backbone and task head parameters for one image shape."""
    if task not in TASK_KINDS:
        raise ValueError(f"task must be one of {TASK_KINDS}, got {task!r}")
    image_extents = tuple(int(e) for e in image_extents)
    if len(image_extents) != config.spatial_rank:
        raise ValueError(
            f"image rank {len(image_extents)} != config spatial_rank {config.spatial_rank}"
        )
    rng = np.random.default_rng(seed)
    if config.backbone == "vit":
        backbone = init_vit(config, image_extents, in_channels, rng, dtype)
    else:
        backbone = init_swin(config, image_extents, in_channels, rng, dtype)

    head = None
    if task == "classification":
        d_final = config.embed_dim if config.backbone == "vit" \
            else config.embed_dim * 2 ** (SWIN_STAGES - 1)
        head = init_linear_head(d_final, num_classes if num_classes else 2, rng, dtype)
    elif task in ("segmentation", "denoising"):
        out_channels = num_classes if task == "segmentation" else in_channels
        if config.backbone == "vit":
            head = init_vit_decoder(config, out_channels, rng, dtype)
        else:
            head = init_fpn_decoder(config, out_channels, rng, dtype)
    return Model(
        config=config,
        image_extents=image_extents,
        in_channels=in_channels,
        task=task,
        num_classes=num_classes if task != "classification" else (num_classes or 2),
        backbone=backbone,
        head=head,
    )


def param_count(config: ModelConfig, image_extents=None, in_channels: int = 1,
                task: str = "classification", num_classes: int = 4) -> dict:
    """Scalar parameter counts split into backbone and head."""
    from .params import count_parameters

    if image_extents is None:
        image_extents = (64,) * config.spatial_rank
    model = build_model(config, image_extents, in_channels, task, num_classes, seed=0)
    return {
        "backbone_params": count_parameters(model.backbone),
        "head_params": count_parameters(model.head) if model.head is not None else 0,
    }
