"""Runtime and peak-memory scaling of mixers as context length grows.

Two granularities: bare block stacks on a flat token sequence (context
length swept directly), and full backbones where context follows from
patch or window size.  Timed runs exclude task heads and disable the
non-finite debug checks; peak memory is the allocator high-water mark
over one forward+backward pass.

The sweep CSV has exactly the columns::

    backbone,mixer,rank,patch,window,tokens,mean_time_s,peak_bytes,flops,status

where ``flops`` counts mixer applications only (the quantity whose
scaling is under study), ``status`` is ``ok`` or ``X`` for a run that
exceeded the memory budget, and the patch/window column not applicable
to the family is left empty.  Alongside the CSV, ``run_sweep`` renders
one time and one memory figure per (backbone, mixer) pair as SVG.

Wall-clock numbers depend on BLAS threading; pin threads (e.g. via the
``mixerbench`` CLI's ``MIXERBENCH_THREADS``) before importing numpy if
you need single-thread comparability.
"""

from __future__ import annotations

import csv
import gc
import math
import os
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from . import mixers as MX
from .backbones import (
    ModelConfig,
    Model,
    build_model,
    context_length,
    init_token_stack,
    token_stack_forward,
    swin_backbone_features,
    vit_backbone_features,
)
from .params import named_parameters
from .tensor import MemoryBudgetExceeded

__all__ = [
    "BenchRecord",
    "SweepSpec",
    "measure",
    "token_stack_run",
    "model_features_run",
    "time_fwd_bwd",
    "peak_memory",
    "scaling_curve",
    "fit_loglog_slope",
    "speedup_percent",
    "sweep_flops",
    "run_sweep",
    "write_records_csv",
    "render_figures",
]

CSV_COLUMNS = ("backbone", "mixer", "rank", "patch", "window", "tokens",
               "mean_time_s", "peak_bytes", "flops", "status")

VIT_SWEEP_PATCHES = (32, 16, 8, 4)
SWIN_SWEEP_WINDOWS = (4, 8, 16)
DEFAULT_BUDGET_BYTES = 4 << 30


@dataclass
class BenchRecord:
    config: ModelConfig
    context_length: int
    mean_time_s: object      # float or None when status is X
    trial_times_s: list
    peak_bytes: object       # int or None
    flops: int
    status: str = "ok"


@dataclass
class SweepSpec:
    backbone: str = "vit"
    mixers: tuple = MX.MIXER_KINDS
    rank: int = 2
    extent: int = 256
    embed_dim: int = 64
    depth: object = 2
    num_heads: int = 4
    shift_enabled: object = None
    patches: tuple = VIT_SWEEP_PATCHES
    windows: tuple = SWIN_SWEEP_WINDOWS
    swin_patch: int = 2
    in_channels: int = 1
    warmup_trials: int = 3
    timed_trials: int = 10
    budget_bytes: int = DEFAULT_BUDGET_BYTES
    seed: int = 0


# ---------------------------------------------------------------------------
# Single-cell measurement
# ---------------------------------------------------------------------------

def _clear_grads(root) -> None:
    for _, p in named_parameters(root):
        p.grad = None


def token_stack_run(kind: str, n: int, d: int, depth: int = 2, num_heads: int = 4,
                    seed: int = 0, dtype=np.float32):
    """One forward+backward of a bare block stack as a zero-arg callable."""
    blocks = init_token_stack(kind, d, depth, num_heads, seed, dtype)
    x = T.constant(np.random.default_rng(seed).normal(size=(n, d)).astype(dtype))

    def run():
        with T.Tape() as tape:
            out = token_stack_forward(kind, x, blocks)
            loss = T.reduce_sum(out)
        T.backward(tape, loss)
        _clear_grads(blocks)          # restore allocator state between calls

    return run


def model_features_run(model: Model, image=None, seed: int = 0):
    """One forward+backward of a backbone, task head excluded."""
    if image is None:
        rng = np.random.default_rng(seed)
        image = rng.normal(size=(model.in_channels, *model.image_extents)).astype(np.float32)
    image = T.constant(np.asarray(image))

    def run():
        with T.Tape() as tape:
            if model.config.backbone == "vit":
                tokens, _, _ = vit_backbone_features(image, model.config, model.backbone)
            else:
                _, tokens = swin_backbone_features(image, model.config, model.backbone)
            loss = T.reduce_sum(tokens)
        T.backward(tape, loss)
        _clear_grads(model)           # restore allocator state between calls

    return run


def measure(run, warmup: int = 1, trials: int = 3, budget_bytes=None):
    """(mean seconds, peak bytes, per-trial seconds) for a run callable.

    The first call doubles as the memory probe; timing uses the
    monotonic performance counter with debug finite checks disabled.
    Raises :class:`MemoryBudgetExceeded` if any call breaks the budget.
    """
    if trials < 1:
        raise ValueError(f"need at least one trial, got {trials}")
    gc.collect()
    with T.no_finite_checks(), T.memory_budget(budget_bytes):
        T.reset_alloc_stats()
        base = T.alloc_stats()["current_bytes"]
        run()
        # delta over the starting live level: bytes attributable to the run
        # itself, independent of whatever else the process holds
        peak = T.alloc_stats()["peak_bytes"] - base
        for _ in range(warmup):
            run()
        times = []
        for _ in range(trials):
            start = time.perf_counter()
            run()
            times.append(time.perf_counter() - start)
    return float(np.mean(times)), int(peak), times


def time_fwd_bwd(model: Model, image=None, trials: int = 10, warmup: int = 3,
                 budget_bytes=None, seed: int = 0) -> BenchRecord:
    """Time one backbone's forward+backward at batch size one.

    Task heads are excluded and the backward pass runs from the scalar
    sum of the output tokens.  A run that breaks ``budget_bytes`` yields
    an ``X`` record instead of raising.
    """
    tokens = context_length(model.config, model.image_extents)
    flops = sweep_flops(model.config, model.image_extents, model)
    try:
        mean_s, peak, times = measure(model_features_run(model, image, seed),
                                      warmup=warmup, trials=trials,
                                      budget_bytes=budget_bytes)
    except MemoryBudgetExceeded:
        return BenchRecord(model.config, tokens, None, [], None, 0, "X")
    return BenchRecord(model.config, tokens, mean_s, times, peak, flops, "ok")


def peak_memory(model: Model, image=None, seed: int = 0) -> int:
    """Allocator high-water mark over one forward+backward, heads excluded."""
    _, peak, _ = measure(model_features_run(model, image, seed), warmup=0, trials=1)
    return peak


def scaling_curve(kind: str, lengths, d: int = 64, depth: int = 2, num_heads: int = 4,
                  warmup: int = 1, trials: int = 3, seed: int = 0) -> list:
    """[(n, mean seconds, peak bytes)] for a block stack across lengths."""
    out = []
    for n in lengths:
        mean_s, peak, _ = measure(token_stack_run(kind, int(n), d, depth, num_heads, seed),
                                  warmup=warmup, trials=trials)
        out.append((int(n), mean_s, peak))
    return out


def fit_loglog_slope(xs, ys):
    """Least-squares slope of log y against log x, with the max residual."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.size != ys.size or xs.size < 3:
        raise ValueError("need at least three points to fit a slope")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("log-log fit needs positive data")
    slope, intercept = np.polyfit(np.log(xs), np.log(ys), 1)
    resid = np.log(ys) - (slope * np.log(xs) + intercept)
    return float(slope), float(np.abs(resid).max())


def speedup_percent(baseline_s: float, candidate_s: float) -> float:
    """(t_baseline - t_candidate) / t_baseline as a percentage."""
    if baseline_s <= 0:
        raise ValueError(f"baseline time must be positive, got {baseline_s}")
    return 100.0 * (baseline_s - candidate_s) / baseline_s


# ---------------------------------------------------------------------------
# FLOP accounting for full backbones
# ---------------------------------------------------------------------------

def _first_mixer_params(blocks):
    return blocks[0].mixer if blocks else None


def sweep_flops(config: ModelConfig, image_extents, model: Model) -> int:
    """Mixer FLOPs in one backbone forward (everything else excluded)."""
    if config.backbone == "vit":
        n = context_length(config, image_extents)
        params = _first_mixer_params(model.backbone.blocks)
        if params is None:
            return 0
        return config.depth * MX.flop_count(config.mixer, n, config.embed_dim, params)
    total = 0
    w = config.window_size
    tokens_per_window = w**config.spatial_rank
    grid = tuple(e // config.patch_size for e in image_extents)
    for i, stage in enumerate(model.backbone.stages):
        params = _first_mixer_params(stage.blocks)
        if params is not None:
            num_windows = int(np.prod([math.ceil(g / w) for g in grid]))
            width = config.embed_dim * 2**i
            total += len(stage.blocks) * num_windows * MX.flop_count(
                config.mixer, tokens_per_window, width, params
            )
        grid = tuple(g // 2 for g in grid)
    return total


# ---------------------------------------------------------------------------
# The sweep
# ---------------------------------------------------------------------------

def _sweep_cells(spec: SweepSpec):
    if spec.backbone == "vit":
        for mixer in spec.mixers:
            for patch in spec.patches:
                yield mixer, patch, None
    else:
        for mixer in spec.mixers:
            for window in spec.windows:
                yield mixer, spec.swin_patch, window


def _cell_config(spec: SweepSpec, mixer: str, patch, window) -> ModelConfig:
    kwargs = dict(
        backbone=spec.backbone,
        mixer=mixer,
        spatial_rank=spec.rank,
        embed_dim=spec.embed_dim,
        depth=spec.depth,
        num_heads=spec.num_heads,
    )
    if spec.backbone == "vit":
        kwargs["patch_size"] = patch
    else:
        kwargs["patch_size"] = patch
        kwargs["window_size"] = window
        kwargs["shift_enabled"] = spec.shift_enabled
    return ModelConfig(**kwargs)


def run_sweep(spec: SweepSpec) -> list:
    """Measure every (mixer, context) cell of one backbone family."""
    extents = (spec.extent,) * spec.rank
    records = []
    for mixer, patch, window in _sweep_cells(spec):
        config = _cell_config(spec, mixer, patch, window)
        try:
            with T.memory_budget(spec.budget_bytes):
                model = build_model(config, extents, spec.in_channels,
                                    task="features", seed=spec.seed)
        except MemoryBudgetExceeded:
            records.append(BenchRecord(config, context_length(config, extents),
                                       None, [], None, 0, "X"))
            continue
        records.append(time_fwd_bwd(model, trials=spec.timed_trials,
                                    warmup=spec.warmup_trials,
                                    budget_bytes=spec.budget_bytes, seed=spec.seed))
    return records


def write_records_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            c = r.config
            writer.writerow([
                c.backbone, c.mixer, c.spatial_rank,
                c.patch_size,
                "" if c.backbone == "vit" else c.window_size,
                r.context_length,
                "" if r.mean_time_s is None else f"{r.mean_time_s:.6g}",
                "" if r.peak_bytes is None else r.peak_bytes,
                r.flops, r.status,
            ])


def render_figures(records, out_dir) -> list:
    """Log-log time and memory curves per (backbone, mixer); returns paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)
    pairs = sorted({(r.config.backbone, r.config.mixer) for r in records})
    paths = []
    for backbone, mixer in pairs:
        rows = [r for r in records
                if r.config.backbone == backbone and r.config.mixer == mixer
                and r.status == "ok"]
        if not rows:
            continue
        rows.sort(key=lambda r: r.context_length)
        xs = [r.context_length for r in rows]
        for quantity, ys, ylabel in (
            ("time", [r.mean_time_s for r in rows], "mean forward+backward [s]"),
            ("mem", [r.peak_bytes for r in rows], "peak tensor bytes"),
        ):
            fig, ax = plt.subplots(figsize=(5, 4))
            ax.loglog(xs, ys, marker="o")
            ax.set_xlabel("context length [tokens]")
            ax.set_ylabel(ylabel)
            ax.set_title(f"{backbone} / {mixer}")
            ax.grid(True, which="both", alpha=0.3)
            path = os.path.join(out_dir, f"{backbone}_{mixer}_{quantity}.svg")
            fig.savefig(path, bbox_inches="tight")
            plt.close(fig)
            paths.append(path)
    return paths
