"""Command line front end: bench, train, eval, sweep-context, selftest.

Model flags mirror the config field names one-to-one (``--patch-size``,
``--embed-dim``, ...), with short aliases ``--rank``, ``--patch`` and
``--window``.  A ``--config`` file provides defaults that explicit flags
override.

Commands that write files take ``--out`` and leave exactly one
``manifest.json`` there recording the command line, config hash, seed,
artifact paths, and tool version.

Timing commands pin BLAS to ``MIXERBENCH_THREADS`` threads (default 1)
by setting the usual environment knobs before numpy is first imported;
for that to work this module must stay importable without numpy, so all
heavy imports happen inside the command handlers.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

__all__ = ["main", "build_parser"]

_TIMING_COMMANDS = {"bench", "sweep-context"}
_THREAD_VARS = ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS")


def _pin_threads(command: str) -> None:
    value = os.environ.get("MIXERBENCH_THREADS")
    if value is None:
        if command not in _TIMING_COMMANDS:
            return
        value = "1"
    for var in _THREAD_VARS:
        os.environ[var] = value


# ---------------------------------------------------------------------------
# Shared flag groups
# ---------------------------------------------------------------------------

def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--config", metavar="PATH",
                   help="key = value file with model fields; flags override it")
    g.add_argument("--backbone", choices=("vit", "swin"))
    g.add_argument("--mixer", choices=("attention", "hyena", "mamba_vision"))
    g.add_argument("--spatial-rank", "--rank", dest="spatial_rank", type=int,
                   help="2 for images, 3 for volumes")
    g.add_argument("--patch-size", "--patch", dest="patch_size", type=int)
    g.add_argument("--window-size", "--window", dest="window_size", type=int)
    g.add_argument("--embed-dim", dest="embed_dim", type=int)
    g.add_argument("--depth", help="int, or comma separated per-stage list for swin")
    g.add_argument("--num-heads", dest="num_heads", type=int)
    g.add_argument("--shift-enabled", dest="shift_enabled", choices=("on", "off"))
    g.add_argument("--pos-embed", dest="pos_embed", choices=("learned", "none"))


def _add_run_flags(p: argparse.ArgumentParser, extent: int = 256) -> None:
    p.add_argument("--extent", type=int, default=extent,
                   help=f"isotropic image extent per spatial axis (default {extent})")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")


def _parse_depth(text: str):
    parts = [p for p in text.split(",") if p.strip()]
    return int(parts[0]) if len(parts) == 1 else tuple(int(p) for p in parts)


def _resolve_config(args):
    from . import backbones

    overrides = {}
    for name in ("backbone", "mixer", "spatial_rank", "patch_size", "window_size",
                 "embed_dim", "num_heads", "pos_embed"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "depth", None) is not None:
        overrides["depth"] = _parse_depth(args.depth)
    if getattr(args, "shift_enabled", None) is not None:
        overrides["shift_enabled"] = args.shift_enabled == "on"

    if getattr(args, "config", None):
        import dataclasses

        base = backbones.parse_config_file(args.config)
        return dataclasses.replace(base, **overrides)
    return backbones.ModelConfig(**overrides)


def _write_manifest(out_dir: str, argv: list, seed: int, config_hash, artifacts: list) -> str:
    from . import __version__

    manifest = {
        "command": " ".join(["mixerbench", *argv]),
        "config_hash": config_hash,
        "seed": seed,
        "artifacts": sorted(artifacts),
        "tool_version": __version__,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _relative(paths, out_dir: str) -> list:
    return [os.path.relpath(p, out_dir) for p in paths]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_bench(args, argv) -> int:
    from . import backbones, bench

    config = _resolve_config(args)
    extents = (args.extent,) * config.spatial_rank
    model = backbones.build_model(config, extents, args.in_channels,
                                  task="features", seed=args.seed)
    record = bench.time_fwd_bwd(model, trials=args.trials, warmup=args.warmup,
                                budget_bytes=int(args.budget_gb * 2**30),
                                seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "bench.csv")
    bench.write_records_csv([record], csv_path)
    figures = bench.render_figures([record], args.out)
    _write_manifest(args.out, argv, args.seed, backbones.config_hash(config),
                    ["bench.csv"] + _relative(figures, args.out))
    if record.status == "ok":
        print(f"{config.backbone}/{config.mixer} tokens={record.context_length} "
              f"mean={record.mean_time_s:.4g}s peak={record.peak_bytes}B "
              f"-> {csv_path}")
    else:
        print(f"{config.backbone}/{config.mixer} tokens={record.context_length} "
              f"exceeded the memory budget -> {csv_path}")
    return 0


def _shift_modes(choice):
    if choice is None:
        return [(None, "sweep.csv", "")]
    if choice == "both":
        return [(True, "sweep_shift_on.csv", "shift_on"),
                (False, "sweep_shift_off.csv", "shift_off")]
    return [(choice == "on", "sweep.csv", "")]


def cmd_sweep(args, argv) -> int:
    import hashlib

    from . import backbones, bench

    mixers = tuple(args.mixers.split(",")) if args.mixers else None
    os.makedirs(args.out, exist_ok=True)
    artifacts = []
    hasher = hashlib.sha256()
    for shift, csv_name, fig_sub in _shift_modes(args.shift_enabled):
        kwargs = dict(
            backbone=args.backbone,
            rank=args.spatial_rank if args.spatial_rank else 2,
            extent=args.extent,
            shift_enabled=shift,
            warmup_trials=args.warmup,
            timed_trials=args.trials,
            budget_bytes=int(args.budget_gb * 2**30),
            seed=args.seed,
        )
        if mixers:
            kwargs["mixers"] = mixers
        if args.embed_dim:
            kwargs["embed_dim"] = args.embed_dim
        if args.depth:
            kwargs["depth"] = _parse_depth(args.depth)
        if args.num_heads:
            kwargs["num_heads"] = args.num_heads
        if args.patches:
            kwargs["patches"] = tuple(int(p) for p in args.patches.split(","))
        if args.windows:
            kwargs["windows"] = tuple(int(w) for w in args.windows.split(","))
        if args.swin_patch:
            kwargs["swin_patch"] = args.swin_patch
        records = bench.run_sweep(bench.SweepSpec(**kwargs))
        for r in records:
            hasher.update(backbones.config_text(r.config).encode())
        csv_path = os.path.join(args.out, csv_name)
        bench.write_records_csv(records, csv_path)
        fig_dir = os.path.join(args.out, fig_sub) if fig_sub else args.out
        figures = bench.render_figures(records, fig_dir)
        artifacts += [csv_name] + _relative(figures, args.out)
        done = sum(r.status == "ok" for r in records)
        print(f"{csv_name}: {done}/{len(records)} cells measured")
    _write_manifest(args.out, argv, args.seed, hasher.hexdigest(), artifacts)
    return 0


def cmd_train(args, argv) -> int:
    from . import backbones, tasks, trainer

    config = _resolve_config(args)
    extents = (args.extent,) * config.spatial_rank
    dataset = tasks.make_dataset(args.task, args.samples, extents, seed=args.seed)
    model = backbones.build_model(config, extents, in_channels=1, task=args.task,
                                  num_classes=args.num_classes, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    tcfg = trainer.TrainConfig(
        steps=args.steps,
        batch_size=args.batch_size,
        lr_max=args.lr_max,
        warmup_frac=args.warmup_frac,
        eval_every=args.eval_every,
        seed=args.seed,
        augment=args.augment,
        log_path=os.path.join(args.out, "loss.csv"),
        checkpoint_path=os.path.join(args.out, "best.ckpt"),
    )
    result = trainer.train(model, dataset, tcfg)
    metrics = trainer.evaluate(model, dataset, result.splits["test"])
    payload = {
        "task": args.task,
        "steps": args.steps,
        "best_step": result.best_step,
        "best_val_loss": result.best_val_loss,
        **metrics,
    }
    with open(os.path.join(args.out, "metrics.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(args.out, argv, args.seed, backbones.config_hash(config),
                    ["loss.csv", "best.ckpt", "metrics.json"])
    summary = ", ".join(f"{k}={v:.4f}" for k, v in metrics.items()
                        if isinstance(v, float))
    print(f"trained {args.task} for {args.steps} steps; "
          f"best val loss {result.best_val_loss:.4g} at step {result.best_step}; {summary}")
    return 0


def cmd_eval(args, argv) -> int:
    from . import backbones, tasks, trainer

    config = _resolve_config(args)
    extents = (args.extent,) * config.spatial_rank
    model = backbones.build_model(config, extents, in_channels=1, task=args.task,
                                  num_classes=args.num_classes, seed=args.seed)
    info = trainer.load_checkpoint(args.checkpoint, model)
    dataset = tasks.make_dataset(args.task, args.samples, extents, seed=args.seed)
    splits = trainer.split_dataset(len(dataset), args.seed)
    metrics = trainer.evaluate(model, dataset, splits["test"])
    payload = {
        "task": args.task,
        "checkpoint_step": info["step"],
        "checkpoint_val_loss": info["val_loss"],
        **metrics,
    }
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "metrics.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(args.out, argv, args.seed, backbones.config_hash(config),
                    ["metrics.json"])
    summary = ", ".join(f"{k}={v:.4f}" for k, v in metrics.items()
                        if isinstance(v, float))
    print(f"evaluated {args.task} checkpoint from step {info['step']}; {summary}")
    return 0


def cmd_selftest(args, argv) -> int:
    from . import selfcheck

    results = selfcheck.run_all()
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name}: {r.detail}")
    failed = [r for r in results if not r.ok]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixerbench",
        description="Context-length scaling benchmark for token-mixing operators.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", help="time one backbone cell (forward+backward)")
    _add_model_flags(p)
    _add_run_flags(p)
    p.add_argument("--in-channels", dest="in_channels", type=int, default=1)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--budget-gb", dest="budget_gb", type=float, default=4.0,
                   help="tensor memory budget; exceeding it marks the cell X")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep-context",
                       help="sweep context length via patch or window size")
    p.add_argument("--backbone", choices=("vit", "swin"), default="vit")
    p.add_argument("--mixers", help="comma separated subset (default: all three)")
    p.add_argument("--spatial-rank", "--rank", dest="spatial_rank", type=int)
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--depth", help="int, or comma separated per-stage list for swin")
    p.add_argument("--num-heads", dest="num_heads", type=int)
    p.add_argument("--patches", help="vit patch sizes, comma separated (default 32,16,8,4)")
    p.add_argument("--windows", help="swin window sizes, comma separated (default 4,8,16)")
    p.add_argument("--swin-patch", dest="swin_patch", type=int,
                   help="swin embedding patch size (default 2)")
    p.add_argument("--shift-enabled", dest="shift_enabled",
                   choices=("on", "off", "both"),
                   help="swin window shifting; 'both' writes one CSV per setting")
    _add_run_flags(p)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--budget-gb", dest="budget_gb", type=float, default=4.0)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="train a task head on synthetic data")
    _add_model_flags(p)
    _add_run_flags(p, extent=64)
    p.add_argument("--task", required=True,
                   choices=("segmentation", "denoising", "classification"))
    p.add_argument("--samples", type=int, default=32, help="dataset size before the split")
    p.add_argument("--num-classes", dest="num_classes", type=int, default=4)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=4)
    p.add_argument("--lr-max", dest="lr_max", type=float, default=3e-4)
    p.add_argument("--warmup-frac", dest="warmup_frac", type=float, default=0.25)
    p.add_argument("--eval-every", dest="eval_every", type=int, default=25)
    p.add_argument("--augment", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the held-out split")
    _add_model_flags(p)
    _add_run_flags(p, extent=64)
    p.add_argument("--task", required=True,
                   choices=("segmentation", "denoising", "classification"))
    p.add_argument("--samples", type=int, default=32)
    p.add_argument("--num-classes", dest="num_classes", type=int, default=4)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("selftest", help="run the built-in oracle checks")
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    _pin_threads(args.command)
    try:
        return args.func(args, argv)
    except Exception as exc:  # noqa: BLE001 - one-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
