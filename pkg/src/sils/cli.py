"""Command-line entry point: render, split, train, eval, separate, latents.

Every command writes a run_manifest.json into its output directory recording
the resolved configuration.  Exit codes: 0 ok, 1 runtime error, 2 usage.
Flags may also be supplied via SILS_<FLAG> environment variables.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import SilsError
from .losses import LossWeights
from .presets import PRESETS, RENDER_PRESETS, preset_config
from .render import RenderConfig, manifest_hash, render_dataset
from .train import TrainConfig, Trainer

ENV_PREFIX = "SILS_"


def _env_default(name, fallback=None):
    return os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"), fallback)


def write_run_manifest(out_dir, command, config, seed, outputs):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "code_version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "outputs": [str(p) for p in outputs],
    }
    with open(out_dir / "run_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
    return manifest


def _add_common(p):
    p.add_argument("--seed", type=int, default=_env_default("seed"),
                   help="override the config seed")
    p.add_argument("--out", default=_env_default("out"), help="output directory")
    p.add_argument("--config", default=_env_default("config"),
                   help="YAML config file with key/value overrides")


def _load_config_file(path) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise SilsError(f"config file {path} must hold a mapping")
    return data


def _add_train_overrides(p):
    """Register --<field> and --weights.<field> flags from the dataclasses."""
    skip = {"weights", "seed"}
    for f in dataclasses.fields(TrainConfig):
        if f.name in skip:
            continue
        if f.type in ("bool", bool):
            p.add_argument(f"--{f.name.replace('_', '-')}", default=None,
                           type=lambda s: s.lower() in ("1", "true", "yes"))
        elif f.name in ("encoder_widths", "disc_widths"):
            p.add_argument(f"--{f.name.replace('_', '-')}", default=None,
                           type=lambda s: tuple(int(v) for v in s.split(",")))
        else:
            typ = {"int": int, "float": float}.get(str(f.type), str)
            p.add_argument(f"--{f.name.replace('_', '-')}", default=None, type=typ)
    for f in dataclasses.fields(LossWeights):
        p.add_argument(f"--weights.{f.name}", dest=f"weights__{f.name}",
                       default=None, type=float)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sils", description="unsupervised single image layer separation"
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render the synthetic shape dataset")
    _add_common(p)
    p.add_argument("--preset", choices=sorted(RENDER_PRESETS), default="synthetic")
    p.add_argument("--image-size", type=int, default=None)
    p.add_argument("--n-train", type=int, default=None)
    p.add_argument("--n-test", type=int, default=None)
    p.add_argument("--layers", type=int, default=2, choices=(2, 3))
    p.add_argument("--anti-alias", action="store_true")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("split", help="scene-disjoint non-triplet split of a manifest")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--subset1-groups", default=None,
                   help="comma-separated group labels for the input subset")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a separation model")
    _add_common(p)
    p.add_argument("--preset", choices=sorted(PRESETS), default="smoke")
    p.add_argument("--data", required=True, help="dataset dir holding manifest.json")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    _add_train_overrides(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--metrics", default="mse,mse100",
                   help="comma list from mse,mse100,lmse,psnr,ssim")
    p.add_argument("--per-sample-csv", action="store_true", default=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("separate", help="separate input images with a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("inputs", nargs="+", help="input PNG files")
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("latents", help="export and analyze latent codes")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--n", type=int, default=200, help="samples per tag")
    p.set_defaults(func=cmd_latents)
    return parser


def _require_out(args, parser_hint="--out"):
    if not args.out:
        print(f"error: {parser_hint} is required", file=sys.stderr)
        sys.exit(2)
    return Path(args.out)


def cmd_render(args):
    out = _require_out(args)
    overrides = _load_config_file(args.config)
    kwargs = dict(RENDER_PRESETS[args.preset])
    kwargs.update(overrides)
    kwargs["n_layers"] = args.layers
    for key, val in (
        ("image_size", args.image_size),
        ("n_train", args.n_train),
        ("n_test", args.n_test),
        ("seed", args.seed),
    ):
        if val is not None:
            kwargs[key] = val
    if args.anti_alias:
        kwargs["anti_alias"] = True
    for k in ("size_range", "brightness_range"):
        if k in kwargs:
            kwargs[k] = tuple(kwargs[k])
    cfg = RenderConfig(**kwargs)
    manifest = render_dataset(cfg, out)
    write_run_manifest(out, "render", dataclasses.asdict(cfg), cfg.seed,
                       [out / "manifest.json"])
    print(f"rendered {cfg.n_train} train / {cfg.n_test} test scenes "
          f"({cfg.n_layers} layers) into {out}")
    print(f"manifest hash: {manifest_hash(manifest)}")


def cmd_split(args):
    from .data import DomainSample, split_non_triplet

    out = _require_out(args)
    with open(args.manifest) as fh:
        manifest = json.load(fh)
    records, groups = [], {}
    for entry in manifest["splits"].get("train", []):
        group = entry.get("scene_group")
        if group is None:
            print(f"error: scene {entry['scene_id']} has no scene_group",
                  file=sys.stderr)
            sys.exit(1)
        groups[entry["scene_id"]] = group
        for dom, rel in entry["files"].items():
            records.append(DomainSample(domain=dom, scene_id=entry["scene_id"],
                                        path=Path(rel), scene_group=group))
    subset1 = (args.subset1_groups.split(",") if args.subset1_groups else None)
    input_pool, layer_pool, test_pool = split_non_triplet(records, groups, subset1)
    split_doc = {
        "source_manifest": str(args.manifest),
        "input_scenes": sorted({r.scene_id for r in input_pool.samples}),
        "layer_scenes": sorted(
            {r.scene_id for pool in layer_pool.values() for r in pool.samples}
        ),
        "test_scenes": sorted({r.scene_id for r in test_pool.samples}),
    }
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "split.json", "w") as fh:
        json.dump(split_doc, fh, indent=2)
    write_run_manifest(out, "split", {"manifest": str(args.manifest),
                                      "subset1_groups": subset1},
                       args.seed, [out / "split.json"])
    print(f"split written to {out / 'split.json'}: "
          f"{len(split_doc['input_scenes'])} input scenes, "
          f"{len(split_doc['test_scenes'])} layer/test scenes")


def _resolved_train_config(args) -> TrainConfig:
    kwargs = preset_config(args.preset)
    kwargs.update(_load_config_file(args.config))
    weights = dict(kwargs.pop("weights", {}))
    for f in dataclasses.fields(TrainConfig):
        if f.name == "weights":
            continue
        val = getattr(args, f.name, None)
        if val is not None:
            kwargs[f.name] = val
    for f in dataclasses.fields(LossWeights):
        val = getattr(args, f"weights__{f.name}", None)
        if val is not None:
            weights[f.name] = val
    if args.seed is not None:
        kwargs["seed"] = int(args.seed)
    kwargs["weights"] = LossWeights(**weights)
    return TrainConfig(**kwargs)


def cmd_train(args):
    from .data import load_manifest, manifest_pools

    out = _require_out(args)
    cfg = _resolved_train_config(args)
    manifest = load_manifest(Path(args.data) / "manifest.json")
    pools = manifest_pools(manifest, args.data, split="train")
    trainer = Trainer(cfg)
    final = trainer.train(pools, out, resume_from=args.resume)
    _plot_loss_curves(out / "train_log.csv", out / "loss_curves.png")
    write_run_manifest(out, "train", cfg.to_dict(), cfg.seed,
                       [final, out / "train_log.csv", out / "loss_curves.png"])
    print(f"trained {trainer.step} steps; final checkpoint: {final}")


def _plot_loss_curves(log_path, fig_path):
    import csv as _csv

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with open(log_path) as fh:
        rows = list(_csv.DictReader(fh))
    if not rows:
        return
    steps = [int(r["step"]) for r in rows]
    fig, ax = plt.subplots(figsize=(8, 5))
    for key in ("ss", "gan_y", "gan_z", "cc_x", "cc_y", "cc_z", "total"):
        ax.plot(steps, [float(r[key]) for r in rows], label=key, linewidth=1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("symlog")
    ax.legend(ncol=4, fontsize=8)
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)


def cmd_eval(args):
    from .data import load_manifest
    from .metrics import evaluate_dataset

    out = _require_out(args)
    trainer = Trainer.from_checkpoint(args.checkpoint)
    manifest = load_manifest(Path(args.data) / "manifest.json")
    metric_names = tuple(args.metrics.split(","))
    report = evaluate_dataset(trainer, manifest["splits"]["test"], args.data,
                              metric_names)
    out.mkdir(parents=True, exist_ok=True)
    report.write_json(out / "report.json")
    outputs = [out / "report.json"]
    if args.per_sample_csv:
        report.write_csv(out / "per_sample.csv")
        outputs.append(out / "per_sample.csv")
    _plot_metric_bars(report, out / "metrics.png")
    outputs.append(out / "metrics.png")
    write_run_manifest(out, "eval",
                       {"checkpoint": args.checkpoint, "data": args.data,
                        "metrics": list(metric_names)},
                       args.seed, outputs)
    print(report.console_table())


def _plot_metric_bars(report, fig_path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    avg = report.averages()
    fig, axes = plt.subplots(1, len(report.metrics),
                             figsize=(3.2 * len(report.metrics), 3.4),
                             squeeze=False)
    for ax, m in zip(axes[0], report.metrics):
        doms = report.domains + ["avg"]
        ax.bar(doms, [avg[m][d] for d in doms])
        ax.set_title(m)
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)


def cmd_separate(args):
    from .imaging import from_log_domain, load_png, save_png

    out = _require_out(args)
    trainer = Trainer.from_checkpoint(args.checkpoint)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for inp in args.inputs:
        stem = Path(inp).stem
        result = trainer.separate(load_png(inp))
        for dom, img in result["layers"].items():
            if img.range_tag != "unit":
                img = from_log_domain(img)
            dst = out / f"{stem}_{dom}.png"
            save_png(dst, img)
            outputs.append(dst)
        recon = result["recon"]
        if recon.range_tag != "unit":
            recon = from_log_domain(recon)
        dst = out / f"{stem}_recon.png"
        save_png(dst, recon)
        outputs.append(dst)
    write_run_manifest(out, "separate",
                       {"checkpoint": args.checkpoint,
                        "inputs": list(args.inputs)},
                       args.seed, outputs)
    print(f"wrote {len(outputs)} images to {out}")


def cmd_latents(args):
    from .data import load_manifest, manifest_pools
    from .latents import (
        cluster_separation,
        export_latents,
        project_2d,
        render_scatter,
        write_projection_csv,
    )

    out = _require_out(args)
    trainer = Trainer.from_checkpoint(args.checkpoint)
    manifest = load_manifest(Path(args.data) / "manifest.json")
    pools = manifest_pools(manifest, args.data, split=args.split)
    seed = int(args.seed) if args.seed is not None else 0
    dump = export_latents(trainer, pools, n_samples=args.n, seed=seed)
    coords, _ = project_2d(dump)
    stats = cluster_separation(dump)
    out.mkdir(parents=True, exist_ok=True)
    dump.write_csv(out / "latents.csv")
    write_projection_csv(out / "projection.csv", dump, coords)
    render_scatter(out / "scatter.png", dump, coords)
    with open(out / "cluster_stats.json", "w") as fh:
        json.dump(stats, fh, indent=2)
    write_run_manifest(out, "latents",
                       {"checkpoint": args.checkpoint, "n": args.n,
                        "split": args.split},
                       seed, [out / "latents.csv", out / "projection.csv",
                              out / "scatter.png", out / "cluster_stats.json"])
    print(json.dumps(stats, indent=2))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except SilsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
