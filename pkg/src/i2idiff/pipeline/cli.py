"""Command-line interface.

Subcommands: train, sample, eval, panorama, diversity, make-fixtures.
Every run takes a mandatory ``--seed``; given the same seed, config and
inputs, outputs are bit-identical. An optional JSON config file supplies
``{"train": {...}, "arch": {...}}`` sections; individual flags override it.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import schedule as sched, tasks as task_ops
from ..denoiser import ArchitectureConfig
from ..extractor import train_extractor
from . import apps, data as data_mod, training
from .checkpoint import load_checkpoint, save_checkpoint


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError("config file must hold a JSON object")
    return cfg


def _tuple_fields(section: dict, fields: dict[str, type]) -> dict:
    out = dict(section)
    for name in ("tasks", "schedule", "channel_multipliers",
                 "attention_resolutions"):
        if name in out and out[name] is not None:
            out[name] = tuple(out[name])
    return out


def _build_configs(args) -> tuple[training.TrainConfig, ArchitectureConfig]:
    file_cfg = _load_config_file(args.config)
    train_kw = _tuple_fields(file_cfg.get("train", {}), {})
    arch_kw = _tuple_fields(file_cfg.get("arch", {}), {})
    overrides = {
        "batch_size": args.batch_size, "total_steps": args.steps,
        "learning_rate": args.lr, "warmup_steps": args.warmup,
        "loss_p": args.loss_p, "seed": args.seed,
    }
    if args.tasks:
        overrides["tasks"] = tuple(args.tasks.split(","))
    for k, v in overrides.items():
        if v is not None:
            train_kw[k] = v
    if args.base_channels is not None:
        arch_kw["base_channels"] = args.base_channels
    if args.variant is not None:
        arch_kw["variant"] = args.variant
    if args.size is not None:
        arch_kw["input_size"] = args.size
    return training.TrainConfig(**train_kw), ArchitectureConfig(**arch_kw)


def _load_images(args, rng: np.random.Generator, n: int,
                 size: int):
    """Training/eval images plus labels (labels only for synthetic data)."""
    if args.data == "synthetic":
        return data_mod.make_color_modes_dataset(n, size=size, rng=rng)
    images = list(data_mod.load_dataset(args.data, args.crop_policy, size,
                                        rng, strict=not args.skip_bad))
    return np.stack(images), None


def _parse_schedule(spec: str, meta: dict | None) -> sched.NoiseSchedule:
    if spec == "train":
        if meta is None:
            raise ValueError("no checkpoint metadata to take schedule from")
        return sched.build_linear_schedule(*meta["train_config"]["schedule"])
    if spec == "default":
        return sched.inference_schedule()
    parts = spec.split(",")
    if len(parts) != 3:
        raise ValueError("schedule must be 'train', 'default' or "
                         "'beta_start,beta_end,steps'")
    return sched.build_linear_schedule(float(parts[0]), float(parts[1]),
                                       int(parts[2]))


def _get_extractor(args, rng: np.random.Generator, size: int):
    from ..extractor import FeatureExtractor

    path = getattr(args, "extractor", None)
    if path and Path(path).exists():
        arrays, meta = load_checkpoint(path)
        ex = FeatureExtractor(meta["num_classes"], np.random.default_rng(0),
                              meta["base_channels"], meta["in_channels"])
        ex.load_state_dict(arrays)
        return ex
    images, labels = data_mod.make_color_modes_dataset(
        2048, size=size, rng=np.random.default_rng(args.seed + 1))
    ex = train_extractor(images, labels, int(labels.max()) + 1,
                         np.random.default_rng(args.seed + 2))
    if path:
        save_checkpoint(path, ex.state_dict(),
                        {"kind": "extractor", "num_classes": ex.num_classes,
                         "base_channels": ex.conv1.weight.data.shape[0],
                         "in_channels": ex.conv1.weight.data.shape[1]})
    return ex


def _save_png(path, img: np.ndarray) -> None:
    from PIL import Image

    u8 = np.clip(np.round((img + 1.0) * 127.5), 0, 255).astype(np.uint8)
    Image.fromarray(u8.transpose(1, 2, 0)).save(path)


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    if args.resume:
        state = training.load_train_state(args.resume)
        if args.steps is not None:
            state.config = replace(state.config, total_steps=args.steps)
    else:
        tc, ac = _build_configs(args)
        state = training.TrainState(tc, ac)
    data_rng = np.random.default_rng(state.config.seed + 1000)
    images, _ = _load_images(args, data_rng, args.num_images,
                             state.arch.input_size)
    training.train(state, images, log_every=args.log_every)
    training.save_train_state(args.out, state)
    print(f"saved {args.out} at step {state.step}")
    return 0


def cmd_sample(args) -> int:
    model, meta = training.load_model(args.checkpoint, use_ema=not args.raw_params)
    schedule = _parse_schedule(args.inference_schedule, meta)
    rng = np.random.default_rng(args.seed)
    size = model.config.input_size
    images, _ = _load_images(args, np.random.default_rng(args.seed + 1),
                             args.num, size)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(min(args.num, images.shape[0])):
        s = task_ops.make_task_sample(args.task, images[i], rng)
        y = apps.sample_for_task(model, s, schedule, rng)
        _save_png(out_dir / f"{i:04d}_x.png", s.x)
        _save_png(out_dir / f"{i:04d}_sample.png", y)
        _save_png(out_dir / f"{i:04d}_y0.png", s.y0)
    print(f"wrote {min(args.num, images.shape[0])} samples to {out_dir}")
    return 0


def cmd_eval(args) -> int:
    model, meta = training.load_model(args.checkpoint, use_ema=not args.raw_params)
    schedule = _parse_schedule(args.inference_schedule, meta)
    rng = np.random.default_rng(args.seed)
    size = model.config.input_size
    extractor = _get_extractor(args, rng, size)
    images, labels = _load_images(args, np.random.default_rng(args.seed + 1),
                                  args.num, size)
    task = args.task
    conds = np.stack([task_ops.make_task_sample(task, images[i], rng).x
                      for i in range(images.shape[0])])
    rec = apps.evaluate_model(model, extractor, conds, images, schedule, rng,
                              labels=labels)
    rec["task"] = task
    rec["checkpoint"] = str(args.checkpoint)
    rec["step"] = meta.get("step")
    apps.write_records(args.out, [rec])
    print(apps.format_table([rec]), end="")
    return 0


def cmd_panorama(args) -> int:
    model, meta = training.load_model(args.checkpoint, use_ema=not args.raw_params)
    schedule = _parse_schedule(args.inference_schedule, meta)
    rng = np.random.default_rng(args.seed)
    size = model.config.input_size
    images, _ = _load_images(args, np.random.default_rng(args.seed + 1),
                             1, size)
    canvas, traces = apps.panorama_uncrop(model, images[0], schedule, rng,
                                          n_steps=args.steps)
    _save_png(args.out, canvas)
    print(f"panorama {canvas.shape[2]}x{canvas.shape[1]} "
          f"({len(traces)} extensions) -> {args.out}")
    return 0


def cmd_diversity(args) -> int:
    model_l1, meta1 = training.load_model(args.checkpoint_l1)
    model_l2, _ = training.load_model(args.checkpoint_l2)
    schedule = _parse_schedule(args.inference_schedule, meta1)
    rng = np.random.default_rng(args.seed)
    size = model_l1.config.input_size
    extractor = _get_extractor(args, rng, size)
    images, _ = _load_images(args, np.random.default_rng(args.seed + 1),
                             args.num, size)
    conds = np.stack([
        task_ops.make_task_sample(args.task, images[i], rng).x
        for i in range(images.shape[0])])
    report = apps.diversity_study(model_l1, model_l2, extractor, conds,
                                  schedule, rng, k=args.k, targets=images)
    with open(args.out, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    rows = [{"model": name, **{k: v for k, v in entry.items()
                               if not isinstance(v, list)}}
            for name, entry in report["models"].items()]
    print(apps.format_table(rows), end="")
    print(f"report -> {args.out}")
    return 0


def cmd_make_fixtures(args) -> int:
    rng = np.random.default_rng(args.seed)
    images, _ = _load_images(args, np.random.default_rng(args.seed + 1),
                             args.num, args.size or 16)
    tasks = tuple(args.tasks.split(",")) if args.tasks else task_ops.TASKS
    samples = task_ops.multi_task_batch(images, tasks, rng)
    manifest = task_ops.export_fixtures(samples, args.out, args.seed)
    print(f"wrote {len(samples)} fixtures, manifest {manifest}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="i2idiff",
                                description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, checkpoint: bool = True):
        sp.add_argument("--seed", type=int, required=True,
                        help="rng seed; runs are bit-identical per seed")
        sp.add_argument("--data", default="synthetic",
                        help="'synthetic' or an image directory")
        sp.add_argument("--crop-policy", default="largest_square_resize",
                        choices=["largest_square_resize", "random_crop"])
        sp.add_argument("--skip-bad", action="store_true",
                        help="skip unreadable images instead of failing")
        if checkpoint:
            sp.add_argument("--inference-schedule", default="train",
                            help="'train', 'default' or 'beta_start,beta_end,steps'")
            sp.add_argument("--raw-params", action="store_true",
                            help="use raw instead of EMA parameters")

    sp = sub.add_parser("train", help="train a denoiser")
    common(sp, checkpoint=False)
    sp.add_argument("--config", help="JSON config with 'train'/'arch' sections")
    sp.add_argument("--out", default="train.ckpt")
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.add_argument("--steps", type=int,
                    help="total steps (also extends a resumed run)")
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--warmup", type=int)
    sp.add_argument("--loss-p", type=int, choices=[1, 2])
    sp.add_argument("--tasks", help="comma-separated task names")
    sp.add_argument("--base-channels", type=int)
    sp.add_argument("--variant", choices=list(
        ("global_self_attention", "local_self_attention",
         "more_resnet_blocks", "dilated_convolutions")))
    sp.add_argument("--size", type=int, help="training image size")
    sp.add_argument("--num-images", type=int, default=2048,
                    help="synthetic dataset size")
    sp.add_argument("--log-every", type=int, default=0)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("sample", help="draw samples from a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--task", default="colorization", choices=task_ops.TASKS)
    sp.add_argument("--num", type=int, default=8)
    sp.add_argument("--out", default="samples")
    sp.set_defaults(fn=cmd_sample)

    sp = sub.add_parser("eval", help="metric record for a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--task", default="colorization", choices=task_ops.TASKS)
    sp.add_argument("--num", type=int, default=128)
    sp.add_argument("--extractor", help="extractor checkpoint (trained and "
                                        "saved here when missing)")
    sp.add_argument("--out", default="metrics.jsonl")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("panorama", help="grow a panorama by uncropping")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--steps", type=int, default=8,
                    help="extension steps per side")
    sp.add_argument("--out", default="panorama.png")
    sp.set_defaults(fn=cmd_panorama)

    sp = sub.add_parser("diversity", help="L1-vs-L2 diversity study")
    common(sp)
    sp.add_argument("--checkpoint-l1", required=True)
    sp.add_argument("--checkpoint-l2", required=True)
    sp.add_argument("--task", default="colorization", choices=task_ops.TASKS)
    sp.add_argument("--num", type=int, default=32, help="conditioning count")
    sp.add_argument("--k", type=int, default=8, help="samples per input")
    sp.add_argument("--extractor")
    sp.add_argument("--out", default="diversity.json")
    sp.set_defaults(fn=cmd_diversity)

    sp = sub.add_parser("make-fixtures", help="freeze corruption fixtures")
    common(sp, checkpoint=False)
    sp.add_argument("--out", default="fixtures")
    sp.add_argument("--num", type=int, default=16)
    sp.add_argument("--size", type=int, default=16)
    sp.add_argument("--tasks", help="comma-separated subset of tasks")
    sp.set_defaults(fn=cmd_make_fixtures)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
