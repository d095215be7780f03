"""Batch command-line front end.

Subcommands: ``train``, ``sweep``, ``eval``, ``attack``, ``saliency``,
``toygen``.  Experiments are described by flat dotted-key config files (see
``config.py``); ``--seed`` and ``--out-dir`` flags override file values.
Every run is reproducible: the seed is mandatory and all artifacts are
derived deterministically from it.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import attacks as attacks_mod
from . import data as data_mod
from . import models as models_mod
from . import reporting, saliency as saliency_mod, training as training_mod
from .config import ExperimentConfig
from .engine import load_checkpoint
from .errors import ConfigError

log = logging.getLogger("steerbench")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = str(args.seed)
    if getattr(args, "out_dir", None) is not None:
        cfg["out_dir"] = str(args.out_dir)
    if "seed" not in cfg:
        raise ConfigError("a seed is required: set 'seed' in the config or pass --seed")
    return cfg


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.get_str("out_dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _model_config(cfg: ExperimentConfig, seed: int) -> models_mod.ModelConfig:
    attention = None
    if "attention.stages" in cfg:
        stages = cfg.get_int_tuple("attention.stages")
        if stages:
            attention = models_mod.AttentionSettings(
                stages=stages,
                combine_rule=cfg.get_str("attention.combine_rule", "mask_times_trunk"),
                downsample_steps=cfg.get_int("attention.downsample_steps", 2),
                trunk_units=cfg.get_int("attention.trunk_units", 1),
                skip_connections=cfg.get_bool("attention.skip_connections", True),
            )
    stage_widths = cfg.get_int_tuple("model.stage_widths", ()) or None
    return models_mod.ModelConfig(
        family=cfg.get_str("model.family"),
        block_layers=cfg.get_int_tuple("model.block_layers"),
        stage_widths=stage_widths,
        input_shape=cfg.get_int_tuple("model.input_shape", (160, 320)),
        seed=seed,
        attention=attention,
    )


def _load_dataset(cfg: ExperimentConfig) -> data_mod.DatasetIndex:
    return data_mod.load_manifest(
        cfg.get_path("data.manifest"),
        cfg.get_str("data.format"),
        angle_unit=cfg.get_str("data.angle_unit", "radians"),
    )


def _hyper(cfg: ExperimentConfig, seed: int) -> training_mod.TrainHyper:
    return training_mod.TrainHyper(
        epochs=cfg.get_int("train.epochs", 100),
        batch_size=cfg.get_int("train.batch_size", 32),
        learning_rate=cfg.get_float("train.lr", 1e-4),
        optimizer=cfg.get_str("train.optimizer", "adam"),
        momentum=cfg.get_float("train.momentum", 0.9),
        seed=seed,
        side_cameras=cfg.get_bool("data.side_cameras", False),
        camera_correction=cfg.get_float("data.correction", data_mod.DEFAULT_CAMERA_CORRECTION),
    )


def _train_one(model, index, cfg, seed):
    train_idx, val_idx = data_mod.split(index, cfg.get_float("data.val_fraction", 0.2), seed)
    hyper = _hyper(cfg, seed)
    return training_mod.train(model, train_idx, val_idx, hyper)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    seed = cfg.get_int("seed")
    out = _out_dir(cfg)
    index = _load_dataset(cfg)
    model = models_mod.build_model(_model_config(cfg, seed))
    model, curve, checkpoint = _train_one(model, index, cfg, seed)

    import torch

    torch.save(checkpoint, out / "checkpoint.pt")
    curve.to_csv(out / "curve.csv")
    curve.to_jsonl(out / "metrics.jsonl")
    reporting.plot_curves(
        [out / "curve.csv"],
        reporting.PlotSpec(
            x_label="No. of epochs",
            y_label="MSE Loss",
            series_labels=(cfg.get_str("model.family"),),
            output_path=out / "curve.png",
        ),
    )
    print(f"trained {cfg.get_str('model.family')} for {len(curve.entries)} epochs; "
          f"final val MSE {curve.final_val_mse():.6f}; artifacts in {out}")
    return 0


def _scaled_widths(widths: tuple[int, ...], scale: float, family: str) -> tuple[int, ...]:
    if scale == 1.0:
        return widths
    if family == "inception":
        return tuple(max(16, round(w * scale / 16) * 16) for w in widths)
    return tuple(max(8, round(w * scale)) for w in widths)


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    seed = cfg.get_int("seed")
    out = _out_dir(cfg)
    family = cfg.get_str("sweep.family")
    if family not in ("resnet", "inception", "both"):
        raise ConfigError(f"sweep.family must be resnet, inception, or both, got {family!r}")
    scale = cfg.get_float("sweep.width_scale", 1.0)
    input_shape = cfg.get_int_tuple("model.input_shape", (160, 320))
    index = _load_dataset(cfg)

    entries: list[tuple[str, str, tuple[int, ...]]] = []
    if family in ("resnet", "both"):
        entries += [("resnet", name, bl) for name, bl in models_mod.RESNET_BLOCK_LAYERS.items()]
    if family in ("inception", "both"):
        entries += [("inception", name, bl) for name, bl in models_mod.INCEPTION_BLOCK_LAYERS.items()]
    if "sweep.models" in cfg:
        wanted = set(cfg.get_str_list("sweep.models"))
        unknown = wanted - {name for _, name, _ in entries}
        if unknown:
            raise ConfigError(f"unknown sweep models {sorted(unknown)}")
        entries = [e for e in entries if e[1] in wanted]

    rows: list[tuple[str, int, float]] = []
    for fam, name, block_layers in entries:
        widths = models_mod.RESNET_STAGE_WIDTHS if fam == "resnet" else models_mod.INCEPTION_STAGE_WIDTHS
        config = models_mod.ModelConfig(
            family=fam,
            block_layers=block_layers,
            stage_widths=_scaled_widths(widths, scale, fam),
            input_shape=input_shape,
            seed=seed,
        )
        model = models_mod.build_model(config)
        params = models_mod.count_parameters(model)
        _, curve, _ = _train_one(model, index, cfg, seed)
        rows.append((name, params, curve.final_val_mse()))
        print(f"{name}: params={params} val_mse={curve.final_val_mse():.6f}")

    with open(out / "sweep.csv", "w") as fh:
        fh.write("model,params,val_mse\n")
        for name, params, mse in rows:
            fh.write(f"{name},{params},{mse!r}\n")
    reporting.plot_params_vs_mse(rows, out / "sweep.png")
    print(f"swept {len(rows)} models; artifacts in {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    checkpoint_path = args.checkpoint or cfg.get_path("checkpoints.model")
    model, _ = load_checkpoint(checkpoint_path)
    index = _load_dataset(cfg)
    mse = training_mod.evaluate(model, index, batch_size=cfg.get_int("eval.batch_size", 32))
    payload = {"checkpoint": str(checkpoint_path), "manifest": str(cfg.get_path("data.manifest")), "mse": mse}
    (out / "eval.json").write_text(json.dumps(payload, indent=2) + "\n")
    print(f"mse={mse!r}")
    return 0


def cmd_attack(args) -> int:
    cfg = _load_config(args)
    seed = cfg.get_int("seed")
    out = _out_dir(cfg)
    baseline_path = args.baseline or cfg.get_path("checkpoints.baseline")
    attention_path = args.attention or cfg.get_path("checkpoints.attention")
    baseline, _ = load_checkpoint(baseline_path)
    attention, _ = load_checkpoint(attention_path)
    index = _load_dataset(cfg)
    batch_size = cfg.get_int("eval.batch_size", 32)

    methods = cfg.get_str_list("attack.methods", ["fgsm", "pgd"])
    eps_values = cfg.get_float_list("attack.eps")
    report = attacks_mod.RobustnessReport()
    labels = (("w/o attention", baseline), ("w attention", attention))
    clean = {label: training_mod.evaluate(model, index, batch_size) for label, model in labels}
    for method in methods:
        for eps in eps_values:
            config = attacks_mod.AttackConfig(
                method=method,
                epsilon=eps,
                steps=cfg.get_int("attack.steps", 10),
                step_size=(cfg.get_float("attack.step_size") if "attack.step_size" in cfg else None),
                random_start=cfg.get_bool("attack.random_start", True),
            )
            for label, model in labels:
                attacked = attacks_mod.robustness_eval(
                    model, index, config, batch_size=batch_size, seed=seed
                )
                report.add(label, method, eps, clean[label], attacked)

    report.to_csv(out / "report.csv")
    table = reporting.render_table(report)
    (out / "table.txt").write_text(table)
    print(table, end="")
    return 0


def cmd_saliency(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    layer = cfg.get_str("saliency.layer", "layer4")
    ratio = cfg.get_float("saliency.ratio", saliency_mod.DEFAULT_BLEND_RATIO)
    baseline, _ = load_checkpoint(args.baseline or cfg.get_path("checkpoints.baseline"))
    attention, _ = load_checkpoint(args.attention or cfg.get_path("checkpoints.attention"))
    if args.images:
        image_paths = [Path(p) for p in args.images]
    else:
        image_paths = [cfg.base_dir / p for p in cfg.get_str_list("saliency.images", [])]
    if not image_paths:
        raise ConfigError("no input images: pass --images or set saliency.images")

    preprocess = data_mod.Preprocessor(baseline.config.input_shape)
    rendered = 0
    skipped = 0
    for path in image_paths:
        try:
            image = preprocess(path)
        except (OSError, ValueError) as exc:
            log.warning("skipping unreadable image %s (%s)", path, exc)
            skipped += 1
            continue
        panels = [
            image,
            saliency_mod.overlay(baseline, image, layer, ratio),
            saliency_mod.overlay(attention, image, layer, ratio),
        ]
        saliency_mod.render_strip(panels, out / f"saliency_{Path(path).stem}.png")
        rendered += 1
    print(f"rendered {rendered} strip(s), skipped {skipped}")
    return 0 if rendered else 1


def cmd_toygen(args) -> int:
    shape = tuple(int(v) for v in args.image_size.split("x"))
    if len(shape) != 2:
        raise ConfigError(f"image size must be HxW, got {args.image_size!r}")
    index = data_mod.generate_toy_dataset(args.n, shape, args.seed, args.out_dir)
    print(f"wrote {len(index)} samples to {Path(args.out_dir) / 'manifest.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="steerbench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out-dir", default=None, help="override the config output directory")

    common(sub.add_parser("train", help="train a model; writes checkpoint, curve, metrics, plot"))
    common(sub.add_parser("sweep", help="train each configured block tuple; params-vs-MSE table"))

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    common(p_eval)
    p_eval.add_argument("--checkpoint", default=None)

    p_attack = sub.add_parser("attack", help="FGSM/PGD comparison of baseline vs attention")
    common(p_attack)
    p_attack.add_argument("--baseline", default=None, help="baseline checkpoint path")
    p_attack.add_argument("--attention", default=None, help="attention checkpoint path")

    p_sal = sub.add_parser("saliency", help="render 3-panel saliency strips")
    common(p_sal)
    p_sal.add_argument("--baseline", default=None)
    p_sal.add_argument("--attention", default=None)
    p_sal.add_argument("--images", nargs="*", default=None)

    p_toy = sub.add_parser("toygen", help="generate the synthetic toy road dataset")
    p_toy.add_argument("--out-dir", required=True)
    p_toy.add_argument("--n", type=int, default=500)
    p_toy.add_argument("--image-size", default="32x64")
    p_toy.add_argument("--seed", type=int, required=True)

    return parser


COMMANDS = {
    "train": cmd_train,
    "sweep": cmd_sweep,
    "eval": cmd_eval,
    "attack": cmd_attack,
    "saliency": cmd_saliency,
    "toygen": cmd_toygen,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
