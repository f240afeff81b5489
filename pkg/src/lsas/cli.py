"""Single entry point composing the library into end-to-end workflows.

Subcommands: train, eval, bench, params, gradcam, ae, synth-ae. Values come
from an optional key=value config file overridden by flags; the effective
configuration is echoed before execution. Exit codes: 0 success, 2 usage,
3 bad configuration, 4 missing data, 5 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import torch

from . import ae as ae_mod
from .attention import ConfigurationError
from .gradcam import DEFAULT_LAYER, focused_region, gradcam, save_heatmap
from .resnet import (
    ModelConfig,
    build_model,
    count_parameters,
    format_millions,
    load_checkpoint,
    parameter_breakdown,
)
from .train import (
    DatasetUnavailableError,
    TrainConfig,
    benchmark_fps,
    evaluate_checkpoint,
    seed_everything,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_RUNTIME = 5


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error category=usage: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


_FORMATTER = argparse.ArgumentDefaultsHelpFormatter


def read_config_file(path) -> dict:
    """key=value lines; '#' starts a comment; keys use flag names."""
    values = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _model_flags(parser, mu_default=None):
    parser.add_argument("--depth", type=int, default=164, help="network depth")
    parser.add_argument(
        "--attention",
        default="none",
        choices=["none", "se", "cbam", "srm", "eca"],
        help="channel-attention kind",
    )
    parser.add_argument("--order", type=int, default=1, help="sub-attention order n")
    parser.add_argument(
        "--mu", type=int, default=mu_default,
        help="gate channel threshold (128; 512 for imagenet)",
    )
    parser.add_argument("--num-classes", type=int, default=10, help="classifier classes")


def build_parser() -> _Parser:
    parser = _Parser(prog="lsas", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a classifier", formatter_class=_FORMATTER)
    p.add_argument("--config", help="key=value config file; flags override")
    p.add_argument("--dataset", default="cifar10", help="cifar10|cifar100|stl10|imagenet")
    _model_flags(p)
    p.add_argument("--epochs", type=int, default=164, help="training epochs")
    p.add_argument("--batch-size", type=int, default=128, help="mini-batch size")
    p.add_argument("--lr", type=float, default=0.1, help="initial learning rate")
    p.add_argument("--momentum", type=float, default=0.9, help="SGD momentum")
    p.add_argument("--weight-decay", type=float, default=1e-4, help="uniform weight decay")
    p.add_argument("--milestones", default="81,122", help="comma-separated lr drop epochs")
    p.add_argument("--seed", type=int, default=1, help="global RNG seed")
    p.add_argument("--out", default="runs", help="parent of run directories")
    p.add_argument("--train-subset", type=int, default=None, help="cap on training samples")
    p.add_argument("--test-subset", type=int, default=None, help="cap on test samples")
    p.add_argument("--device", default="auto", help="cpu, cuda or auto")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split",
                       formatter_class=_FORMATTER)
    p.add_argument("--checkpoint", required=True, help="checkpoint archive path")
    p.add_argument("--dataset", default="cifar10", help="dataset name")
    p.add_argument("--split", default="test", choices=["train", "test"], help="split to score")
    p.add_argument("--batch-size", type=int, default=256, help="eval batch size")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="measure inference throughput",
                       formatter_class=_FORMATTER)
    p.add_argument("--checkpoint", help="optional checkpoint to benchmark")
    _model_flags(p, mu_default=128)
    p.add_argument("--batch-size", type=int, default=64, help="benchmark batch size")
    p.add_argument("--device", default="cpu", help="benchmark device")
    p.add_argument("--seed", type=int, default=1, help="weight init seed")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("params", help="per-module and total parameter counts",
                       formatter_class=_FORMATTER)
    _model_flags(p, mu_default=128)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("gradcam", help="export a heatmap for one image",
                       formatter_class=_FORMATTER)
    p.add_argument("--checkpoint", help="optional checkpoint to visualize")
    _model_flags(p, mu_default=128)
    p.add_argument("--image", required=True, help="input image file")
    p.add_argument("--class-index", type=int, default=None,
                   help="attribution target (default: the predicted class)")
    p.add_argument("--layer", default=DEFAULT_LAYER, help="named layer to attribute")
    p.add_argument("--seed", type=int, default=1, help="weight init seed")
    p.add_argument("--out", default="heatmaps", help="output directory")
    p.set_defaults(func=cmd_gradcam)

    p = sub.add_parser("ae", help="attention-efficiency over an annotation directory",
                       formatter_class=_FORMATTER)
    p.add_argument("--checkpoint", help="optional checkpoint to score")
    _model_flags(p, mu_default=128)
    p.add_argument("--annotations", required=True, help="directory of image + .mask.png pairs")
    p.add_argument("--lambda", dest="lam", type=float, default=ae_mod.DEFAULT_LAMBDA,
                   help="overlap threshold")
    p.add_argument("--fraction", type=float, default=0.2, help="focused-region share")
    p.add_argument("--layer", default=DEFAULT_LAYER, help="named layer to attribute")
    p.add_argument("--seed", type=int, default=1, help="weight init seed")
    p.add_argument("--out", default="ae_report", help="report output directory")
    p.set_defaults(func=cmd_ae)

    p = sub.add_parser("synth-ae", help="write deterministic synthetic annotations",
                       formatter_class=_FORMATTER)
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--count", type=int, default=120, help="number of annotated images")
    p.add_argument("--size", default="96x96", help="HxW of generated images")
    p.add_argument("--out", default="synth_annotations", help="output directory")
    p.set_defaults(func=cmd_synth_ae)

    return parser


def _echo_config(args):
    skip = {"func", "command", "config"}
    pairs = [(k, v) for k, v in sorted(vars(args).items()) if k not in skip]
    print(f"[{args.command}] " + " ".join(f"{k}={v}" for k, v in pairs))


def _model_config(args) -> ModelConfig:
    mu = args.mu
    if mu is None:
        mu = 512 if getattr(args, "dataset", "") == "imagenet" else 128
    input_size = (96, 96) if getattr(args, "dataset", "") == "stl10" else (32, 32)
    if args.depth in (34, 50):
        input_size = (224, 224)
    return ModelConfig(
        depth=args.depth,
        num_classes=args.num_classes,
        attention=args.attention,
        lsas_order=args.order,
        gate_mu=mu,
        input_size=input_size,
    )


def _model_from_args(args):
    if getattr(args, "checkpoint", None):
        model, _ = load_checkpoint(args.checkpoint)
        return model
    seed_everything(getattr(args, "seed", 1))
    return build_model(_model_config(args))


def cmd_train(args) -> int:
    if args.dataset in ("cifar100",):
        args.num_classes = 100
    cfg = TrainConfig(
        dataset=args.dataset,
        model=_model_config(args),
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        momentum=args.momentum,
        weight_decay=args.weight_decay,
        lr_milestones=tuple(int(m) for m in str(args.milestones).split(",") if m),
        seed=args.seed,
        output_dir=args.out,
        train_subset=args.train_subset,
        test_subset=args.test_subset,
        device=args.device,
    )
    result = train(cfg)
    print(f"run dir: {result.run_dir}")
    print(f"best acc: {result.best_acc:.2f}% checkpoint: {result.best_checkpoint}")
    return EXIT_OK


def cmd_eval(args) -> int:
    acc = evaluate_checkpoint(
        args.checkpoint, dataset=args.dataset, split=args.split, batch_size=args.batch_size
    )
    print(f"top1 {acc:.2f}%")
    return EXIT_OK


def cmd_bench(args) -> int:
    model = _model_from_args(args)
    result = benchmark_fps(model, batch_size=args.batch_size, device=args.device)
    print(
        f"fps {result.fps:.1f} batch {result.batch_size} device {result.device} "
        f"(warmup {result.warmup_batches}, timed {result.timed_batches})"
    )
    return EXIT_OK


def cmd_params(args) -> int:
    model = build_model(_model_config(args))
    total = count_parameters(model)
    for name, count in parameter_breakdown(model).items():
        print(f"{name:12s} {count:10d}  ({format_millions(count)}M)")
    print(f"{'total':12s} {total:10d}  ({format_millions(total)}M)")
    return EXIT_OK


def _load_image_tensor(path):
    from PIL import Image

    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1), arr


def cmd_gradcam(args) -> int:
    model = _model_from_args(args)
    image, raw = _load_image_tensor(args.image)
    target = args.class_index
    if target is None:
        with torch.no_grad():
            target = int(model(image.unsqueeze(0)).argmax(dim=1).item())
    heat = gradcam(model, image, target, layer=args.layer)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    gray = out / f"{stem}_0_{target}.png"
    overlay = out / f"{stem}_0_{target}.overlay.png"
    save_heatmap(heat, gray, image=raw, overlay_path=overlay)
    print(f"wrote {gray} and {overlay}")
    return EXIT_OK


def cmd_ae(args) -> int:
    model = _model_from_args(args)
    load = ae_mod.load_annotations(args.annotations)
    for ref, message in load.errors:
        print(f"skipping {ref}: {message}", file=sys.stderr)
    if not load.records:
        raise DatasetUnavailableError(f"no usable annotations under {args.annotations}")
    entries = []
    for rec in load.records:
        if rec.label < 0:
            print(f"skipping {rec.image_ref}: no class label in filename", file=sys.stderr)
            continue
        image, _ = _load_image_tensor(rec.image_ref)
        heat = gradcam(model, image, rec.label, layer=args.layer)
        entries.append((rec.image_ref, focused_region(heat, args.fraction), rec))
    if not entries:
        raise DatasetUnavailableError("no labelled annotations to score")
    report = ae_mod.build_report(entries, lam=args.lam)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report.to_text())
    report.to_csv(out / "report.csv")
    print(f"AE {report.ae:.2f}% over {report.dataset_size} images (lambda={report.lam})")
    print(f"report written to {out}")
    return EXIT_OK


def cmd_synth_ae(args) -> int:
    try:
        h, w = (int(part) for part in args.size.lower().split("x"))
    except ValueError:
        raise ConfigurationError(f"--size must look like 96x96, got {args.size!r}") from None
    records = ae_mod.synth_annotations(args.seed, args.count, shape=(h, w))
    out = ae_mod.write_annotations(records, args.out)
    print(f"wrote {len(records)} annotated images to {out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        file_values = read_config_file(args.config)
        unknown = set(file_values) - set(vars(args))
        if unknown:
            raise_config = ConfigurationError(
                f"unknown config keys in {args.config}: {sorted(unknown)}"
            )
            print(f"error category=config: {raise_config}", file=sys.stderr)
            return EXIT_CONFIG
        # flags given on the command line win over file values
        given = _explicit_flags(argv if argv is not None else sys.argv[1:])
        for key, value in file_values.items():
            if key in given:
                continue
            current = getattr(args, key)
            caster = type(current) if current is not None else str
            if caster is bool:
                value = value.lower() in ("1", "true", "yes")
            elif current is not None:
                value = caster(value)
            setattr(args, key, value)
    _echo_config(args)
    try:
        return args.func(args)
    except (ConfigurationError, ValueError) as exc:
        print(f"error category=config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetUnavailableError, FileNotFoundError) as exc:
        print(f"error category=data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - defensive
        print(f"error category=runtime: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def _explicit_flags(argv) -> set:
    names = set()
    for token in argv:
        if token.startswith("--"):
            names.add(token[2:].split("=", 1)[0].replace("-", "_"))
    return names


if __name__ == "__main__":
    sys.exit(main())
