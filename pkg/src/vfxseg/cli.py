"""Operator-facing command surface.

Commands compose through files only (manifests, checkpoints, VER rasters,
mask PNGs, report JSON); every command drops a provenance.json with the
canonical config, seed, and package versions beside its outputs.

Run configs are `key = value` text files; see CONFIG_DEFAULTS for the
documented keys. Parsing then re-echoing a config yields a canonical,
byte-stable form.
"""

import argparse
import json
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .binarize import BinarizeParams, binarize
from .core import (
    VfxsegError,
    load_image,
    load_ver,
    save_image,
    save_mask,
    save_ver,
)
from .data import IMG_SUFFIXES, DatasetManifest, build_effect_samples, split_msra
from .effects import EffectKind, apply_effect, compose
from .evaluate import emit_curve, evaluate_dataset, save_report
from .models import VARIANTS, GeneratorSpec
from .training import Hyperparams, predict_ver, train
from .web import FixtureClient, PartialFetch, WebQuery, web_fetch

@dataclass
class RunConfig:
    effect: str = "black_background"
    variant: str = "V4"
    seed: int = 0
    total_iters: int = 0
    image_size: int = 224
    base_width: int = 64
    n_res_blocks: int = 9
    lambda_gp: float = 10.0
    learning_rate: float = 1e-4
    n_critic: int = 5
    buffer_capacity: int = 50
    checkpoint_every: int = 1000
    manifest_a: str = ""
    manifest_b: str = ""
    data_root: str = ""
    out_dir: str = ""
    binarize_n_target: int = 400
    binarize_theta1: float = 10.0
    binarize_theta2: float = 0.99
    binarize_compactness: float = 10.0

    def __post_init__(self):
        EffectKind(self.effect)  # raises on unknown effect
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected 'key = value'")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in CONFIG_DEFAULTS:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            kind = type(CONFIG_DEFAULTS[key])
            values[key] = kind(val)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.parse(Path(path).read_text())

    def canonical(self) -> str:
        lines = [f"{f.name} = {getattr(self, f.name)}"
                 for f in sorted(fields(self), key=lambda f: f.name)]
        return "\n".join(lines) + "\n"

    def generator_spec(self) -> GeneratorSpec:
        return GeneratorSpec(
            variant=self.variant,
            input_size=self.image_size,
            base_width=self.base_width,
            n_res_blocks=self.n_res_blocks,
        )

    def hyperparams(self) -> Hyperparams:
        return Hyperparams(
            lambda_gp=self.lambda_gp,
            learning_rate=self.learning_rate,
            n_critic=self.n_critic,
            image_size=self.image_size,
            total_iters=self.total_iters,
            buffer_capacity=self.buffer_capacity,
        )

    def binarize_params(self) -> BinarizeParams:
        return BinarizeParams(
            n_target=self.binarize_n_target,
            theta1=self.binarize_theta1,
            theta2=self.binarize_theta2,
            compactness=self.binarize_compactness,
        )


CONFIG_DEFAULTS = {f.name: f.default for f in fields(RunConfig)}


def write_provenance(out_dir, command: str, seed=None, config: str | None = None,
                     extra: dict | None = None) -> None:
    import torch

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "command": command,
        "seed": seed,
        "config": config,
        "versions": {
            "vfxseg": __version__,
            "numpy": np.__version__,
            "torch": torch.__version__,
        },
    }
    if extra:
        record.update(extra)
    (out_dir / "provenance.json").write_text(json.dumps(record, indent=2) + "\n")


def _iter_images(path) -> list:
    path = Path(path)
    if path.is_file():
        return [path]
    files = [p for p in sorted(path.iterdir()) if p.suffix.lower() in IMG_SUFFIXES]
    if not files:
        raise VfxsegError(f"no images found under {path}")
    return files


def cmd_make_dataset(args) -> int:
    out = Path(args.out)
    manifests = split_msra(
        args.root, args.seed, out_dir=out, allow_scaled=args.allow_scaled,
        name=args.name,
    )
    effect = EffectKind(args.effect)
    samples = build_effect_samples(
        manifests["train_B_source"], effect, out / f"samples_{effect.value}"
    )
    write_provenance(out, "make-dataset", seed=args.seed,
                     extra={"effect": effect.value,
                            "manifests": [m.name for m in manifests.values()] + [samples.name]})
    print(f"wrote 4 manifests under {out}")
    return 0


def cmd_fetch(args) -> int:
    query = WebQuery(tag=args.tag, count=args.count)
    client = FixtureClient(args.fixture) if args.fixture else None
    try:
        manifest = web_fetch(query, args.out, client=client, resume=args.resume)
    except PartialFetch as e:
        print(f"partial fetch: {e}", file=sys.stderr)
        write_provenance(args.out, "fetch", extra={"tag": args.tag, "achieved": e.achieved})
        return 1
    write_provenance(args.out, "fetch",
                     extra={"tag": args.tag, "achieved": len(manifest.entries)})
    print(f"fetched {len(manifest.entries)} images into {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config)
    if args.total_iters is not None:
        cfg.total_iters = args.total_iters
    out = Path(cfg.out_dir) if cfg.out_dir else Path(args.config).with_suffix(".run")
    manifest_a = DatasetManifest.load(cfg.manifest_a)
    manifest_b = DatasetManifest.load(cfg.manifest_b)
    write_provenance(out, "train", seed=cfg.seed, config=cfg.canonical())
    ckpt = train(
        manifest_a, manifest_b, EffectKind(cfg.effect), cfg.generator_spec(),
        cfg.hyperparams(), cfg.seed, out,
        checkpoint_every=cfg.checkpoint_every, resume_from=args.resume,
    )
    print(f"final checkpoint: {ckpt}")
    return 0


def cmd_predict(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for img_path in _iter_images(args.images):
        img = load_image(img_path)
        ver = predict_ver(args.checkpoint, img, image_size=args.image_size)
        save_ver(ver, out / (img_path.stem + ".ver"))
    write_provenance(out, "predict", extra={"checkpoint": str(args.checkpoint)})
    print(f"wrote VER rasters to {out}")
    return 0


def cmd_edit(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    effect = EffectKind(args.effect)
    vers = Path(args.vers)
    n = 0
    for img_path in _iter_images(args.images):
        ver_path = vers / (img_path.stem + ".ver")
        if not ver_path.exists():
            print(f"skipping {img_path.name}: no VER at {ver_path}", file=sys.stderr)
            continue
        img = load_image(img_path)
        ver = load_ver(ver_path)
        if ver.shape != img.shape[:2]:
            raise VfxsegError(
                f"{img_path.name}: VER {ver.shape} does not match image {img.shape[:2]}"
            )
        effect_img = apply_effect(img, effect)
        edited = compose(img, effect_img, ver)
        ver_vis = np.repeat(((ver + 1.0) / 2.0)[..., None], 3, axis=2)
        save_image(img, out / f"{img_path.stem}_input.png")
        save_image(ver_vis.astype(np.float32), out / f"{img_path.stem}_ver.png")
        save_image(edited, out / f"{img_path.stem}_edit.png")
        n += 1
    if n == 0:
        raise VfxsegError("no (image, VER) pairs found")
    write_provenance(out, "edit", extra={"effect": effect.value, "triplets": n})
    print(f"wrote {n} triplets to {out}")
    return 0


def cmd_binarize(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = BinarizeParams(
        n_target=args.n_superpixels, theta1=args.theta1, theta2=args.theta2,
        compactness=args.compactness,
    )
    vers = Path(args.vers)
    n = 0
    for img_path in _iter_images(args.images):
        ver_path = vers / (img_path.stem + ".ver")
        if not ver_path.exists():
            print(f"skipping {img_path.name}: no VER at {ver_path}", file=sys.stderr)
            continue
        img = load_image(img_path)
        ver = load_ver(ver_path)
        mask, info = binarize(img, ver, params, with_info=True)
        save_mask(mask, out / f"{img_path.stem}.png")
        (out / f"{img_path.stem}.json").write_text(json.dumps(info, indent=2) + "\n")
        n += 1
    if n == 0:
        raise VfxsegError("no (image, VER) pairs found")
    write_provenance(out, "binarize",
                     extra={"params": vars(params), "masks": n})
    print(f"wrote {n} masks to {out}")
    return 0


def cmd_evaluate(args) -> int:
    report = evaluate_dataset(args.pred, args.gt, dataset=args.dataset)
    save_report(report, args.out)
    write_provenance(Path(args.out).parent, "evaluate",
                     extra={"mean_iou": report.mean_iou})
    print(f"mean IoU {report.mean_iou:.4f} over {len(report.records)} images")
    if report.missing_pred or report.missing_gt:
        print(
            f"unmatched files: {len(report.missing_pred)} missing predictions, "
            f"{len(report.missing_gt)} missing ground truths",
            file=sys.stderr,
        )
    return 0


def cmd_curves(args) -> int:
    raw = json.loads(Path(args.report).read_text())
    from .evaluate import EvalRecord, EvalReport

    report = EvalReport(
        dataset=raw["dataset"],
        records=[EvalRecord(r["id"], r["iou"], raw["dataset"]) for r in raw["records"]],
        mean_iou=raw["mean_iou"],
        missing_pred=raw.get("missing_pred", []),
        missing_gt=raw.get("missing_gt", []),
    )
    emit_curve(report, args.out, plot=args.plot)
    write_provenance(Path(args.out).parent, "curves", extra={"report": str(args.report)})
    print(f"wrote curve to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vfxseg",
        description="figure-ground segmentation by imitating visual effects",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    effects = [e.value for e in EffectKind]

    p = sub.add_parser("make-dataset", help="split a corpus and synthesize effect samples")
    p.add_argument("--root", required=True, help="directory of image+mask pairs")
    p.add_argument("--out", required=True)
    p.add_argument("--effect", required=True, choices=effects)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--name", default="msra")
    p.add_argument("--allow-scaled", action="store_true",
                   help="scale the split ratios for corpora smaller than 10,000")
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("fetch", help="bulk-download tagged photos into a manifest")
    p.add_argument("--tag", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fixture", help="replay a recorded fixture directory (offline)")
    p.add_argument("--resume", action=argparse.BooleanOptionalAction, default=True,
                   help="skip files whose checksum already verifies")
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("train", help="adversarial training from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--total-iters", type=int, default=None,
                   help="override total_iters from the config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write VER rasters for images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--image-size", type=int, default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("edit", help="compose edited images from inputs and VERs")
    p.add_argument("--images", required=True)
    p.add_argument("--vers", required=True)
    p.add_argument("--effect", required=True, choices=effects)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("binarize", help="figure-ground masks from images and VERs")
    p.add_argument("--images", required=True)
    p.add_argument("--vers", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-superpixels", type=int, default=400)
    p.add_argument("--theta1", type=float, default=10.0)
    p.add_argument("--theta2", type=float, default=0.99)
    p.add_argument("--compactness", type=float, default=10.0)
    p.set_defaults(func=cmd_binarize)

    p = sub.add_parser("evaluate", help="IoU report for predicted vs ground-truth masks")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dataset", default="")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("curves", help="sorted-IoU curve CSV (and plot) from a report")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_curves)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VfxsegError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
