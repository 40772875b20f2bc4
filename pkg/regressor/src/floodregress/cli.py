"""Train/predict entry points.

Predictions are written in the shared grid format so the simulation
toolkit's `metrics` command can score them directly.
"""

from __future__ import annotations

import argparse
import sys

from .gridio import Grid, read_grid, write_grid
from .inference import fuse, infer_scene
from .models import ModelConfig
from .training import TrainConfig, load_checkpoint, train


def cmd_train(args) -> int:
    model_cfg = ModelConfig(
        arch=args.arch,
        encoder_widths=tuple(int(w) for w in args.widths.split(",")),
        output_activation="nonneg" if args.target == "water_level" else "linear",
    )
    train_cfg = TrainConfig(lr=args.lr, batch=args.batch, epochs=args.epochs,
                            seed=args.seed, target=args.target)
    ckpt, curve = train(model_cfg, args.data, train_cfg, args.out)
    print(f"final loss {curve[-1]:.5f} after {len(curve)} epochs -> {ckpt}")
    return 0


def cmd_predict(args) -> int:
    change = read_grid(args.change)
    slope = read_grid(args.slope)
    outputs = []
    sidecar = None
    for ckpt in args.checkpoints:
        model, sidecar = load_checkpoint(ckpt)
        pred = infer_scene(
            model, change.values, slope.values,
            tile=args.tile, overlap=args.overlap,
            scale=sidecar["train"]["scale"],
            nonneg=sidecar["model"]["output_activation"] == "nonneg",
        )
        outputs.append(pred)
    result = outputs[0]
    for other in outputs[1:]:
        result = fuse(result, other)
    write_grid(Grid(values=result, cellsize=change.cellsize,
                    origin_x=change.origin_x, origin_y=change.origin_y,
                    nodata=change.nodata), args.out)
    print(f"prediction ({len(outputs)} model(s)) -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="floodregress")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one architecture on a patch file")
    p.add_argument("--data", required=True, help="patch (.tsp) file")
    p.add_argument("--arch", choices=["attention_unet", "linknet"], required=True)
    p.add_argument("--target", choices=["water_level", "deformation"], required=True)
    p.add_argument("--widths", default="64,128,256,512")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="checkpoints")

    p = sub.add_parser("predict", help="tile a scene through trained model(s)")
    p.add_argument("--change", required=True, help="binary change grid")
    p.add_argument("--slope", required=True, help="slope grid (radians)")
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--tile", type=int, default=256)
    p.add_argument("--overlap", type=int, default=32)
    p.add_argument("--out", default="prediction.asc")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return cmd_train(args)
        if args.command == "predict":
            return cmd_predict(args)
        return 2
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
