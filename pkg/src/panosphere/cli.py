"""Command line: ingest, fit, render, serve, report.

Each subcommand is a thin wrapper over the library; angles are degrees
here (the wire protocol stays in radians).  Config files are YAML whose
keys mirror the training config fields one to one, with an optional
nested model section.
"""

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import checkpoint, report, service, trainer
from .dataio import bundle as bundleio
from .model import AblationFlags, ModelConfig
from .renderer import (VirtualCamera, orbit_path, render_equirect,
                       render_path, render_view, save_image)


def _fail(msg):
    print(f"error: {msg}", file=sys.stderr)
    return 1


def _size(text):
    try:
        w, h = (int(p) for p in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must be WxH, got {text!r}")
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("size must be positive")
    return w, h


def cmd_ingest(args):
    try:
        loaded = bundleio.load_bundle(args.src)
        bundleio.save_bundle(loaded, args.out)
    except bundleio.BundleError as e:
        return _fail(e)
    fx = loaded.frames[0].intrinsics[0]
    print(f"{loaded.n_frames} frames, {loaded.sensor_w}x{loaded.sensor_h}, "
          f"fx {fx:.1f}px, wrote {args.out}")
    return 0


def _train_config(args):
    """Training config from YAML plus command-line overrides."""
    doc = {}
    if args.config:
        with open(args.config) as fh:
            doc = yaml.safe_load(fh) or {}
        if not isinstance(doc, dict):
            raise ValueError(f"{args.config} must be a mapping")
    model_doc = doc.pop("model", None)
    fields = {f.name for f in dataclasses.fields(trainer.TrainConfig)}
    unknown = set(doc) - fields
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    if "betas" in doc:
        doc["betas"] = tuple(doc["betas"])
    doc.setdefault("log_path", f"{args.out}.log.jsonl")
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.preview:
        doc["preview"] = True
    doc["ablate"] = AblationFlags(zero_ray_offset=args.ablate_offset,
                                  zero_view_color=args.ablate_viewcolor)
    return doc, model_doc


def _model_config(model_doc, n_frames, variant):
    if model_doc in (None, "desk"):
        return ModelConfig.desk_scale(n_frames=n_frames,
                                      offset_variant=variant)
    if model_doc == "full":
        return ModelConfig.full_scale(n_frames=n_frames,
                                      offset_variant=variant)
    if isinstance(model_doc, dict):
        model_doc = dict(model_doc, n_frames=n_frames,
                         offset_variant=variant)
        return ModelConfig.from_dict(model_doc)
    raise ValueError(f"model must be desk, full, or a mapping, "
                     f"got {model_doc!r}")


def cmd_fit(args):
    try:
        data = bundleio.load_bundle(args.bundle)
    except bundleio.BundleError as e:
        return _fail(e)
    try:
        doc, model_doc = _train_config(args)
        doc["model"] = _model_config(model_doc, data.n_frames,
                                     args.offset_variant)
        cfg = trainer.TrainConfig(**doc)
    except (TypeError, ValueError) as e:
        return _fail(e)
    model, log = trainer.fit(data, cfg)
    aborted = any(r["loss"] is None and "psnr" not in r for r in log)
    n = checkpoint.save_checkpoint(args.out, model, meta={
        "epochs": cfg.epochs, "seed": cfg.seed, "preview": cfg.preview,
        "offset_variant": args.offset_variant, "aborted": aborted})
    print(f"wrote {args.out} ({n / 2**20:.1f} MB), "
          f"log {cfg.log_path} ({len(log)} records)")
    if aborted:
        return _fail("training aborted on non-finite loss; "
                     "checkpoint holds the last finite state")
    return 0


def cmd_render(args):
    try:
        model, _ = checkpoint.load_checkpoint(args.ckpt)
    except (OSError, checkpoint.CheckpointError) as e:
        return _fail(e)
    w, h = args.size
    if args.equirect:
        img = render_equirect(model, h, 2 * h)
        save_image(args.out, img, bits=args.bits)
        print(f"wrote {args.out} ({2 * h}x{h} panorama)")
        return 0
    yaw, pitch, roll = np.radians([args.yaw, args.pitch, args.roll])
    base = service.camera_for_pose(model, {
        "yaw": yaw, "pitch": pitch, "roll": roll,
        "tx": args.t[0], "ty": args.t[1], "tz": args.t[2],
        "fov_scale": args.fov_scale, "width": w, "height": h, "seq": 0})
    if args.orbit:
        _, stats = render_path(model, orbit_path(args.orbit, base),
                               sink=args.out)
        print(f"wrote {args.orbit} frames to {args.out} "
              f"({stats['fps']:.2f} FPS)")
        return 0
    save_image(args.out, render_view(model, base), bits=args.bits)
    print(f"wrote {args.out}")
    return 0


def cmd_serve(args):
    try:
        model, meta = checkpoint.load_checkpoint(args.ckpt)
    except (OSError, checkpoint.CheckpointError) as e:
        return _fail(e)
    print(f"serving {args.ckpt} (fit meta: {json.dumps(meta)})")

    def announce(port):
        print(f"listening on ws://{args.host}:{port}", flush=True)

    try:
        service.run_service(model, host=args.host, port=args.port,
                            encoding=args.encoding, on_ready=announce)
    except OSError as e:
        return _fail(e)
    return 0


def cmd_report(args):
    try:
        written = report.write_report(args.log, args.out)
    except (OSError, report.ReportError) as e:
        return _fail(e)
    for name, path in written.items():
        print(f"{name}: {path}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="panosphere",
        description="Panoramic capture to steerable sphere renders.")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("ingest", help="validate and normalize a capture")
    q.add_argument("src", help="capture directory with manifest.json")
    q.add_argument("--out", required=True, help="normalized bundle dir")
    q.set_defaults(run=cmd_ingest)

    q = sub.add_parser("fit", help="fit a model to a bundle")
    q.add_argument("bundle", help="bundle directory")
    q.add_argument("--config", help="YAML training config")
    q.add_argument("--out", default="model.nlsp", help="checkpoint path")
    q.add_argument("--preview", action="store_true",
                   help="quarter resolution, a tenth of the epochs")
    q.add_argument("--offset-variant", default="rotation",
                   choices=["rotation", "depth", "multiplicative", "none"])
    q.add_argument("--ablate-offset", action="store_true",
                   help="zero the ray offset branch")
    q.add_argument("--ablate-viewcolor", action="store_true",
                   help="drop the view-dependent color term")
    q.add_argument("--seed", type=int, default=None)
    q.set_defaults(run=cmd_fit)

    q = sub.add_parser("render", help="offline renders from a checkpoint")
    q.add_argument("ckpt")
    q.add_argument("--yaw", type=float, default=0.0, help="degrees")
    q.add_argument("--pitch", type=float, default=0.0, help="degrees")
    q.add_argument("--roll", type=float, default=0.0, help="degrees")
    q.add_argument("--t", type=float, nargs=3, default=(0.0, 0.0, 0.0),
                   metavar=("TX", "TY", "TZ"), help="sphere radii")
    q.add_argument("--fov-scale", type=float, default=1.0)
    q.add_argument("--size", type=_size, default=(512, 512),
                   help="WxH; equirect uses H (width is 2H)")
    q.add_argument("--equirect", action="store_true",
                   help="panorama instead of a perspective view")
    q.add_argument("--orbit", type=int, default=0, metavar="N",
                   help="render an N-frame horizontal orbit")
    q.add_argument("--bits", type=int, default=8, choices=[8, 16])
    q.add_argument("--out", required=True,
                   help="image path, or directory with --orbit")
    q.set_defaults(run=cmd_render)

    q = sub.add_parser("serve", help="interactive render service")
    q.add_argument("ckpt")
    q.add_argument("--port", type=int, default=8765)
    q.add_argument("--host", default="127.0.0.1")
    q.add_argument("--encoding", default="png", choices=["png", "jpeg"])
    q.set_defaults(run=cmd_serve)

    q = sub.add_parser("report", help="figures from a training log")
    q.add_argument("log", help="line-delimited training log")
    q.add_argument("--out", default=None, help="figure directory "
                   "(default: next to the log)")
    q.set_defaults(run=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.run(args)


if __name__ == "__main__":
    sys.exit(main())
