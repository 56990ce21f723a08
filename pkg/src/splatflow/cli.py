"""``splatflow`` command line: gen, rasterize, eval, loss, viz.

Exit codes: 0 success, 2 usage or configuration error, 3 I/O error,
4 data integrity error (unreadable or inconsistent inputs).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import flowio, metrics, regloss
from .errors import ConfigInvalid, OutputUnwritable, SplatFlowError
from .rasterizer import RasterConfig, rasterize_pair
from .scenegen import SceneConfig, generate_dataset, load_config

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DATA = 4

CONFIG_ENV = "SPLATFLOW_CONFIG"
CSV_HEADER = ["pair", "epe", "px1", "px3", "px5", "f1_all", "wauc"]
LOSSES = ("tvr", "fdr", "migar", "igvar")

log = logging.getLogger("splatflow")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _size(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"\s*(\d+)\s*[xX]\s*(\d+)\s*", text)
    if not m:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}")
    return int(m.group(1)), int(m.group(2))


def _ratios(text: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(p) for p in text.split(","))
    except ValueError:
        parts = ()
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}")
    return parts


def _threads(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("thread count must be >= 1")
    return n


# gen ----------------------------------------------------------------------------------------

_GEN_OVERRIDES = {
    "seed": int,
    "n_sequences": int,
    "n_frames": int,
    "n_gaussians": int,
    "resolution": _size,
    "deformation_amplitude": float,
    "max_rotation": float,
    "split_ratios": _ratios,
    "focal_scale": float,
    "camera_distance": float,
    "z_near": float,
    "z_far": float,
    "mask_threshold": float,
}


def cmd_gen(args) -> int:
    config_path = args.config or os.environ.get(CONFIG_ENV)
    values = {}
    if config_path:
        try:
            values = load_config(config_path).to_dict()
        except OSError as exc:
            raise CliError(f"cannot read config {config_path}: {exc}", EXIT_IO) from exc
    for key in _GEN_OVERRIDES:
        flag = getattr(args, key)
        if flag is not None:
            values[key] = flag
    config = SceneConfig.from_dict(values)
    summary = generate_dataset(config, args.out, threads=args.threads)
    print(json.dumps({"root": str(args.out), "total_pairs": summary["total_pairs"],
                      "split_pairs": summary["split_pairs"],
                      "scenes": len(summary["scenes"])}, sort_keys=True))
    return EXIT_OK


# rasterize ----------------------------------------------------------------------------------


def cmd_rasterize(args) -> int:
    scene = flowio.read_scene(args.scene)
    config = RasterConfig(mask_threshold=args.mask_threshold, threads=args.threads)
    if args.strict:
        config = config.strict()
    out = rasterize_pair(scene, config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    flowio.write_image(out.color, out_dir / "color.png")
    flowio.write_flo(out.flow, out_dir / "flow.flo")
    flowio.write_mask(out.mask, out_dir / "mask.png")
    flowio.write_gray(out.alpha, out_dir / "alpha.png")
    print(json.dumps({"width": scene.camera_t.width, "height": scene.camera_t.height,
                      "splats": len(scene.gaussians), "valid_pixels": int(out.mask.sum())},
                     sort_keys=True))
    return EXIT_OK


# eval ---------------------------------------------------------------------------------------


def _center_crop(array: np.ndarray, size) -> np.ndarray:
    if size is None:
        return array
    w, h = size
    height, width = array.shape[:2]
    if w > width or h > height:
        raise ValueError(f"crop {w}x{h} exceeds input {width}x{height}")
    x0 = (width - w) // 2
    y0 = (height - h) // 2
    return array[y0:y0 + h, x0:x0 + w]


def _mask_path(mask_root: Path, rel: Path) -> Path | None:
    m = re.fullmatch(r"flow_(\d+)_\d+\.flo", rel.name)
    candidates = []
    if m:
        candidates.append(mask_root / rel.parent / f"mask_{m.group(1)}.png")
    candidates.append(mask_root / rel.with_suffix(".png"))
    for path in candidates:
        if path.is_file():
            return path
    return None


def _flo_set(root: Path) -> set[Path]:
    if not root.is_dir():
        raise CliError(f"not a directory: {root}", EXIT_USAGE)
    return {p.relative_to(root) for p in root.rglob("*.flo")}


def cmd_eval(args) -> int:
    pred_root, gt_root = Path(args.pred), Path(args.gt)
    mask_root = Path(args.masks) if args.masks else gt_root
    pred_set, gt_set = _flo_set(pred_root), _flo_set(gt_root)
    if pred_set != gt_set or not gt_set:
        missing = sorted(str(p) for p in gt_set - pred_set)
        extra = sorted(str(p) for p in pred_set - gt_set)
        raise CliError(f"flow file sets differ (missing predictions: {missing}, "
                       f"unmatched predictions: {extra})" if gt_set else "no .flo files found",
                       EXIT_USAGE)

    rows, errors = [], []
    for rel in sorted(gt_set, key=str):
        try:
            gt = _center_crop(flowio.read_flo(gt_root / rel), args.crop)
            pred = _center_crop(flowio.read_flo(pred_root / rel), args.crop)
            mpath = _mask_path(mask_root, rel)
            mask = None if mpath is None else _center_crop(flowio.read_mask(mpath), args.crop)
            report = metrics.evaluate(pred, gt, mask)
        except (OSError, ValueError) as exc:
            log.error("%s: %s", rel, exc)
            errors.append({"pair": str(rel), "error": f"{type(exc).__name__}: {exc}"})
            continue
        rows.append((str(rel), report))

    aggregate = metrics.aggregate([r for _, r in rows]) if rows else None
    payload = {
        "pairs": [dict(pair=name, **r.as_dict()) for name, r in rows],
        "aggregate": aggregate.as_dict() if aggregate else None,
        "errors": errors,
    }
    table = io.StringIO()
    writer = csv.writer(table, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for name, r in rows + ([("aggregate", aggregate)] if aggregate else []):
        writer.writerow([name] + [repr(float(getattr(r, k))) for k in CSV_HEADER[1:]])

    if args.output:
        out = Path(args.output)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(flowio.dumps_json(payload), encoding="utf-8")
        out.with_suffix(".csv").write_text(table.getvalue(), encoding="utf-8")
        if aggregate:
            print(json.dumps(aggregate.as_dict(), sort_keys=True))
    else:
        sys.stdout.write(table.getvalue())
    for err in errors:
        print(f"error: {err['pair']}: {err['error']}", file=sys.stderr)
    return EXIT_DATA if errors else EXIT_OK


# loss ---------------------------------------------------------------------------------------


def cmd_loss(args) -> int:
    names = LOSSES if "all" in args.loss else tuple(dict.fromkeys(args.loss))
    stages = [flowio.read_flo(p).astype(np.float64) for p in args.stages]
    seq = regloss.StageSequence(stages, gamma=args.gamma, lambda_n=args.lambda_n)
    height, width = seq.shape
    mask = flowio.read_mask(args.mask) if args.mask else np.ones((height, width), dtype=bool)
    image = flowio.read_image(args.image) if args.image else None
    if image is None and {"migar", "igvar"} & set(names):
        raise CliError("migar/igvar need --image (the first frame)", EXIT_USAGE)

    result = {}
    for name in names:
        if name == "tvr":
            result[name] = regloss.tvr(seq)
        elif name == "fdr":
            result[name] = regloss.fdr(seq, mask, stride=args.stride)
        else:
            result[name] = regloss.migar(seq, image, mask, mode=name, literal_mask=args.literal_mask)
    text = flowio.dumps_json(result)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# viz ----------------------------------------------------------------------------------------


def cmd_viz(args) -> int:
    flow = flowio.read_flo(args.flow)
    if args.mask:
        flow = np.where(flowio.read_mask(args.mask)[..., None], flow, 0.0)
    flowio.write_image(flowio.flow_to_color(flow, args.max_magnitude), args.out)
    return EXIT_OK


# parser -------------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splatflow", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic flow dataset")
    gen.add_argument("--config", help=f"JSON scene config (default: ${CONFIG_ENV})")
    gen.add_argument("--out", required=True, help="dataset root directory")
    gen.add_argument("--threads", type=_threads, default=None,
                     help="worker threads for tile compositing (default: all cores)")
    for key, conv in _GEN_OVERRIDES.items():
        gen.add_argument("--" + key.replace("_", "-"), dest=key, type=conv, default=None,
                         help=f"override config field {key}")
    gen.set_defaults(func=cmd_gen)

    ras = sub.add_parser("rasterize", help="render color, flow, alpha and mask of a scene file")
    ras.add_argument("scene", help="scene description (splatflow-scene-v1 JSON)")
    ras.add_argument("--out", required=True, help="output directory")
    ras.add_argument("--mask-threshold", type=float, default=0.5)
    ras.add_argument("--strict", action="store_true", help="disable early termination")
    ras.add_argument("--threads", type=_threads, default=None)
    ras.set_defaults(func=cmd_rasterize)

    ev = sub.add_parser("eval", help="score predicted flow against ground truth")
    ev.add_argument("--pred", required=True, help="directory of predicted .flo files")
    ev.add_argument("--gt", required=True, help="directory of ground-truth .flo files")
    ev.add_argument("--masks", help="mask directory mirroring --gt (default: the --gt tree)")
    ev.add_argument("--crop", type=_size, default=None, help="center crop WxH before scoring")
    ev.add_argument("--output", help="JSON report path; a .csv table is written next to it")
    ev.set_defaults(func=cmd_eval)

    lo = sub.add_parser("loss", help="evaluate regularization losses on stage predictions")
    lo.add_argument("--stages", nargs="+", required=True, help=".flo files, earliest stage first")
    lo.add_argument("--image", help="first frame (PNG) for migar/igvar")
    lo.add_argument("--mask", help="background mask PNG (default: all valid)")
    lo.add_argument("--loss", nargs="+", choices=LOSSES + ("all",), default=["all"])
    lo.add_argument("--gamma", type=float, default=regloss.DEFAULT_GAMMA)
    lo.add_argument("--lambda-n", type=float, default=regloss.DEFAULT_LAMBDA)
    lo.add_argument("--stride", type=int, default=regloss.DEFAULT_STRIDE)
    lo.add_argument("--literal-mask", action="store_true",
                    help="strict-positive gradient test when building the total mask")
    lo.add_argument("--output", help="also write the JSON result here")
    lo.set_defaults(func=cmd_loss)

    vz = sub.add_parser("viz", help="color-code a .flo file")
    vz.add_argument("flow")
    vz.add_argument("--out", required=True, help="output PNG")
    vz.add_argument("--max-magnitude", type=float, default=None)
    vz.add_argument("--mask", help="zero the flow outside this mask first")
    vz.set_defaults(func=cmd_viz)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OutputUnwritable, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SplatFlowError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
