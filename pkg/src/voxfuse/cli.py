"""``voxfuse`` command line: project | warp | eval | consistency | synth.

Every command that writes files also writes ``manifest.json`` next to them
with the resolved configuration, a replayable argument list and the SHA-256
of each output.  ``voxfuse --replay DIR/manifest.json --out NEW`` re-runs a
manifest and checks that the outputs come out identical.

Exit codes: 0 success, 2 I/O or file-format errors, 3 validation errors
(bad flags, mismatched grids, nothing to evaluate).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .depth_prior import DepthMap, FitConfig, RelativeDepthMap, apply_scale, fit_scale, render_sparse_depth
from .errors import FormatError, SpecMismatch, ValidationError
from .gdp import FeatureImage, GdpConfig, gdp_scatter
from .geometry import RigidPose, relative_in_frame
from .kitti_io import (
    KITTI_IMAGE_SIZE,
    REMAP_ENV,
    RemapTable,
    read_calib,
    read_label,
    read_lidar_bin,
    read_pfm,
    read_pfm_stack,
    read_poses,
    read_voxel_bin,
    write_calib,
    write_label,
    write_pfm,
    write_pfm_stack,
    write_poses,
    write_voxel_bin,
)
from .metrics import consistency_report, miou
from .temporal import InitPolicy, WARP_MODES, init_hidden, warp_feature_grid, warp_label_grid
from .voxel import NUM_CLASSES, FeatureGrid, GridSpec, LabelGrid, MaskGrid, fov_mask, overlap_mask

EXIT_OK, EXIT_IO, EXIT_INVALID = 0, 2, 3
MANIFEST = "manifest.json"

_NORMALIZATION = {"none": "none", "ray": "per-ray", "voxel": "per-voxel"}
_ACCUMULATION = {"sum": "weighted-sum", "mean": "weighted-mean"}


class UsageError(ValidationError):
    """Bad or conflicting command-line flags."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message if self.prog == "voxfuse" else f"{self.prog}: {message}")


# -- small file helpers -------------------------------------------------------

def _read_bytes(path) -> bytes:
    return Path(path).read_bytes()


def _spec_doc(spec: GridSpec, image_size=None) -> dict:
    d = spec.to_dict()
    if image_size is not None:
        d["image_size"] = [int(image_size[0]), int(image_size[1])]
    return d


def _load_grid_json(path):
    """``(GridSpec, image_size or None)`` from a grid.json file."""
    try:
        doc = json.loads(Path(path).read_text())
        spec = GridSpec.from_dict(doc)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: missing grid field {exc}") from exc
    size = doc.get("image_size")
    return spec, (tuple(int(v) for v in size) if size else None)


def _dumps(doc) -> bytes:
    return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode()


def _npy_bytes(arr) -> bytes:
    import io

    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def _load_npy(path) -> np.ndarray:
    try:
        return np.load(path, allow_pickle=False)
    except ValueError as exc:
        raise FormatError(f"{path}: not a .npy array ({exc})") from exc


def _commit(out: Path, files: dict, manifest: dict):
    """Write every output (relative path -> bytes) plus the manifest; nothing is written before this."""
    manifest = dict(manifest)
    manifest["outputs"] = {name: hashlib.sha256(data).hexdigest() for name, data in sorted(files.items())}
    for name, data in sorted(files.items()):
        p = out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_bytes(data)
    (out / MANIFEST).write_bytes(_dumps(manifest))


_PATH_DESTS = {"sequence", "grid", "calib", "features", "depth", "relative_depth", "sparse_depth", "scan", "input",
               "poses", "pred", "gt", "invalid", "mask", "pred_dir", "remap"}


def _resolved_argv(args, parser_actions) -> list:
    """Flags reproducing ``args`` with input paths made absolute; ``--out`` is left out."""
    argv = [args.command]
    for act in parser_actions:
        if not act.option_strings or act.dest in ("help", "out"):
            continue
        val = getattr(args, act.dest, None)
        flag = act.option_strings[-1]
        if act.nargs == 0:
            if val != act.default and val == act.const:
                argv.append(flag)
            continue
        if val is None or val == act.default:
            continue
        if act.dest in _PATH_DESTS:
            val = _abs(val)
        if isinstance(val, (list, tuple)):
            argv += [flag, *[str(v) for v in val]]
        else:
            argv += [flag, str(val)]
    return argv


def _manifest(args, config: dict) -> dict:
    return {
        "tool": "voxfuse",
        "version": __version__,
        "command": args.command,
        "argv": args._argv,
        "replay_argv": args._replay_argv,
        "config": config,
    }


def _abs(path):
    return None if path is None else str(Path(path).resolve())


# -- shared flag groups -------------------------------------------------------

def _check_positive(name, value):
    if value is not None and not value > 0:
        raise UsageError(f"{name} must be > 0, got {value}")


def _gdp_config(args) -> GdpConfig:
    _check_positive("--sigma", args.sigma)
    _check_positive("--truncation", args.truncation)
    return GdpConfig(
        sigma=args.sigma,
        truncation_radius=args.truncation,
        normalization=_NORMALIZATION[args.normalization],
        accumulation=_ACCUMULATION[args.accumulation],
    )


def _threads(args):
    if args.threads is not None and args.threads < 1:
        raise UsageError(f"--threads must be >= 1, got {args.threads}")
    return args.threads


def _remap(args) -> RemapTable:
    return RemapTable.load(args.remap or os.environ.get(REMAP_ENV))


def _seq_path(args, name):
    return None if args.sequence is None else Path(args.sequence) / name


def _frame_name(args, sub, ext):
    if args.sequence is None or args.frame is None:
        return None
    return Path(args.sequence) / sub / f"{args.frame:06d}{ext}"


def _grid(args):
    """Spec and image size from --grid, else the sequence's grid.json, else the SemanticKITTI volume."""
    path = args.grid or _seq_path(args, "grid.json")
    if path is not None and (args.grid or Path(path).exists()):
        return _load_grid_json(path)
    return GridSpec.semantic_kitti(), None


def _image_size(args, from_grid):
    if getattr(args, "image_size", None):
        w, h = args.image_size
        if w < 1 or h < 1:
            raise UsageError("--image-size needs two positive integers")
        return (w, h)
    return from_grid or KITTI_IMAGE_SIZE


def _need(path, flag):
    if path is None:
        raise UsageError(f"{flag} is required (or give --sequence/--frame)")
    return Path(path)


# -- project ------------------------------------------------------------------

def cmd_project(args) -> int:
    cfg = _gdp_config(args)
    threads = _threads(args)
    spec, grid_size = _grid(args)
    size = _image_size(args, grid_size)
    calib_path = _need(args.calib or _seq_path(args, "calib.txt"), "--calib")
    feat_path = _need(args.features or _frame_name(args, "features", ".pfm"), "--features")
    depth_path = args.depth or (None if args.relative_depth else _frame_name(args, "depth", ".pfm"))
    if depth_path is None and args.relative_depth is None:
        raise UsageError("give --depth or --relative-depth")
    if depth_path is not None and args.relative_depth is not None:
        raise UsageError("--depth and --relative-depth are mutually exclusive")

    calib = read_calib(Path(calib_path).read_text(), size)
    pose, K = calib.lidar_to_cam2, calib.K
    feat = FeatureImage(read_pfm_stack(_read_bytes(feat_path)).astype(np.float64))
    fit_doc = None
    if depth_path is not None:
        depth = DepthMap.from_array(read_pfm(_read_bytes(depth_path)))
    else:
        rel = RelativeDepthMap(read_pfm(_read_bytes(args.relative_depth)))
        if args.sparse_depth:
            sparse = DepthMap.from_array(read_pfm(_read_bytes(args.sparse_depth)))
        elif args.scan:
            sparse = render_sparse_depth(read_lidar_bin(_read_bytes(args.scan)), pose, K)
        else:
            raise UsageError("--relative-depth needs --sparse-depth or --scan")
        fit = fit_scale(rel, sparse, FitConfig(space=args.depth_space))
        depth = apply_scale(rel, fit)
        fit_doc = {"a": fit.a, "b": fit.b, "inliers": fit.inlier_count, "rms": fit.rms_residual, "space": fit.space}

    res = gdp_scatter(feat, depth, pose, K, spec, cfg, strict=args.strict, threads=threads)
    f = res.features.features
    labels = np.where(np.any(f != 0, axis=-1), np.argmax(f, axis=-1), 0).astype(np.uint8)
    files = {
        "features.npy": _npy_bytes(f),
        "weights.npy": _npy_bytes(res.weights),
        "touched.bin": write_voxel_bin(res.touched),
        "grid.json": _dumps(_spec_doc(spec)),
    }
    if f.shape[-1] == NUM_CLASSES:
        files["labels.label"] = write_label(LabelGrid(spec, labels), _remap(args))
    config = {
        "gdp": {"sigma": cfg.sigma, "truncation_radius": cfg.truncation_radius,
                "normalization": cfg.normalization, "accumulation": cfg.accumulation},
        "strict": args.strict,
        "threads": threads,
        "grid": spec.to_dict(),
        "image_size": list(size),
        "inputs": {"calib": _abs(calib_path), "features": _abs(feat_path), "depth": _abs(depth_path),
                   "relative_depth": _abs(args.relative_depth), "sparse_depth": _abs(args.sparse_depth),
                   "scan": _abs(args.scan)},
        "depth_fit": fit_doc,
    }
    _commit(Path(args.out), files, _manifest(args, config))
    print(f"touched_voxels={res.touched.count()}")
    print(f"total_weight={float(res.weights.sum()):.6f}")
    return EXIT_OK


# -- warp ---------------------------------------------------------------------

def _frame_motion(args):
    poses = read_poses(Path(args.poses).read_text())
    i, j = args.pair
    for k in (i, j):
        if not 0 <= k < len(poses):
            raise UsageError(f"--pair index {k} outside the {len(poses)} poses")
    tr = RigidPose.identity()
    if args.calib:
        tr = read_calib(Path(args.calib).read_text()).lidar_to_cam2
    return relative_in_frame(poses[i], poses[j], tr)


def cmd_warp(args) -> int:
    spec, _ = _grid(args)
    rel = _frame_motion(args)
    src = Path(args.input)
    if src.suffix == ".label":
        if args.warp_mode == "trilinear":
            raise UsageError("--warp-mode trilinear is not defined for label grids")
        grid = read_label(_read_bytes(src), spec, _remap(args))
        warped = warp_label_grid(grid, rel, spec)
        files = {"warped.label": write_label(warped, _remap(args))}
        mode = "nearest"
    else:
        arr = _load_npy(src)
        if arr.ndim == 3:
            arr = arr[..., None]
        if arr.shape[:3] != spec.dims:
            raise SpecMismatch(f"{src} has shape {arr.shape[:3]}, grid dims are {spec.dims}")
        mode = args.warp_mode or "trilinear"
        warped, inside = warp_feature_grid(FeatureGrid(spec, arr.astype(np.float64)), rel, spec, mode)
        out = warped.features
        if args.init != "zeros":
            fill = init_hidden(spec, out.shape[-1], InitPolicy(args.init, seed=args.seed)).features
            out = np.where(inside.bits[..., None], out, fill)
        files = {"warped.npy": _npy_bytes(out)}
    mask = overlap_mask(spec, rel, spec)
    files["overlap.bin"] = write_voxel_bin(mask)
    files["grid.json"] = _dumps(_spec_doc(spec))
    config = {"warp_mode": mode, "pair": list(args.pair), "grid": spec.to_dict(), "init": args.init,
              "seed": args.seed, "relative_pose": rel.matrix.tolist(),
              "inputs": {"input": _abs(src), "poses": _abs(args.poses), "calib": _abs(args.calib)}}
    _commit(Path(args.out), files, _manifest(args, config))
    print(f"overlap_voxels={mask.count()}")
    return EXIT_OK


# -- eval ---------------------------------------------------------------------

def cmd_eval(args) -> int:
    spec, grid_size = _grid(args)
    remap = _remap(args)
    pred_path = _need(args.pred, "--pred")
    gt_path = _need(args.gt or _frame_name(args, "voxels", ".label"), "--gt")
    pred = read_label(_read_bytes(pred_path), spec, remap)
    gt = read_label(_read_bytes(gt_path), spec, remap)
    mask = MaskGrid.full(spec, True)
    invalid_path = args.invalid or _frame_name(args, "voxels", ".invalid")
    if args.known_only:
        if invalid_path is None or not Path(invalid_path).exists():
            raise UsageError("--known-only needs --invalid (or a .invalid file in the sequence)")
        mask = mask & ~read_voxel_bin(_read_bytes(invalid_path), spec)
    if args.mask:
        mask = mask & read_voxel_bin(_read_bytes(args.mask), spec)
    if args.fov_only:
        calib_path = args.calib or _seq_path(args, "calib.txt")
        if calib_path is None:
            raise UsageError("--fov-only needs --calib")
        calib = read_calib(Path(calib_path).read_text(), _image_size(args, grid_size))
        mask = mask & fov_mask(spec, calib.lidar_to_cam2, calib.K)
    report = miou(pred, gt, mask, absent_as_zero=args.absent_as_zero)
    text = report.to_text()
    sys.stdout.write(text)
    if args.out:
        config = {"grid": spec.to_dict(), "fov_only": args.fov_only, "known_only": args.known_only,
                  "absent_as_zero": args.absent_as_zero,
                  "inputs": {"pred": _abs(pred_path), "gt": _abs(gt_path), "mask": _abs(args.mask),
                             "invalid": _abs(invalid_path) if args.known_only else None}}
        _commit(Path(args.out), {"report.txt": text.encode(), "report.json": report.to_json().encode()},
                _manifest(args, config))
    return EXIT_OK


# -- consistency --------------------------------------------------------------

def cmd_consistency(args) -> int:
    seq = _need(args.sequence, "--sequence")
    spec, size = _grid(args)
    remap = _remap(args)
    pred_dir = Path(args.pred_dir) if args.pred_dir else seq / "voxels"
    files = sorted(pred_dir.glob("*.label"))
    if not files and not pred_dir.is_dir():
        raise FileNotFoundError(f"no such directory: {pred_dir}")
    if len(files) < 2:
        raise UsageError(f"consistency needs at least 2 frames, found {len(files)} in {pred_dir}")
    poses = read_poses((seq / "poses.txt").read_text())
    tr = read_calib((seq / "calib.txt").read_text(), size or KITTI_IMAGE_SIZE).lidar_to_cam2
    frames = [int(f.stem) for f in files]
    if max(frames) >= len(poses):
        raise FormatError(f"poses.txt has {len(poses)} poses, frame {max(frames)} requested")
    grids = [read_label(_read_bytes(f), spec, remap) for f in files]
    lines, pairs = [], []
    for a in range(len(files) - 1):
        rel = relative_in_frame(poses[frames[a]], poses[frames[a + 1]], tr)
        rep = consistency_report(grids[a], grids[a + 1], rel)
        tag = f"{frames[a]:06d}-{frames[a + 1]:06d}"
        pairs.append({"pair": tag, "iou": rep.sc_iou, "miou": rep.miou, "overlap": rep.evaluated_voxel_count})
        lines.append(f"pair.{tag}.iou={100 * rep.sc_iou:.2f}")
        lines.append(f"pair.{tag}.miou={100 * rep.miou:.2f}")
    mean_iou = float(np.mean([p["iou"] for p in pairs]))
    mious = [p["miou"] for p in pairs if not np.isnan(p["miou"])]
    mean_miou = float(np.mean(mious)) if mious else float("nan")
    lines += [f"pairs={len(pairs)}", f"mean_iou={100 * mean_iou:.2f}", f"mean_miou={100 * mean_miou:.2f}"]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        doc = {"pairs": pairs, "mean_iou": mean_iou, "mean_miou": None if np.isnan(mean_miou) else mean_miou}
        for p in doc["pairs"]:
            p["miou"] = None if np.isnan(p["miou"]) else p["miou"]
        config = {"grid": spec.to_dict(), "inputs": {"sequence": _abs(seq), "pred_dir": _abs(pred_dir)}}
        _commit(Path(args.out), {"report.txt": text.encode(), "report.json": _dumps(doc)}, _manifest(args, config))
    return EXIT_OK


# -- synth --------------------------------------------------------------------

def cmd_synth(args) -> int:
    from .pipeline import one_hot_features
    from .synth import RECIPES, Rig, degrade_depth, generate_world, make_sequence, straight_trajectory

    recipe = tuple(r for r in args.recipe.split(",") if r)
    bad = set(recipe) - set(RECIPES)
    if bad:
        raise UsageError(f"--recipe: unknown parts {sorted(bad)}; choose from {','.join(RECIPES)}")
    if args.frames < 1:
        raise UsageError("--frames must be >= 1")
    if not 0 < args.keep_fraction <= 1:
        raise UsageError("--keep-fraction must lie in (0, 1]")
    if args.depth_noise < 0:
        raise UsageError("--depth-noise must be >= 0")
    world = generate_world(args.seed, tuple(args.world_dims), recipe)
    rig = Rig.desk(dims=tuple(args.grid_dims), image_size=tuple(args.image_size))
    start = (2, args.world_dims[1] // 2, 5)
    traj = straight_trajectory(args.frames, rig.spec, start_voxels=start, step_voxels=(args.step, 0, 0),
                               max_step=max(1.0, abs(args.step) * rig.spec.voxel_size))
    seq = make_sequence(world, rig, traj)
    remap = _remap(args)

    root = "sequences/00/"
    files = {
        "world.label": write_label(world.grid, remap),
        "world.json": _dumps(_spec_doc(world.grid.spec)),
        root + "calib.txt": write_calib(rig.K, rig.extrinsic).encode(),
        root + "poses.txt": write_poses([f.camera_pose for f in seq.frames]).encode(),
        root + "grid.json": _dumps(_spec_doc(rig.spec, args.image_size)),
    }
    for n, fr in enumerate(seq.frames):
        name = f"{n:06d}"
        depth = fr.raycast.depth
        if args.depth_noise > 0 or args.keep_fraction < 1:
            depth = degrade_depth(depth, args.keep_fraction, args.depth_noise, args.seed * 1000003 + n)
        occ = MaskGrid(rig.spec, (fr.gt.labels != 0) & fr.known.bits)
        files.update({
            root + f"voxels/{name}.label": write_label(fr.gt, remap),
            root + f"voxels/{name}.invalid": write_voxel_bin(~fr.known),
            root + f"voxels/{name}.bin": write_voxel_bin(occ),
            root + f"visible/{name}.bin": write_voxel_bin(fr.visible),
            root + f"depth/{name}.pfm": write_pfm(depth.filled(0.0)),
            root + f"features/{name}.pfm": write_pfm_stack(one_hot_features(fr.raycast.labels,
                                                                         fr.raycast.depth.valid).values),
        })
    config = {"seed": args.seed, "recipe": list(recipe), "world_dims": list(args.world_dims),
              "grid": rig.spec.to_dict(), "image_size": list(args.image_size), "frames": args.frames,
              "step_voxels": args.step, "depth_noise": args.depth_noise, "keep_fraction": args.keep_fraction}
    _commit(Path(args.out), files, _manifest(args, config))
    print(f"frames={args.frames}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def _gdp_flags(p):
    p.add_argument("--sigma", type=float, default=16.0, help="Gaussian std in voxel units (default 16)")
    p.add_argument("--truncation", type=float, default=3.0, help="cutoff radius in multiples of sigma")
    p.add_argument("--normalization", choices=sorted(_NORMALIZATION), default="none")
    p.add_argument("--accumulation", choices=sorted(_ACCUMULATION), default="mean")
    p.add_argument("--threads", type=int, default=None)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--strict", dest="strict", action="store_true", default=True,
                      help="fixed accumulation order, bit-reproducible (default)")
    mode.add_argument("--fast", dest="strict", action="store_false", help="parallel accumulation")


def _common(p, out_required=True):
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--remap", help=f"label remap YAML (default ${REMAP_ENV}, then the bundled table)")
    p.add_argument("--seed", type=int, default=0)


def _grid_flags(p):
    p.add_argument("--sequence", help="a sequences/XX directory supplying default paths")
    p.add_argument("--frame", type=int, help="frame number within --sequence")
    p.add_argument("--grid", help="grid.json describing the volume (default: SemanticKITTI 256x256x32)")
    p.add_argument("--image-size", type=int, nargs=2, metavar=("W", "H"))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="voxfuse", description="Lift image features into voxel grids and score SSC outputs.")
    parser.add_argument("--version", action="version", version=f"voxfuse {__version__}")
    parser.add_argument("--replay", metavar="MANIFEST", help="re-run the command recorded in a manifest")
    parser.add_argument("--out", dest="replay_out", help=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("project", help="project a feature image into the volume")
    _grid_flags(p)
    p.add_argument("--calib")
    p.add_argument("--features", help="feature PFM stack (one Pf image per channel)")
    p.add_argument("--depth", help="metric depth PFM")
    p.add_argument("--relative-depth", help="relative depth PFM, scaled against --sparse-depth or --scan")
    p.add_argument("--sparse-depth")
    p.add_argument("--scan", help="LiDAR .bin rendered into sparse depth")
    p.add_argument("--depth-space", choices=("depth", "inverse"), default="depth")
    _gdp_flags(p)
    _common(p)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("warp", help="warp a grid from one frame into another")
    _grid_flags(p)
    p.add_argument("--input", required=True, help=".npy feature grid or .label grid")
    p.add_argument("--poses", required=True)
    p.add_argument("--pair", type=int, nargs=2, required=True, metavar=("FROM", "TO"))
    p.add_argument("--calib", help="supplies the grid->camera extrinsic (identity otherwise)")
    p.add_argument("--warp-mode", choices=WARP_MODES, default=None)
    p.add_argument("--init", choices=("zeros", "random"), default="zeros", help="fill outside the overlap")
    _common(p)
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("eval", help="score a predicted label grid")
    _grid_flags(p)
    p.add_argument("--pred")
    p.add_argument("--gt")
    p.add_argument("--invalid")
    p.add_argument("--mask", help="extra packed voxel mask restricting evaluation")
    p.add_argument("--calib")
    p.add_argument("--fov-only", action="store_true")
    p.add_argument("--known-only", action="store_true")
    p.add_argument("--absent-as-zero", action="store_true")
    _common(p, out_required=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("consistency", help="agreement of adjacent predictions within their overlap")
    _grid_flags(p)
    p.add_argument("--pred-dir", help="directory of NNNNNN.label predictions (default: the sequence's voxels/)")
    _common(p, out_required=False)
    p.set_defaults(func=cmd_consistency)

    p = sub.add_parser("synth", help="write a synthetic dataset-shaped sequence")
    p.add_argument("--recipe", default="ground-plane,boxes")
    p.add_argument("--world-dims", type=int, nargs=3, default=[64, 64, 16])
    p.add_argument("--grid-dims", type=int, nargs=3, default=[32, 32, 16])
    p.add_argument("--image-size", type=int, nargs=2, default=[96, 64], metavar=("W", "H"))
    p.add_argument("--frames", type=int, default=4)
    p.add_argument("--step", type=int, default=2, help="voxels travelled per frame along x")
    p.add_argument("--depth-noise", type=float, default=0.0, help="depth noise std in meters")
    p.add_argument("--keep-fraction", type=float, default=1.0)
    _common(p)
    p.set_defaults(func=cmd_synth)
    return parser


def _replay(parser, manifest_path, out) -> int:
    if not out:
        raise UsageError("--replay needs --out (a fresh directory)")
    doc = json.loads(Path(manifest_path).read_text())
    argv = list(doc["replay_argv"]) + ["--out", out]
    code = _run(parser, argv)
    if code != EXIT_OK:
        return code
    new = json.loads((Path(out) / MANIFEST).read_text())
    if new.get("outputs") != doc.get("outputs"):
        print("replay: outputs differ from the manifest", file=sys.stderr)
        return EXIT_INVALID
    print("replay: outputs match the manifest", file=sys.stderr)
    return EXIT_OK


def _run(parser, argv) -> int:
    args = parser.parse_args(argv)
    if args.replay:
        return _replay(parser, args.replay, args.replay_out)
    if args.command is None:
        raise UsageError("choose a subcommand: project, warp, eval, consistency or synth")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    args._argv = _strip_out(argv)
    args._replay_argv = _resolved_argv(args, sub._actions)
    return args.func(args)


def _strip_out(argv) -> list:
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        if a == "--out":
            skip = True
            continue
        if a.startswith("--out="):
            continue
        out.append(a)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        return _run(parser, argv)
    except ValidationError as exc:
        print(f"voxfuse: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (FormatError, OSError) as exc:
        print(f"voxfuse: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
