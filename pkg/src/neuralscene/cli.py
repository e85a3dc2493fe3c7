"""The ``neuralscene`` command.

Every option is a key of one flat run configuration. A JSON file given
with ``--config`` supplies values, explicit flags override it, and the
merged configuration is written as ``run_config.json`` into the output
directory (and into checkpoints written by ``train``).

Exit codes: 0 success, 1 usage error, 2 data integrity, 3 numerical abort.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .camera import CameraModel, archimedean_spiral_poses, intrinsics_from_fov, roll
from .checkpoint import CheckpointIntegrityError, CheckpointVersionError, load_checkpoint
from .images import read_png, write_pfm, write_png
from .metrics import psnr, ssim
from .numerics import NonFiniteError, Tensor
from .renderer import normals_from_depth, normals_to_image
from .synthdata import (DataIntegrityError, DatasetConfig, build_dataset, load_dataset,
                        read_manifest)
from .training import (LossWeights, ModelConfig, TrainConfig, Trainer, few_shot_infer, init_model,
                       model_checkpoint, model_from_checkpoint, render_view)

log = logging.getLogger("neuralscene")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
RUN_CONFIG_NAME = "run_config.json"


class UsageError(Exception):
    pass


def _ints(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _opt_float(text):
    if text is None or (isinstance(text, str) and text.lower() in ("", "none", "null")):
        return None
    return float(text)


def _opt_floats(text):
    if text is None or (isinstance(text, str) and text.lower() in ("", "none", "null")):
        return None
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    if str(text).lower() in ("1", "true", "yes", "on"):
        return True
    if str(text).lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_str(text):
    return None if text is None else str(text)


@dataclass(frozen=True)
class Option:
    key: str
    parse: Callable
    default: Any
    help: str
    commands: tuple


_ALL = ("generate", "train", "render", "infer", "eval", "interpolate")
_MODEL = ("train",)
_RENDERS = ("render", "infer", "interpolate")

OPTIONS = [
    Option("dataset", _opt_str, None, "dataset directory (with manifest.json)", ("train", "infer", "eval")),
    Option("output", _opt_str, None, "output directory", _ALL),
    Option("checkpoint", _opt_str, None, "checkpoint to load (train: resume from it)",
           ("train", "render", "infer", "eval", "interpolate")),
    # dataset generation
    Option("class", str, "shepard", "scene class: shepard or sphere", ("generate",)),
    Option("elements", int, 7, "cubes per Shepard-Metzler object", ("generate",)),
    Option("instances", int, 1, "number of scene instances", ("generate",)),
    Option("views", int, 15, "training views per instance", ("generate",)),
    Option("test_views", int, 0, "held-out spiral views per instance", ("generate",)),
    Option("res", int, 64, "image width and height in pixels", ("generate", *_RENDERS)),
    Option("camera_radius", float, 2.5, "camera distance from the origin", ("generate", *_RENDERS)),
    Option("fov", float, 50.0, "horizontal field of view in degrees", ("generate", *_RENDERS)),
    # model
    Option("mode", str, "auto", "single, hyper, or auto (hyper iff the dataset has >1 instance)",
           _MODEL),
    Option("n", int, 32, "feature dimension of the scene function", _MODEL),
    Option("k", int, 64, "latent code dimension", _MODEL),
    Option("phi_hidden", _ints, (64, 64, 64), "scene function hidden widths, comma separated", _MODEL),
    Option("hyper_hidden", _ints, (64,), "hypernetwork hidden widths", _MODEL),
    Option("generator_hidden", _ints, (64, 64, 64), "pixel generator hidden widths", _MODEL),
    Option("lstm_hidden", int, 16, "step LSTM hidden size", _MODEL),
    Option("layer_norm", _bool, False, "layer normalization in the MLPs", _MODEL),
    Option("init_step", float, 0.0, "initial bias of the predicted step length", _MODEL),
    Option("background", _opt_float, None, "initial color bias of the pixel generator", _MODEL),
    Option("precision", str, "float32", "float32 or float64", _MODEL),
    # marching
    Option("d0", float, 0.05, "initial distance along every ray", _MODEL),
    Option("max_iter", int, 10, "marching steps per ray", _MODEL),
    # loss and optimizer
    Option("lambda_dep", float, 1e-3, "weight of the negative-depth penalty", ("train", "infer")),
    Option("lambda_lat", _opt_float, None, "weight of the latent prior (default 1/k)", ("train", "infer")),
    Option("lr", float, 4e-4, "Adam learning rate", ("train",)),
    Option("lr_schedule", str, "constant", "constant, or cosine decay to lr_final", ("train",)),
    Option("lr_final", float, 0.0, "final learning rate of the cosine schedule", ("train",)),
    Option("origin_scale", _opt_floats, None,
           "slide training-ray origins to LO,HI times the camera distance (off by default)", ("train",)),
    Option("code_lr", _opt_float, None, "learning rate for latent codes (default: lr)", ("train",)),
    Option("steps", int, 1000, "total training steps", ("train",)),
    Option("batch_views", int, 4, "views per training batch", ("train",)),
    Option("rays_per_view", int, 1024, "rays sampled per view", ("train",)),
    Option("log_every", int, 50, "metrics CSV interval in steps", ("train",)),
    Option("ckpt_every", int, 1000, "checkpoint interval in steps", ("train",)),
    Option("seed", int, 0, "random seed", ("generate", "train", "infer")),
    # rendering
    Option("poses", _opt_str, None, "JSON pose file (default: Archimedean spiral)", ("render",)),
    Option("spiral", int, 250, "number of spiral poses", _RENDERS),
    Option("radius_scale", float, 1.0, "scales the camera distance of rendered poses", ("render",)),
    Option("roll", float, 0.0, "camera roll in degrees for rendered poses", ("render",)),
    Option("instance", _opt_str, None, "instance id (hyper models / infer observations)",
           ("render", "infer")),
    Option("code", _opt_str, None, "latent code JSON file to render instead of an instance",
           ("render",)),
    # inference / evaluation / interpolation
    Option("shots", int, 1, "number of observed views for latent inference", ("infer",)),
    Option("shot_views", _ints, (), "indices of the observed views (default: 0..shots-1)", ("infer",)),
    Option("infer_split", str, "train", "dataset split holding the observations", ("infer",)),
    Option("infer_steps", int, 1000, "optimization steps for latent inference", ("infer",)),
    Option("infer_lr", float, 3e-3, "learning rate for latent inference", ("infer",)),
    Option("infer_rays", int, 0, "rays per view per inference step (0: all pixels)", ("infer",)),
    Option("split", str, "test", "dataset split to evaluate", ("eval",)),
    Option("codes", _opt_str, None, "directory of inferred codes (infer output) for eval", ("eval",)),
    Option("images", _opt_str, None, "score images from this directory instead of rendering",
           ("eval",)),
    Option("id_a", _opt_str, None, "first instance id", ("interpolate",)),
    Option("id_b", _opt_str, None, "second instance id", ("interpolate",)),
    Option("frames", int, 10, "number of interpolation frames (t from 0 to 1)", ("interpolate",)),
    Option("rotate", _bool, False, "move the camera along the spiral while interpolating",
           ("interpolate",)),
]
_BY_KEY = {o.key: o for o in OPTIONS}


def options_for(command: str) -> list[Option]:
    return [o for o in OPTIONS if command in o.commands]


class RunConfig(dict):
    """Flat, JSON-serializable key/value configuration of one command."""

    @classmethod
    def resolve(cls, command: str, file_values: dict | None, flag_values: dict) -> "RunConfig":
        allowed = {o.key: o for o in options_for(command)}
        cfg = cls(command=command)
        for o in allowed.values():
            cfg[o.key] = o.default
        for source in (file_values or {}, flag_values):
            for key, value in source.items():
                if key == "command":
                    continue
                if key not in allowed:
                    if key in _BY_KEY:
                        continue  # shared config files may carry keys of other commands
                    raise UsageError(f"unknown configuration key {key!r}")
                try:
                    cfg[key] = allowed[key].parse(value)
                except (TypeError, ValueError) as exc:
                    raise UsageError(f"bad value for {key}: {value!r} ({exc})") from exc
        return cfg

    def to_json(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.items()}

    def write(self, directory) -> Path:
        path = Path(directory) / RUN_CONFIG_NAME
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=1, sort_keys=True)
            f.write("\n")
        return path

    def require(self, *keys):
        missing = [k for k in keys if self.get(k) in (None, "")]
        if missing:
            raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-")
                                                                         for k in missing))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="neuralscene",
                     description="Generate data for, train, render and evaluate neural scene models.",
                     formatter_class=argparse.RawDescriptionHelpFormatter,
                     epilog="Exit codes: 0 success, 1 usage, 2 data integrity, 3 numerical abort.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    helps = {"generate": "render a synthetic dataset with the oracle sphere tracer",
             "train": "train a single-scene or hypernetwork model",
             "render": "render rgb, depth and normal images along a trajectory",
             "infer": "fit a latent code to one or two views of a new instance",
             "eval": "PSNR/SSIM table of renders against a dataset split",
             "interpolate": "render a linear path between two latent codes"}
    for name in _ALL:
        p = sub.add_parser(name, help=helps[name], description=helps[name],
                           argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="JSON run configuration; explicit flags override it")
        for o in options_for(name):
            default = list(o.default) if isinstance(o.default, tuple) else o.default
            p.add_argument("--" + o.key.replace("_", "-"), dest=o.key, metavar=o.key.upper(),
                           help=f"{o.help} (default: {default})")
    return parser


# -- helpers ----------------------------------------------------------------------------

def _out_dir(cfg: RunConfig, must_be_new: bool = False) -> Path:
    cfg.require("output")
    out = Path(cfg["output"])
    if not out.parent.exists():
        raise FileNotFoundError(f"parent directory does not exist: {out.parent}")
    if must_be_new and out.exists() and any(out.iterdir()):
        raise FileExistsError(f"output directory is not empty: {out}")
    out.mkdir(exist_ok=True)
    return out


def _load_model(cfg: RunConfig):
    cfg.require("checkpoint")
    return model_from_checkpoint(load_checkpoint(cfg["checkpoint"]))


def _spiral_cameras(cfg: RunConfig, count: int | None = None) -> list[CameraModel]:
    res = cfg["res"]
    K = intrinsics_from_fov(res, res, cfg["fov"])
    radius = cfg["camera_radius"] * cfg.get("radius_scale", 1.0)
    return [CameraModel.from_extrinsics(E, K, res, res)
            for E in archimedean_spiral_poses(count or cfg["spiral"], radius)]


def read_pose_file(path, res: int, fov: float) -> list[CameraModel]:
    """Pose file: a JSON list (or ``{"poses": [...]}``) of 3x4 world-to-camera
    matrices, or of records with ``E`` and optional ``K``/``width``/``height``.
    A dataset manifest is accepted too (its training views are used)."""
    with open(path) as f:
        data = json.load(f)
    if isinstance(data, dict) and "instances" in data:
        W, H = data["image_size"]
        return [CameraModel.from_extrinsics(r["E"], r["K"], W, H)
                for r in data["instances"][0]["views"]]
    if isinstance(data, dict):
        data = data.get("poses", data.get("views"))
    if not isinstance(data, list) or not data:
        raise DataIntegrityError(f"{path}: no poses found")
    cams = []
    for rec in data:
        if not isinstance(rec, dict):
            rec = {"E": rec}
        W = int(rec.get("width", res))
        H = int(rec.get("height", res))
        K = rec.get("K", intrinsics_from_fov(W, H, fov))
        try:
            cam = CameraModel.from_extrinsics(rec["E"], K, W, H)
            cam.validate()
        except (KeyError, ValueError) as exc:
            raise DataIntegrityError(f"{path}: bad pose record ({exc})") from exc
        cams.append(cam)
    return cams


def write_code(path, z: np.ndarray, meta: dict | None = None) -> None:
    with open(path, "w") as f:
        json.dump({"z": [float(v) for v in np.asarray(z).ravel()], "dtype": str(np.asarray(z).dtype),
                   **(meta or {})}, f, indent=1, sort_keys=True)
        f.write("\n")


def read_code(path) -> np.ndarray:
    with open(path) as f:
        data = json.load(f)
    try:
        return np.asarray(data["z"], dtype=data.get("dtype", "float32"))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataIntegrityError(f"{path}: malformed latent code") from exc


def write_frames(out: Path, model, cams, codes, instance=None, start: int = 0) -> int:
    """Write rgb/depth/normal files for each (camera, code) pair; returns the count."""
    n = 0
    for j, (cam, z) in enumerate(zip(cams, codes)):
        r = render_view(model, cam, instance, z)
        idx = start + j
        write_png(out / f"rgb_{idx:04d}.png", r.rgb_clamped())
        write_pfm(out / f"depth_{idx:04d}.pfm", r.depth)
        write_png(out / f"normal_{idx:04d}.png", normals_to_image(normals_from_depth(r.depth, cam)))
        n += 1
    return n


def _instance_or_code(model, cfg: RunConfig):
    if cfg.get("code"):
        return None, Tensor(read_code(cfg["code"]).astype(model.config.dtype))
    if model.mode == "hyper":
        iid = cfg.get("instance") or model.codebook.ids()[0]
        if iid not in model.codebook:
            raise UsageError(f"instance {iid!r} is not in the checkpoint")
        return iid, None
    return None, None


# -- commands -----------------------------------------------------------------------------

def cmd_generate(cfg: RunConfig) -> int:
    cfg.require("output")
    dc = DatasetConfig(kind=cfg["class"], elements=cfg["elements"], instances=cfg["instances"],
                       views=cfg["views"], test_views=cfg["test_views"], resolution=cfg["res"],
                       camera_radius=cfg["camera_radius"], fov_deg=cfg["fov"], seed=cfg["seed"])
    if dc.kind not in ("shepard", "sphere"):
        raise UsageError(f"unknown scene class {dc.kind!r}")
    build_dataset(dc, cfg["output"])
    cfg.write(cfg["output"])
    log.info("wrote %d instance(s) to %s", dc.instances, cfg["output"])
    return EXIT_OK


def _model_config(cfg: RunConfig) -> ModelConfig:
    if cfg["precision"] not in ("float32", "float64"):
        raise UsageError("precision must be float32 or float64")
    return ModelConfig(feature_dim=cfg["n"], latent_dim=cfg["k"], phi_hidden=cfg["phi_hidden"],
                       hyper_hidden=cfg["hyper_hidden"], generator_hidden=cfg["generator_hidden"],
                       lstm_hidden=cfg["lstm_hidden"], layer_norm=cfg["layer_norm"], d0=cfg["d0"],
                       max_iter=cfg["max_iter"], init_step=cfg["init_step"],
                       background=cfg["background"], seed=cfg["seed"], precision=cfg["precision"])


def _train_config(cfg: RunConfig) -> TrainConfig:
    if cfg["lr_schedule"] not in ("constant", "cosine"):
        raise UsageError("lr_schedule must be constant or cosine")
    scale = cfg["origin_scale"]
    if scale is not None and (len(scale) != 2 or not 0 < scale[0] <= scale[1]):
        raise UsageError("origin_scale must be two numbers LO,HI with 0 < LO <= HI")
    return TrainConfig(steps=cfg["steps"], batch_views=cfg["batch_views"],
                       rays_per_view=cfg["rays_per_view"], lr=cfg["lr"], code_lr=cfg["code_lr"],
                       lambda_dep=cfg["lambda_dep"], lambda_lat=cfg["lambda_lat"],
                       log_every=cfg["log_every"], ckpt_every=cfg["ckpt_every"], seed=cfg["seed"],
                       lr_schedule=cfg["lr_schedule"], lr_final=cfg["lr_final"],
                       origin_scale=cfg["origin_scale"])


def _trim_metrics(path: Path, step: int) -> None:
    """Drop metric rows past ``step`` so a resumed run keeps the CSV monotone."""
    if not path.exists():
        return
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    keep = rows[:1] + [r for r in rows[1:] if r and int(r[0]) <= step]
    with open(path, "w", newline="") as f:
        csv.writer(f).writerows(keep)


def cmd_train(cfg: RunConfig) -> int:
    cfg.require("dataset")
    datasets = load_dataset(cfg["dataset"])
    if not datasets:
        raise DataIntegrityError(f"{cfg['dataset']}: no training views")
    out = _out_dir(cfg)
    tc = _train_config(cfg)
    tc.scene_radius = float(read_manifest(cfg["dataset"]).get("scene_radius", 1.0))
    if cfg.get("checkpoint"):
        trainer = Trainer.from_checkpoint(load_checkpoint(cfg["checkpoint"]), datasets, tc)
        trainer.run_config = cfg.to_json()
        _trim_metrics(out / "metrics.csv", trainer.step)
    else:
        mode = cfg["mode"]
        if mode not in ("auto", "single", "hyper"):
            raise UsageError("mode must be single, hyper or auto")
        if mode == "auto":
            mode = "hyper" if len(datasets) > 1 else "single"
        ids = [ds.instance_id for ds in datasets] if mode == "hyper" else None
        model = init_model(_model_config(cfg), ids, mode)
        trainer = Trainer(model, datasets, tc, run_config=cfg.to_json())
        if (out / "metrics.csv").exists():
            (out / "metrics.csv").unlink()
    cfg.write(out)
    remaining = max(0, tc.steps - trainer.step)
    trainer.run(remaining, out)
    log.info("trained to step %d; checkpoints in %s", trainer.step, out)
    return EXIT_OK


def cmd_render(cfg: RunConfig) -> int:
    model = _load_model(cfg)
    out = _out_dir(cfg)
    if cfg.get("poses"):
        cams = read_pose_file(cfg["poses"], cfg["res"], cfg["fov"])
        if cfg["radius_scale"] != 1.0:
            cams = [CameraModel(c.K, c.R, c.t * cfg["radius_scale"], c.width, c.height) for c in cams]
    else:
        cams = _spiral_cameras(cfg)
    if cfg["roll"]:
        cams = [CameraModel(c.K, *roll(c.R, c.t, cfg["roll"]), c.width, c.height) for c in cams]
    iid, z = _instance_or_code(model, cfg)
    cfg.write(out)
    n = write_frames(out, model, cams, [z] * len(cams), iid)
    log.info("rendered %d frame(s) to %s", n, out)
    return EXIT_OK


def cmd_infer(cfg: RunConfig) -> int:
    cfg.require("dataset")
    model = _load_model(cfg)
    if model.mode != "hyper":
        raise UsageError("latent inference needs a hypernetwork checkpoint")
    datasets = load_dataset(cfg["dataset"], cfg["infer_split"])
    if cfg.get("instance"):
        datasets = [ds for ds in datasets if ds.instance_id == cfg["instance"]]
        if not datasets:
            raise UsageError(f"instance {cfg['instance']!r} not found in {cfg['dataset']}")
    shots = cfg["shots"]
    view_ids = list(cfg["shot_views"]) or list(range(shots))
    if shots < 1 or len(view_ids) != shots:
        raise UsageError("shots must be >= 1 and match the number of --shot-views")
    out = _out_dir(cfg)
    cfg.write(out)
    weights = LossWeights(cfg["lambda_dep"], cfg["lambda_lat"])
    before = model_checkpoint(model)
    summary = []
    for ds in datasets:
        if max(view_ids) >= len(ds):
            raise UsageError(f"instance {ds.instance_id} has only {len(ds)} view(s)")
        obs = [(ds.images[j], ds.cameras[j]) for j in view_ids]
        code = few_shot_infer(obs, model, weights, steps=cfg["infer_steps"], lr=cfg["infer_lr"],
                              rays_per_view=cfg["infer_rays"] or None, seed=cfg["seed"])
        inst_dir = out / ds.instance_id
        inst_dir.mkdir(exist_ok=True)
        write_code(inst_dir / "z.json", code.z.data, {"instance": ds.instance_id, "views": view_ids})
        if cfg["spiral"] > 1:
            cams = _spiral_cameras(cfg)
            write_frames(inst_dir, model, cams, [code.z] * len(cams))
        summary.append(ds.instance_id)
    if not before.equals(model_checkpoint(model)):
        raise RuntimeError("model weights changed during latent inference")
    log.info("inferred %d code(s) into %s", len(summary), out)
    return EXIT_OK


def _eval_rows(cfg: RunConfig) -> list[dict]:
    cfg.require("dataset")
    datasets = load_dataset(cfg["dataset"], cfg["split"])
    rows = []
    if cfg.get("images"):
        root = Path(cfg["images"])
        manifest = read_manifest(cfg["dataset"])
        key = {"train": "views", "test": "test_views"}[cfg["split"]]
        recs = {inst["id"]: inst[key] for inst in manifest["instances"]}
        for ds in datasets:
            for j, rec in enumerate(recs[ds.instance_id]):
                path = root / rec["image"]
                if not path.exists():
                    raise DataIntegrityError(f"missing image {path}")
                pred = read_png(path)
                rows.append({"instance": ds.instance_id, "view": j,
                             "psnr": psnr(pred, ds.images[j]), "ssim": ssim(pred, ds.images[j])})
        return rows
    model = _load_model(cfg)
    codes_dir = Path(cfg["codes"]) if cfg.get("codes") else None
    for ds in datasets:
        iid, z = None, None
        if codes_dir is not None and (codes_dir / ds.instance_id / "z.json").exists():
            z = Tensor(read_code(codes_dir / ds.instance_id / "z.json").astype(model.config.dtype))
        elif model.mode == "hyper":
            if ds.instance_id in model.codebook:
                iid = ds.instance_id
            else:
                z = Tensor(np.zeros(model.config.latent_dim, dtype=model.config.dtype))
        for j, cam in enumerate(ds.cameras):
            pred = render_view(model, cam, iid, z).rgb_clamped()
            rows.append({"instance": ds.instance_id, "view": j,
                         "psnr": psnr(pred, ds.images[j]), "ssim": ssim(pred, ds.images[j])})
    return rows


def cmd_eval(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    rows = _eval_rows(cfg)
    if not rows:
        raise DataIntegrityError(f"split {cfg['split']!r} of {cfg['dataset']} has no views")
    cfg.write(out)
    with open(out / "eval.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["instance", "view", "psnr", "ssim"])
        w.writeheader()
        for r in rows:
            w.writerow({**r, "psnr": repr(r["psnr"]), "ssim": repr(r["ssim"])})
    summary = {"count": len(rows), "psnr": float(np.mean([r["psnr"] for r in rows])),
               "ssim": float(np.mean([r["ssim"] for r in rows]))}
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=1, sort_keys=True)
        f.write("\n")
    print(f"{summary['count']} images  PSNR {summary['psnr']:.2f} dB  SSIM {summary['ssim']:.4f}")
    return EXIT_OK


def interpolation_codes(za: np.ndarray, zb: np.ndarray, frames: int) -> list[np.ndarray]:
    """z(t) = (1 - t) z_a + t z_b for ``frames`` values of t spanning [0, 1]."""
    if frames < 2:
        raise UsageError("interpolation needs at least 2 frames")
    za, zb = np.asarray(za), np.asarray(zb)
    return [((1.0 - t) * za + t * zb).astype(za.dtype) for t in np.linspace(0.0, 1.0, frames)]


def cmd_interpolate(cfg: RunConfig) -> int:
    cfg.require("id_a", "id_b")
    model = _load_model(cfg)
    if model.mode != "hyper":
        raise UsageError("interpolation needs a hypernetwork checkpoint")
    for iid in (cfg["id_a"], cfg["id_b"]):
        if iid not in model.codebook:
            raise UsageError(f"instance {iid!r} is not in the checkpoint")
    out = _out_dir(cfg)
    za = model.codebook[cfg["id_a"]].z.data
    zb = model.codebook[cfg["id_b"]].z.data
    codes = [Tensor(z) for z in interpolation_codes(za, zb, cfg["frames"])]
    if cfg["rotate"]:
        cams = _spiral_cameras(cfg, max(2, len(codes)))[:len(codes)]
    else:
        cams = _spiral_cameras(cfg, 3)[1:2] * len(codes)
    cfg.write(out)
    write_frames(out, model, cams, codes)
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "render": cmd_render,
            "infer": cmd_infer, "eval": cmd_eval, "interpolate": cmd_interpolate}


def main(argv=None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    verbose = args.pop("verbose", False)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    command = args.pop("command", None)
    if command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    config_path = args.pop("config", None)
    try:
        file_values = None
        if config_path:
            try:
                with open(config_path) as f:
                    file_values = json.load(f)
            except (OSError, json.JSONDecodeError) as exc:
                raise UsageError(f"cannot read config {config_path}: {exc}") from exc
            if not isinstance(file_values, dict):
                raise UsageError(f"{config_path}: expected a JSON object")
        cfg = RunConfig.resolve(command, file_values, args)
        return COMMANDS[command](cfg)
    except UsageError as exc:
        print(f"neuralscene {command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, FileExistsError, NotADirectoryError) as exc:
        print(f"neuralscene {command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataIntegrityError, CheckpointIntegrityError, CheckpointVersionError) as exc:
        print(f"neuralscene {command}: data integrity error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteError as exc:
        print(f"neuralscene {command}: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
