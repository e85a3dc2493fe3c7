"""Joint optimization of the renderer, the scene representation and the
latent codes, few-shot latent inference, evaluation and checkpointing."""
from __future__ import annotations

import contextlib
import csv
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .camera import CameraModel, generate_rays
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .metrics import psnr, ssim
from .numerics import (LstmSpec, MlpSpec, NonFiniteError, OptimizerState, Tensor,
                       backward, concat, lstm_init, mean, mlp_init, no_grad, optimizer_step, square,
                       zero_grad)
from .raymarcher import MarchConfig, depth_positivity_loss
from .renderer import RenderOutput, Renderer, generator_spec, init_generator, render, shade_rays
from .scene import (Hypernetwork, LatentCode, LatentCodebook, SceneFunction, codebook_init,
                    hypernet_map, init_hypernetwork, scene_spec)
from .synthdata import InstanceDataset

log = logging.getLogger(__name__)

METRICS_HEADER = ["step", "loss_img", "loss_depth", "loss_latent", "psnr"]


@dataclass
class ModelConfig:
    feature_dim: int = 32
    latent_dim: int = 64
    phi_hidden: tuple = (64, 64, 64)
    hyper_hidden: tuple = (64,)
    generator_hidden: tuple = (64, 64, 64)
    lstm_hidden: int = 16
    layer_norm: bool = False
    d0: float = 0.05
    max_iter: int = 10
    # initial bias of the LSTM step head; 0 means "start with zero steps"
    init_step: float = 0.0
    # initial generator output bias (e.g. 1.0 for a white background)
    background: float | None = None
    seed: int = 0
    precision: str = "float32"

    @property
    def dtype(self):
        return {"float32": np.float32, "float64": np.float64}[self.precision]

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("phi_hidden", "hyper_hidden", "generator_hidden"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        d = {k: v for k, v in d.items() if k in known}
        for k in ("phi_hidden", "hyper_hidden", "generator_hidden"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class LossWeights:
    lambda_dep: float = 1e-3
    lambda_lat: float | None = None   # None -> 1 / latent_dim

    def __post_init__(self):
        for v in (self.lambda_dep, self.lambda_lat):
            if v is not None and (not np.isfinite(v) or v < 0):
                raise ValueError("loss weights must be finite and non-negative")

    def latent(self, k: int) -> float:
        return 1.0 / k if self.lambda_lat is None else self.lambda_lat


@dataclass
class SceneModel:
    """Renderer parameters plus either one scene function (single-scene
    mode) or a hypernetwork with a latent codebook (class mode)."""

    config: ModelConfig
    renderer: Renderer
    phi_spec: MlpSpec
    scene: SceneFunction | None = None
    hypernet: Hypernetwork | None = None
    codebook: LatentCodebook | None = None

    @property
    def mode(self) -> str:
        return "single" if self.hypernet is None else "hyper"

    def parameters(self, include_codes: bool = True) -> dict[str, Tensor]:
        params = dict(self.renderer.tensors())
        if self.scene is not None:
            params["phi"] = self.scene.phi
        if self.hypernet is not None:
            params["psi"] = self.hypernet.psi
        if include_codes and self.codebook is not None:
            params.update(self.codebook.tensors())
        return params

    def scene_for(self, ids: Sequence | None = None, z: Tensor | None = None) -> SceneFunction:
        """Batched scene function for instance ``ids`` (or explicit codes ``z``)."""
        if self.mode == "single":
            return self.scene
        if z is None:
            z = self.codebook.gather(ids)
        return hypernet_map(self.hypernet, z)

    def instance_scene(self, instance_id=None, z=None) -> SceneFunction:
        """Unbatched scene function, e.g. for full-image rendering."""
        if self.mode == "single":
            return self.scene
        if z is None:
            z = self.codebook[instance_id].z
        if isinstance(z, LatentCode):
            z = z.z
        return hypernet_map(self.hypernet, z)

    def code_for(self, instance_id) -> Tensor | None:
        return None if self.codebook is None else self.codebook[instance_id].z


def init_model(config: ModelConfig, instance_ids: Iterable | None = None,
               mode: str = "auto") -> SceneModel:
    """Fresh model. ``mode`` is "single", "hyper" or "auto" (hyper iff ids given)."""
    ids = None if instance_ids is None else list(instance_ids)
    if mode == "auto":
        mode = "single" if ids is None else "hyper"
    rng = np.random.default_rng(config.seed)
    dt = config.dtype
    phi_spec = scene_spec(config.feature_dim, config.phi_hidden, config.layer_norm)
    gspec = generator_spec(config.feature_dim, config.generator_hidden, config.layer_norm)
    lstm = lstm_init(LstmSpec(config.feature_dim, config.lstm_hidden, config.init_step), rng, dt)
    gen = init_generator(gspec, rng, dt, config.background)
    renderer = Renderer(lstm, gen, gspec, MarchConfig(config.d0, config.max_iter))
    if mode == "single":
        phi = Tensor(mlp_init(phi_spec, rng, dt), requires_grad=True, name="phi")
        return SceneModel(config, renderer, phi_spec, scene=SceneFunction(phi, phi_spec))
    if not ids:
        raise ValueError("class mode needs at least one instance id")
    hyper = init_hypernetwork(phi_spec, config.latent_dim, config.hyper_hidden, rng, dt)
    book = codebook_init(ids, config.latent_dim, rng, dtype=dt)
    return SceneModel(config, renderer, phi_spec, hypernet=hyper, codebook=book)


@contextlib.contextmanager
def frozen(model: SceneModel):
    """Stop gradient accumulation on all model parameters inside the block."""
    params = list(model.parameters().values())
    prev = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, r in zip(params, prev):
            p.requires_grad = r


# -- loss -------------------------------------------------------------------------

@dataclass
class RayBatch:
    instance_ids: list
    origins: np.ndarray   # [B, N, 3]
    directions: np.ndarray
    targets: np.ndarray   # [B, N, 3]


def gather_rays(samples: Sequence[tuple], pixel_sets: Sequence | None = None) -> RayBatch:
    """``samples`` are ``(instance_id, image, camera)``; pixels default to all."""
    ids, origins, dirs, targets = [], [], [], []
    for n, (iid, img, cam) in enumerate(samples):
        pix = None if pixel_sets is None else pixel_sets[n]
        rays = generate_rays(cam, pix)
        ids.append(iid)
        origins.append(rays.origins)
        dirs.append(rays.directions)
        targets.append(np.asarray(img)[rays.pixels[:, 1], rays.pixels[:, 0]])
    if len({len(o) for o in origins}) != 1:
        raise ValueError("every sample in a batch must contribute the same number of rays")
    return RayBatch(ids, np.stack(origins), np.stack(dirs), np.stack(targets))


def slide_origins(batch: RayBatch, rng: np.random.Generator, scale_range: tuple[float, float],
                  radius: float, margin: float) -> RayBatch:
    """Move each ray origin along its ray, keeping the pixel color valid.

    The new origin sits at roughly ``s`` times the old distance from the
    scene center, ``s`` log-uniform in ``scale_range``, but never closer
    than ``margin`` to the bounding sphere of radius ``radius`` (the segment
    in front of it is empty, so the ray sees the same surface).
    """
    o, d = batch.origins, batch.directions
    b = np.sum(o * d, axis=-1)
    c = np.sum(o * o, axis=-1) - radius ** 2
    disc = b * b - c
    # distance to the bounding sphere, or to the closest approach for rays that miss it
    entry = np.where(disc > 0, -b - np.sqrt(np.maximum(disc, 0.0)), -b)
    lo, hi = np.log(scale_range[0]), np.log(scale_range[1])
    s = np.exp(rng.uniform(lo, hi, size=b.shape))
    t = (1.0 - s) * np.linalg.norm(o, axis=-1)
    t = np.minimum(t, np.maximum(entry - margin, 0.0))
    t = np.where(c > 0, t, 0.0)
    return RayBatch(batch.instance_ids, o + t[..., None] * d, d, batch.targets)


def loss_on_rays(model: SceneModel, batch: RayBatch, weights: LossWeights,
                 z: Tensor | None = None) -> tuple[Tensor, dict]:
    """Image L2 (mean over pixels and channels) + depth positivity (mean over
    rays) + latent prior (mean over code entries)."""
    if model.mode == "hyper" and z is None:
        for iid in batch.instance_ids:
            if iid not in model.codebook:
                raise KeyError(f"unknown instance id {iid!r}")
        z = model.codebook.gather(batch.instance_ids)
    scene = model.scene_for(batch.instance_ids, z)
    rgb, res = shade_rays(scene, batch.origins, batch.directions, model.renderer)
    l_img = mean(square(rgb - batch.targets.astype(rgb.dtype)))
    n_rays = res.d_final.size
    l_dep = depth_positivity_loss(res.d_final) * (weights.lambda_dep / n_rays)
    total = l_img + l_dep
    l_lat_val = 0.0
    if z is not None:
        l_lat = mean(square(z)) * weights.latent(z.shape[-1])
        total = total + l_lat
        l_lat_val = float(l_lat.data)
    terms = {"loss_img": float(l_img.data), "loss_depth": float(l_dep.data),
             "loss_latent": l_lat_val, "loss": float(total.data)}
    return total, terms


def joint_loss(samples: Sequence[tuple], model: SceneModel, weights: LossWeights,
               pixel_sets: Sequence | None = None) -> tuple[Tensor, dict]:
    """Objective over a batch of ``(instance_id, image, camera)`` observations."""
    return loss_on_rays(model, gather_rays(samples, pixel_sets), weights)


# -- training -----------------------------------------------------------------------

@dataclass
class TrainConfig:
    steps: int = 1000
    batch_views: int = 4
    rays_per_view: int = 1024
    lr: float = 4e-4
    code_lr: float | None = None
    lambda_dep: float = 1e-3
    lambda_lat: float | None = None
    log_every: int = 50
    ckpt_every: int = 1000
    seed: int = 0
    # "constant", or "cosine" decay from lr to lr_final over `steps`
    lr_schedule: str = "constant"
    lr_final: float = 0.0
    # slide training-ray origins to (lo, hi) times the camera distance (None: off)
    origin_scale: tuple | None = None
    scene_radius: float = 1.0

    def __post_init__(self):
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown learning-rate schedule {self.lr_schedule!r}")
        if self.origin_scale is not None:
            self.origin_scale = tuple(float(v) for v in self.origin_scale)
            if len(self.origin_scale) != 2 or not 0 < self.origin_scale[0] <= self.origin_scale[1]:
                raise ValueError("origin_scale must be (lo, hi) with 0 < lo <= hi")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_dep, self.lambda_lat)

    def lr_at(self, step: int) -> float:
        """Learning rate used for optimizer step number ``step`` (1-based)."""
        if self.lr_schedule == "constant" or self.steps <= 0:
            return self.lr
        frac = min(step, self.steps) / self.steps
        return self.lr_final + 0.5 * (self.lr - self.lr_final) * (1.0 + np.cos(np.pi * frac))

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["origin_scale"] is not None:
            d["origin_scale"] = list(d["origin_scale"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def _view_index(datasets: Sequence[InstanceDataset]) -> list[tuple[int, int]]:
    return [(i, j) for i, ds in enumerate(datasets) for j in range(len(ds))]


@dataclass
class Trainer:
    model: SceneModel
    datasets: Sequence[InstanceDataset]
    config: TrainConfig
    opt: OptimizerState = None
    rng: np.random.Generator = None
    step: int = 0
    history: list = field(default_factory=list)
    run_config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.opt is None:
            self.opt = OptimizerState(lr=self.config.lr)
        if self.rng is None:
            self.rng = np.random.default_rng(self.config.seed)
        if self.config.code_lr is not None:
            for name in self.model.parameters():
                if name.startswith("code."):
                    self.opt.lr_scale[name] = self.config.code_lr / self.config.lr
        self._views = _view_index(self.datasets)
        shapes = {ds.images.shape[1:] for ds in self.datasets}
        if len(shapes) > 1:
            raise ValueError("all instances must share one image resolution")

    def sample_batch(self) -> RayBatch:
        cfg = self.config
        picks = self.rng.integers(len(self._views), size=cfg.batch_views)
        samples, pix = [], []
        for p in picks:
            i, j = self._views[p]
            ds = self.datasets[i]
            samples.append((ds.instance_id, ds.images[j], ds.cameras[j]))
            H, W = ds.images.shape[1:3]
            n = min(cfg.rays_per_view, H * W)
            pix.append(self.rng.choice(H * W, size=n, replace=False))
        batch = gather_rays(samples, pix)
        if cfg.origin_scale is not None:
            batch = slide_origins(batch, self.rng, cfg.origin_scale, cfg.scene_radius,
                                  2 * self.model.config.d0)
        return batch

    def train_step(self) -> dict:
        params = self.model.parameters()
        zero_grad(params.values())
        batch = self.sample_batch()
        loss, terms = loss_on_rays(self.model, batch, self.config.weights)
        backward(loss)
        self.opt.lr = self.config.lr_at(self.step + 1)
        optimizer_step(self.opt, params)
        self.step += 1
        terms["step"] = self.step
        terms["psnr"] = float(-10 * np.log10(max(terms["loss_img"], 1e-10)))
        return terms

    def run(self, steps: int, out_dir: Path | None = None,
            callback: Callable[[dict], None] | None = None) -> list:
        """Train ``steps`` more steps; returns the checkpoint trail."""
        trail = []
        metrics = None
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            path = out_dir / "metrics.csv"
            fresh = not path.exists()
            metrics = open(path, "a", newline="")
            writer = csv.writer(metrics)
            if fresh:
                writer.writerow(METRICS_HEADER)
        try:
            if self.step == 0 or not steps:
                trail.append(self._save(out_dir))
            for _ in range(steps):
                try:
                    terms = self.train_step()
                except NonFiniteError:
                    log.error("numerical abort at step %d; dumping last checkpoint", self.step + 1)
                    self._save(out_dir, name="abort.ckpt")
                    raise
                self.history.append(terms)
                if metrics is not None and (self.step % self.config.log_every == 0):
                    writer.writerow([terms["step"], repr(terms["loss_img"]), repr(terms["loss_depth"]),
                                     repr(terms["loss_latent"]), repr(terms["psnr"])])
                    metrics.flush()
                if self.step % self.config.log_every == 0:
                    log.info("step %d loss %.5f psnr %.2f", self.step, terms["loss"], terms["psnr"])
                if callback is not None:
                    callback(terms)
                if self.step % self.config.ckpt_every == 0:
                    trail.append(self._save(out_dir))
            if steps and self.step % self.config.ckpt_every != 0:
                trail.append(self._save(out_dir))
        finally:
            if metrics is not None:
                metrics.close()
        return trail

    def _save(self, out_dir: Path | None, name: str | None = None):
        ckpt = self.checkpoint()
        if out_dir is None:
            return ckpt
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = save_checkpoint(out_dir / (name or f"step_{self.step:07d}.ckpt"), ckpt)
        save_checkpoint(out_dir / "latest.ckpt", ckpt)
        return path

    def checkpoint(self) -> Checkpoint:
        ckpt = model_checkpoint(self.model)
        for name, m in self.opt.m.items():
            ckpt.arrays[f"opt.m.{name}"] = m.copy()
            ckpt.arrays[f"opt.v.{name}"] = self.opt.v[name].copy()
        ckpt.meta["optimizer"] = {"lr": self.opt.lr, "beta1": self.opt.beta1, "beta2": self.opt.beta2,
                                  "eps": self.opt.eps, "step": self.opt.step,
                                  "lr_scale": dict(sorted(self.opt.lr_scale.items()))}
        ckpt.meta["train"] = self.config.to_dict()
        ckpt.meta["step"] = self.step
        ckpt.meta["rng"] = _jsonable_rng_state(self.rng)
        ckpt.meta["run_config"] = self.run_config
        return ckpt

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, datasets: Sequence[InstanceDataset],
                        config: TrainConfig | None = None) -> "Trainer":
        model = model_from_checkpoint(ckpt)
        o = ckpt.meta.get("optimizer", {})
        opt = OptimizerState(lr=o.get("lr", 4e-4), beta1=o.get("beta1", 0.9), beta2=o.get("beta2", 0.999),
                             eps=o.get("eps", 1e-8), step=o.get("step", 0),
                             lr_scale=dict(o.get("lr_scale", {})))
        for key, arr in ckpt.arrays.items():
            if key.startswith("opt.m."):
                opt.m[key[6:]] = arr.copy()
            elif key.startswith("opt.v."):
                opt.v[key[6:]] = arr.copy()
        rng = np.random.default_rng()
        if "rng" in ckpt.meta:
            rng.bit_generator.state = ckpt.meta["rng"]
        cfg = config or TrainConfig.from_dict(ckpt.meta.get("train", {}))
        return cls(model, datasets, cfg, opt, rng, ckpt.meta.get("step", 0),
                   run_config=ckpt.meta.get("run_config", {}))


def fit(datasets: Sequence[InstanceDataset], model: SceneModel, config: TrainConfig,
        out_dir=None, callback=None) -> list:
    """Train from scratch; returns checkpoints (paths if ``out_dir`` is set)."""
    return Trainer(model, datasets, config).run(config.steps, out_dir, callback)


def _jsonable_rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


# -- model (de)serialization -------------------------------------------------------------

def model_checkpoint(model: SceneModel) -> Checkpoint:
    arrays = {name: t.data.copy() for name, t in model.parameters(include_codes=False).items()}
    meta = {"model": model.config.to_dict(), "mode": model.mode}
    if model.codebook is not None:
        meta["instances"] = [str(i) for i in model.codebook.ids()]
        meta["frozen_codes"] = sorted(str(i) for i, c in model.codebook.codes.items() if c.frozen)
        for iid, code in model.codebook.codes.items():
            arrays[f"code.{iid}"] = code.z.data.copy()
    return Checkpoint(arrays, meta)


def model_from_checkpoint(ckpt: Checkpoint) -> SceneModel:
    config = ModelConfig.from_dict(ckpt.meta["model"])
    ids = ckpt.meta.get("instances")
    model = init_model(config, ids, ckpt.meta.get("mode", "auto"))
    for name, t in model.parameters(include_codes=False).items():
        t.data = ckpt.arrays[name].copy()
    if model.codebook is not None:
        frozen_ids = set(ckpt.meta.get("frozen_codes", []))
        for iid in ids:
            code = model.codebook[iid]
            code.z.data = ckpt.arrays[f"code.{iid}"].copy()
            if iid in frozen_ids:
                code.frozen = True
                code.z.requires_grad = False
    return model


def load_model(path) -> SceneModel:
    return model_from_checkpoint(load_checkpoint(path))


# -- inference / evaluation -------------------------------------------------------------

def few_shot_infer(observations: Sequence[tuple], model: SceneModel, weights: LossWeights | None = None,
                   steps: int = 1000, lr: float = 3e-3, rays_per_view: int | None = None,
                   seed: int = 0) -> LatentCode:
    """Fit a latent code to ``observations`` = [(image, camera), ...] with
    every model parameter frozen. Starts at z = 0 (the prior mode)."""
    if not observations:
        raise ValueError("few-shot inference needs at least one observation")
    if model.mode != "hyper":
        raise ValueError("few-shot inference needs a hypernetwork model")
    weights = weights or LossWeights()
    rng = np.random.default_rng(seed)
    k = model.config.latent_dim
    z = Tensor(np.zeros((1, k), dtype=model.config.dtype), requires_grad=True, name="z")
    opt = OptimizerState(lr=lr)
    samples = [("new", img, cam) for img, cam in observations]
    with frozen(model):
        full = gather_rays(samples) if rays_per_view is None else None
        for _ in range(steps):
            if full is None:
                pix = [rng.choice(cam.width * cam.height, size=min(rays_per_view, cam.width * cam.height),
                                  replace=False) for _, cam in observations]
                batch = gather_rays(samples, pix)
            else:
                batch = full
            zb = _repeat_rows(z, len(samples))
            loss, _ = loss_on_rays(model, batch, weights, zb)
            z.grad = None
            backward(loss)
            optimizer_step(opt, {"z": z})
    return LatentCode(Tensor(z.data[0].copy()), "inferred")


def _repeat_rows(z: Tensor, n: int) -> Tensor:
    return z if n == 1 else concat([z] * n, axis=0)


def render_view(model: SceneModel, cam: CameraModel, instance_id=None, z=None,
                keep_trace: bool = False) -> RenderOutput:
    with no_grad():
        scene = model.instance_scene(instance_id, z)
    return render(scene, cam, model.renderer, keep_trace=keep_trace)


def evaluate(model: SceneModel, datasets: Sequence[InstanceDataset],
             codes: dict | None = None) -> list[dict]:
    """PSNR/SSIM of clamped renders against every view of every dataset."""
    rows = []
    for ds in datasets:
        z = None if codes is None else codes.get(ds.instance_id)
        iid = ds.instance_id if (z is None and model.mode == "hyper") else None
        for j, cam in enumerate(ds.cameras):
            out = render_view(model, cam, iid, z)
            pred = out.rgb_clamped()
            rows.append({"instance": ds.instance_id, "view": j,
                         "psnr": psnr(pred, ds.images[j]), "ssim": ssim(pred, ds.images[j])})
    return rows
