"""Analytic SDF scenes, a sphere-tracing ground-truth renderer and on-disk
posed-image datasets built from them."""
from __future__ import annotations

import colorsys
import json
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import CameraModel, archimedean_spiral_poses, intrinsics_from_fov, sample_sphere_poses
from .images import read_pfm, read_png, write_pfm, write_png

MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "neuralscene-dataset"
MANIFEST_VERSION = 1

BACKGROUND = np.array([1.0, 1.0, 1.0])
LIGHT_DIR = np.array([0.35, 0.8, 0.48]) / np.linalg.norm([0.35, 0.8, 0.48])
AMBIENT = 0.35
HIT_TOL = 1e-5
MAX_TRACE_STEPS = 200


class DataIntegrityError(RuntimeError):
    """A dataset manifest or file on disk does not match its declaration."""


@dataclass
class Sphere:
    center: np.ndarray
    radius: float
    albedo: np.ndarray

    def sdf(self, x: np.ndarray) -> np.ndarray:
        return np.linalg.norm(x - self.center, axis=-1) - self.radius

    def to_dict(self) -> dict:
        return {"type": "sphere", "center": list(map(float, self.center)),
                "radius": float(self.radius), "albedo": list(map(float, self.albedo))}


@dataclass
class Box:
    center: np.ndarray
    half_extents: np.ndarray
    albedo: np.ndarray

    def sdf(self, x: np.ndarray) -> np.ndarray:
        q = np.abs(x - self.center) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    def to_dict(self) -> dict:
        return {"type": "box", "center": list(map(float, self.center)),
                "half_extents": list(map(float, self.half_extents)),
                "albedo": list(map(float, self.albedo))}


def _primitive_from_dict(d: dict):
    albedo = np.asarray(d["albedo"], dtype=np.float64)
    if d["type"] == "sphere":
        return Sphere(np.asarray(d["center"], dtype=np.float64), float(d["radius"]), albedo)
    if d["type"] == "box":
        return Box(np.asarray(d["center"], dtype=np.float64),
                   np.asarray(d["half_extents"], dtype=np.float64), albedo)
    raise ValueError(f"unknown primitive type {d['type']!r}")


@dataclass
class AnalyticScene:
    """Union of primitives; the SDF is the minimum over primitive SDFs."""

    primitives: list = field(default_factory=list)

    @property
    def bounding_radius(self) -> float:
        r = 0.0
        for p in self.primitives:
            if isinstance(p, Sphere):
                r = max(r, np.linalg.norm(p.center) + p.radius)
            else:
                r = max(r, np.linalg.norm(_box_vertices(p), axis=1).max())
        return float(r)

    def to_dict(self) -> dict:
        return {"primitives": [p.to_dict() for p in self.primitives]}

    @classmethod
    def from_dict(cls, d: dict) -> "AnalyticScene":
        return cls([_primitive_from_dict(p) for p in d["primitives"]])


def _box_vertices(b: Box) -> np.ndarray:
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64)
    return b.center + signs * b.half_extents


def sdf_eval(scene: AnalyticScene, x) -> tuple[np.ndarray, np.ndarray]:
    """Signed distance at ``x [..., 3]`` and the albedo of the nearest primitive.

    An empty scene has distance +inf everywhere and background albedo.
    """
    x = np.asarray(x, dtype=np.float64)
    shape = x.shape[:-1]
    if not scene.primitives:
        return np.full(shape, np.inf), np.broadcast_to(BACKGROUND, (*shape, 3)).copy()
    dists = np.stack([p.sdf(x) for p in scene.primitives], axis=0)
    nearest = dists.argmin(axis=0)
    albedos = np.stack([p.albedo for p in scene.primitives])
    return dists.min(axis=0), albedos[nearest]


def sdf_distance(scene: AnalyticScene, x) -> np.ndarray:
    return sdf_eval(scene, x)[0]


def sdf_normal(scene: AnalyticScene, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Unit SDF gradient by central differences."""
    x = np.asarray(x, dtype=np.float64)
    g = np.empty(x.shape)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        g[..., k] = sdf_distance(scene, x + e) - sdf_distance(scene, x - e)
    n = np.linalg.norm(g, axis=-1, keepdims=True)
    return g / np.where(n > 0, n, 1.0)


def _random_color(rng: np.random.Generator) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(rng.uniform(), rng.uniform(0.55, 0.95), rng.uniform(0.7, 1.0)))


_AXES = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]])


def shepard_metzler(count: int = 7, seed: int | np.random.Generator = 0,
                    max_bends: int = 2) -> AnalyticScene:
    """A chain of ``count`` face-adjacent unit cubes with at most ``max_bends``
    bends, random per-cube colors, centered and scaled to unit bounding radius."""
    if count < 2:
        raise ValueError("a Shepard-Metzler chain needs at least 2 elements")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    while True:
        # bends happen after a random subset of the interior cubes
        n_bends = min(max_bends, count - 2)
        bend_at = set(rng.choice(np.arange(1, count - 1), size=n_bends, replace=False).tolist()) if n_bends else set()
        direction = _AXES[rng.integers(6)]
        cells = [np.zeros(3, dtype=int)]
        ok = True
        for i in range(1, count):
            if i in bend_at:
                perp = [a for a in _AXES if np.dot(a, direction) == 0]
                direction = perp[rng.integers(len(perp))]
            nxt = cells[-1] + direction
            if any((nxt == c).all() for c in cells):
                ok = False
                break
            cells.append(nxt)
        if ok:
            break
    cells = np.asarray(cells, dtype=np.float64)
    verts = (cells[:, None, :] + 0.5 * np.array(
        [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])).reshape(-1, 3)
    center = 0.5 * (verts.min(axis=0) + verts.max(axis=0))
    scale = 1.0 / np.linalg.norm(verts - center, axis=1).max()
    prims = [Box((c - center) * scale, np.full(3, 0.5 * scale), _random_color(rng)) for c in cells]
    return AnalyticScene(prims)


# -- ground-truth renderer ------------------------------------------------------------

@dataclass
class OracleRender:
    rgb: np.ndarray        # H x W x 3
    distance: np.ndarray   # H x W Euclidean hit distance, -1 on misses
    depth: np.ndarray      # H x W camera-space z, -1 on misses
    hit: np.ndarray        # H x W bool
    normals: np.ndarray    # H x W x 3 world-frame unit normals (zero on misses)


def shade(albedo: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """Lambertian response to a fixed world-space directional light plus ambient."""
    lam = np.clip(normals @ LIGHT_DIR, 0.0, None)[..., None]
    return albedo * (AMBIENT + (1.0 - AMBIENT) * lam)


def sphere_trace(scene: AnalyticScene, origins: np.ndarray, dirs: np.ndarray,
                 max_steps: int = MAX_TRACE_STEPS, tol: float = HIT_TOL,
                 far: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Classic sphere tracing; returns (distance, hit mask)."""
    n = len(origins)
    if far is None:
        far = float(np.linalg.norm(origins, axis=1).max() + scene.bounding_radius + 1.0)
    t = np.zeros(n)
    active = np.ones(n, dtype=bool)
    hit = np.zeros(n, dtype=bool)
    dist = np.full(n, np.inf)
    if not scene.primitives:
        return np.full(n, -1.0), hit
    for _ in range(max_steps):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        s = sdf_distance(scene, origins[idx] + t[idx, None] * dirs[idx])
        dist[idx] = s
        done = np.abs(s) < tol
        hit[idx[done]] = True
        t[idx[~done]] += s[~done]
        escaped = t[idx] > far
        active[idx[done | escaped]] = False
    # unconverged rays within 1e-4 still count (grazing edges)
    near = active & (np.abs(dist) < 1e-4)
    hit |= near
    return np.where(hit, t, -1.0), hit


def oracle_render(scene: AnalyticScene, cam: CameraModel) -> OracleRender:
    from .camera import generate_rays

    rays = generate_rays(cam)
    t, hit = sphere_trace(scene, rays.origins, rays.directions)
    H, W = cam.height, cam.width
    rgb = np.broadcast_to(BACKGROUND, (len(t), 3)).copy()
    normals = np.zeros((len(t), 3))
    if hit.any():
        pts = rays.origins[hit] + t[hit, None] * rays.directions[hit]
        _, albedo = sdf_eval(scene, pts)
        nrm = sdf_normal(scene, pts)
        normals[hit] = nrm
        rgb[hit] = shade(albedo, nrm)
    zfac = (rays.directions @ cam.R.T)[:, 2]
    depth = np.where(hit, t * zfac, -1.0)
    return OracleRender(rgb.reshape(H, W, 3), t.reshape(H, W), depth.reshape(H, W),
                        hit.reshape(H, W), normals.reshape(H, W, 3))


# -- datasets -----------------------------------------------------------------------

@dataclass
class DatasetConfig:
    kind: str = "shepard"
    elements: int = 7
    instances: int = 1
    views: int = 15
    test_views: int = 0
    resolution: int = 64
    camera_radius: float = 2.5
    fov_deg: float = 50.0
    seed: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def make_scene(kind: str, rng: np.random.Generator, elements: int = 7) -> AnalyticScene:
    if kind == "shepard":
        return shepard_metzler(elements, rng)
    if kind == "sphere":
        return AnalyticScene([Sphere(np.zeros(3), 1.0, _random_color(rng))])
    raise ValueError(f"unknown scene class {kind!r}")


def _view_record(root: Path, inst_dir: str, split: str, j: int, cam: CameraModel,
                 scene: AnalyticScene) -> dict:
    out = oracle_render(scene, cam)
    img_rel = f"{inst_dir}/{split}/rgb_{j:04d}.png"
    dep_rel = f"{inst_dir}/{split}/depth_{j:04d}.pfm"
    (root / inst_dir / split).mkdir(parents=True, exist_ok=True)
    write_png(root / img_rel, out.rgb)
    write_pfm(root / dep_rel, out.distance)
    return {"image": img_rel, "depth": dep_rel, "K": cam.K.tolist(), "E": cam.E.tolist()}


def build_dataset(cfg: DatasetConfig, out_dir) -> dict:
    """Render ``cfg.instances`` scenes into ``out_dir`` and write the manifest.

    Training views are uniform on a sphere of radius ``cfg.camera_radius``;
    optional test views follow an Archimedean spiral. Everything is
    deterministic in ``cfg.seed``. On failure the partial output is removed.
    """
    out_dir = Path(out_dir)
    if not out_dir.parent.exists():
        raise FileNotFoundError(f"parent directory does not exist: {out_dir.parent}")
    if out_dir.exists() and any(out_dir.iterdir()):
        raise FileExistsError(f"output directory is not empty: {out_dir}")
    tmp = out_dir.with_name(out_dir.name + ".partial")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir()
    try:
        manifest = _build_into(cfg, tmp)
        if out_dir.exists():
            out_dir.rmdir()
        os.replace(tmp, out_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return manifest


def _build_into(cfg: DatasetConfig, root: Path) -> dict:
    res = cfg.resolution
    K = intrinsics_from_fov(res, res, cfg.fov_deg)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.instances)
    instances = []
    spiral = (archimedean_spiral_poses(cfg.test_views, cfg.camera_radius)
              if cfg.test_views >= 2 else [])
    for i, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        scene = make_scene(cfg.kind, rng, cfg.elements)
        iid = f"{i:04d}"
        poses = sample_sphere_poses(cfg.views, cfg.camera_radius, seed=rng)
        views = [_view_record(root, iid, "train", j, CameraModel.from_extrinsics(E, K, res, res), scene)
                 for j, E in enumerate(poses)]
        tests = [_view_record(root, iid, "test", j, CameraModel.from_extrinsics(E, K, res, res), scene)
                 for j, E in enumerate(spiral)]
        instances.append({"id": iid, "scene": scene.to_dict(), "views": views, "test_views": tests})
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "image_size": [res, res],
        "camera_radius": cfg.camera_radius,
        "scene_radius": 1.0,
        "depth_kind": "euclidean_distance",
        "shading": {"model": "lambertian_directional", "light_dir": LIGHT_DIR.tolist(),
                    "ambient": AMBIENT, "background": BACKGROUND.tolist()},
        "generator": cfg.to_dict(),
        "instances": instances,
    }
    write_manifest(root / MANIFEST_NAME, manifest)
    return manifest


def write_manifest(path, manifest: dict) -> None:
    with open(path, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")


def read_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        with open(path) as f:
            m = json.load(f)
    except json.JSONDecodeError as exc:
        raise DataIntegrityError(f"{path}: malformed manifest ({exc})") from exc
    if m.get("format") != MANIFEST_FORMAT or m.get("version") != MANIFEST_VERSION:
        raise DataIntegrityError(f"{path}: unsupported manifest format/version")
    return m


def validate_manifest(root, manifest: dict | None = None, tol: float = 1e-5) -> None:
    """Check that every file exists with the declared size and every pose is sane."""
    root = Path(root)
    manifest = manifest or read_manifest(root)
    W, H = manifest["image_size"]
    radius = manifest["camera_radius"]
    for inst in manifest["instances"]:
        for rec in inst["views"] + inst.get("test_views", []):
            img = root / rec["image"]
            if not img.exists():
                raise DataIntegrityError(f"missing image {img}")
            arr = read_png(img)
            if arr.shape[:2] != (H, W):
                raise DataIntegrityError(f"{img}: size {arr.shape[1]}x{arr.shape[0]}, expected {W}x{H}")
            if rec.get("depth") and not (root / rec["depth"]).exists():
                raise DataIntegrityError(f"missing depth {root / rec['depth']}")
            cam = CameraModel.from_extrinsics(rec["E"], rec["K"], W, H)
            try:
                cam.validate(tol)
            except ValueError as exc:
                raise DataIntegrityError(f"{img}: {exc}") from exc
            if abs(np.linalg.norm(cam.center) - radius) > 1e-4 * max(1.0, radius):
                raise DataIntegrityError(f"{img}: camera not at declared radius {radius}")


@dataclass
class InstanceDataset:
    """Posed images of one scene instance."""

    instance_id: str
    images: np.ndarray                 # N x H x W x 3 float32 in [0, 1]
    cameras: list
    depths: np.ndarray | None = None   # N x H x W Euclidean distances (-1 miss)
    scene: AnalyticScene | None = None

    def __len__(self) -> int:
        return len(self.cameras)


def load_dataset(root, split: str = "train", validate: bool = True) -> list[InstanceDataset]:
    root = Path(root)
    manifest = read_manifest(root)
    if validate:
        validate_manifest(root, manifest)
    W, H = manifest["image_size"]
    key = {"train": "views", "test": "test_views"}[split]
    out = []
    for inst in manifest["instances"]:
        recs = inst[key]
        if not recs:
            continue
        imgs = np.stack([read_png(root / r["image"]) for r in recs])
        cams = [CameraModel.from_extrinsics(r["E"], r["K"], W, H) for r in recs]
        depths = None
        if all(r.get("depth") for r in recs):
            depths = np.stack([read_pfm(root / r["depth"]) for r in recs])
        out.append(InstanceDataset(inst["id"], imgs, cams, depths, AnalyticScene.from_dict(inst["scene"])))
    return out
