"""Per-pixel color generator, full-image rendering and normals from depth."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraModel, camera_directions, generate_rays
from .numerics import LstmParams, MlpSpec, Tensor, mlp_forward, mlp_init, no_grad
from .raymarcher import DEPTH_SENTINEL, MarchConfig, MarchResult, march_rays
from .scene import SceneFunction, phi_eval

SENTINEL_NORMAL = np.array([0.0, 0.0, -1.0])


def generator_spec(feature_dim: int = 32, hidden: tuple[int, ...] = (64, 64, 64),
                   layer_norm: bool = False) -> MlpSpec:
    return MlpSpec(feature_dim, tuple(hidden), 3, "relu", layer_norm)


def pixel_generator(v, params: Tensor, spec: MlpSpec) -> Tensor:
    """Map feature vectors ``[..., n]`` to unclamped RGB ``[..., 3]``, row by row.

    Equal feature vectors give bitwise-equal colors wherever they sit in the batch.
    """
    return mlp_forward(params, spec, v, rowwise=True)


@dataclass
class Renderer:
    """The shared rendering parameters: step LSTM, color generator, march settings."""

    lstm: LstmParams
    generator: Tensor
    generator_spec: MlpSpec
    march: MarchConfig = MarchConfig()

    def tensors(self) -> dict[str, Tensor]:
        out = {f"lstm.{k}": v for k, v in self.lstm.tensors().items()}
        out["generator"] = self.generator
        return out


def init_generator(spec: MlpSpec, rng: np.random.Generator, dtype=np.float32,
                   background: float | None = None) -> Tensor:
    flat = mlp_init(spec, rng, np.float64)
    if background is not None:
        flat[spec.slices()[-1][1]] = background
    return Tensor(flat.astype(dtype), requires_grad=True, name="generator")


@dataclass
class RenderOutput:
    rgb: np.ndarray                     # H x W x 3, unclamped generator output
    depth: np.ndarray                   # H x W camera-space z
    trace: np.ndarray | None = None     # (max_iter + 1) x H x W

    def rgb_clamped(self) -> np.ndarray:
        return np.clip(self.rgb, 0.0, 1.0)


def shade_rays(scene: SceneFunction, origins: np.ndarray, directions: np.ndarray,
               renderer: Renderer, step_oracle=None) -> tuple[Tensor, MarchResult]:
    """Differentiable march -> features at the intersection -> color."""
    res = march_rays(scene, origins, directions, renderer.march, renderer.lstm, step_oracle)
    v = phi_eval(scene, res.points)
    rgb = pixel_generator(v, renderer.generator, renderer.generator_spec)
    return rgb, res


def render(scene: SceneFunction, cam: CameraModel, renderer: Renderer, chunk: int = 8192,
           keep_trace: bool = False, step_oracle=None) -> RenderOutput:
    """Render a full image (no gradient), marching ``chunk`` rays at a time."""
    if scene.batched:
        raise ValueError("render() takes a single (unbatched) scene function")
    rays = generate_rays(cam)
    n = len(rays)
    rgb = np.empty((n, 3))
    dist = np.empty((n, renderer.march.max_iter + 1))
    with no_grad():
        for s in range(0, n, chunk):
            sl = slice(s, min(n, s + chunk))
            col, res = shade_rays(scene, rays.origins[sl], rays.directions[sl], renderer, step_oracle)
            rgb[sl] = col.data
            dist[sl] = res.trace.data
    zfac = (rays.directions @ cam.R.T)[:, 2]
    H, W = cam.height, cam.width
    depth = (dist[:, -1] * zfac).reshape(H, W)
    trace = None
    if keep_trace:
        trace = (dist * zfac[:, None]).T.reshape(-1, H, W)
    return RenderOutput(rgb.reshape(H, W, 3), depth, trace)


def depth_to_points(depth: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Unproject an H x W camera-space z map to camera-frame points."""
    H, W = depth.shape
    vv, uu = np.mgrid[0:H, 0:W]
    rays = camera_directions(cam, uu + 0.5, vv + 0.5)
    return rays / rays[..., 2:3] * depth[..., None]


def _tangent(P: np.ndarray, valid: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    """Central differences along ``axis``, one-sided where a neighbor is missing."""
    fwd = np.zeros_like(P)
    bwd = np.zeros_like(P)
    fok = np.zeros(valid.shape, dtype=bool)
    bok = np.zeros(valid.shape, dtype=bool)
    hi = [slice(None)] * 2
    lo = [slice(None)] * 2
    hi[axis] = slice(1, None)
    lo[axis] = slice(None, -1)
    hi, lo = tuple(hi), tuple(lo)
    diff = P[hi] - P[lo]
    pair = valid[hi] & valid[lo]
    fwd[lo] = diff
    fok[lo] = pair
    bwd[hi] = diff
    bok[hi] = pair
    both = fok & bok
    t = np.where(both[..., None], 0.5 * (fwd + bwd), np.where(fok[..., None], fwd, bwd))
    return t, fok | bok


def normals_from_depth(depth: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Camera-frame unit normals (facing the camera) from a z-depth map.

    Pixels with non-positive depth, or without usable neighbors, get
    ``SENTINEL_NORMAL``.
    """
    depth = np.asarray(depth, dtype=np.float64)
    valid = np.isfinite(depth) & (depth > 0)
    P = depth_to_points(np.where(valid, depth, 1.0), cam)
    tu, oku = _tangent(P, valid, axis=1)
    tv, okv = _tangent(P, valid, axis=0)
    n = np.cross(tu, tv)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    scale = np.linalg.norm(tu, axis=-1, keepdims=True) * np.linalg.norm(tv, axis=-1, keepdims=True)
    ok = valid & oku & okv & (norm[..., 0] > 1e-12 * np.maximum(scale[..., 0], 1e-300))
    n = n / np.where(norm > 0, norm, 1.0)
    flip = np.sum(n * P, axis=-1) > 0
    n[flip] *= -1.0
    n[~ok] = SENTINEL_NORMAL
    return n


def normals_to_image(normals: np.ndarray) -> np.ndarray:
    """Map unit normals to [0, 1] colors for display."""
    return np.clip(0.5 * (normals + 1.0), 0.0, 1.0)


__all__ = ["DEPTH_SENTINEL", "RenderOutput", "Renderer", "SENTINEL_NORMAL", "depth_to_points",
           "generator_spec", "init_generator", "normals_from_depth", "normals_to_image",
           "pixel_generator", "render", "shade_rays"]
