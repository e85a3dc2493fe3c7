"""Learned ray marching: an LSTM reads the scene features at the current
point on each ray and predicts how far to step next."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .camera import CameraModel, generate_rays
from .numerics import (LstmParams, NonFiniteError, Tensor, lstm_cell, minimum, square, stack,
                       tsum)
from .scene import SceneFunction, phi_eval

DEPTH_SENTINEL = -1.0


@dataclass(frozen=True)
class MarchConfig:
    d0: float = 0.05
    max_iter: int = 10

    def __post_init__(self):
        if not self.d0 > 0:
            raise ValueError("initial distance d0 must be positive")
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class MarchResult:
    points: Tensor            # [..., 3] world points at the final distance
    trace: Tensor             # [..., max_iter + 1] distances d_0 .. d_final
    d_final: Tensor           # [...]
    state: tuple[Tensor, Tensor] | None
    directions: np.ndarray    # [..., 3] unit world directions
    origins: np.ndarray       # [..., 3]
    pixels: np.ndarray | None = None

    @property
    def max_iter(self) -> int:
        return self.trace.shape[-1] - 1


def _point(d: Tensor, dirs: np.ndarray, origins: np.ndarray) -> Tensor:
    return d.reshape(*d.shape, 1) * dirs + origins


def march_rays(scene: SceneFunction, origins: np.ndarray, directions: np.ndarray,
               cfg: MarchConfig, lstm: LstmParams | None,
               step_oracle: Callable[[np.ndarray], np.ndarray] | None = None) -> MarchResult:
    """March every ray for exactly ``cfg.max_iter`` steps.

    ``origins``/``directions`` are ``[N, 3]`` for an unbatched scene or
    ``[B, N, 3]`` when ``scene.phi`` is a batch. With ``step_oracle`` the
    LSTM is bypassed and the step is ``step_oracle(x)`` evaluated on the
    current world points (classic sphere tracing when it returns an SDF).
    """
    dtype = scene.phi.dtype
    directions = np.asarray(directions, dtype=dtype)
    origins = np.asarray(origins, dtype=dtype)
    shape = directions.shape[:-1]
    n_rays = int(np.prod(shape))
    d = Tensor(np.full(shape, cfg.d0, dtype=dtype))
    trace = [d]
    h = c = None
    if step_oracle is None:
        if lstm is None:
            raise ValueError("march needs LSTM parameters or a step oracle")
        H = lstm.w_h.shape[0]
        h = Tensor(np.zeros((n_rays, H), dtype=dtype))
        c = Tensor(np.zeros((n_rays, H), dtype=dtype))
    for i in range(cfg.max_iter):
        try:
            x = _point(d, directions, origins)
            if step_oracle is not None:
                delta = Tensor(np.asarray(step_oracle(x.data), dtype=dtype).reshape(shape))
                if not np.isfinite(delta.data).all():
                    raise NonFiniteError("step_oracle")
            else:
                v = phi_eval(scene, x)
                out, h, c = lstm_cell(v.reshape(n_rays, v.shape[-1]), h, c, lstm)
                delta = out.reshape(shape)
            d = d + delta
        except NonFiniteError as exc:
            raise NonFiniteError(f"{exc.op} (march iteration {i})", exc.where) from exc
        trace.append(d)
    points = _point(d, directions, origins)
    return MarchResult(points, stack(trace, axis=-1), d, None if h is None else (h, c),
                       directions, origins)


def march(scene: SceneFunction, cam: CameraModel, pixels=None, cfg: MarchConfig = MarchConfig(),
          lstm: LstmParams | None = None,
          step_oracle: Callable[[np.ndarray], np.ndarray] | None = None) -> MarchResult:
    """Ray-march the selected pixels (default: all) of one camera."""
    rays = generate_rays(cam, pixels)
    res = march_rays(scene, rays.origins, rays.directions, cfg, lstm, step_oracle)
    res.pixels = rays.pixels
    return res


def depth_map(result: MarchResult, cam: CameraModel, step: int | None = None) -> np.ndarray:
    """Camera-space z of the step-``step`` estimate (default: final) as an H x W image.

    Pixels the march did not cover hold ``DEPTH_SENTINEL``.
    """
    if step is None:
        step = result.max_iter
    if not 0 <= step <= result.max_iter:
        raise IndexError(f"step must be in [0, {result.max_iter}]")
    if result.pixels is None:
        raise ValueError("march result carries no pixel indices")
    d = result.trace.data[..., step].astype(np.float64).reshape(-1)
    dirs = result.directions.astype(np.float64).reshape(-1, 3)
    z = d * (dirs @ cam.R.T)[:, 2]
    img = np.full((cam.height, cam.width), DEPTH_SENTINEL)
    img[result.pixels[:, 1], result.pixels[:, 0]] = z
    return img


def depth_trace_maps(result: MarchResult, cam: CameraModel) -> np.ndarray:
    """All per-step depth maps, ``[max_iter + 1, H, W]``."""
    return np.stack([depth_map(result, cam, i) for i in range(result.max_iter + 1)])


def depth_positivity_loss(d_final: Tensor) -> Tensor:
    """Sum of squared negative parts, ``||min(d, 0)||^2``."""
    return tsum(square(minimum(d_final, 0.0)))
