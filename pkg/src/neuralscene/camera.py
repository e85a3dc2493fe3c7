"""Pinhole cameras, ray generation and camera-pose trajectories.

Conventions: extrinsics map world to camera (``x_cam = R x_world + t``),
the camera looks down +z with +y pointing down the image, pixel centers
sit at ``(u + 0.5, v + 0.5)``. Distances along a ray are Euclidean.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UP = np.array([0.0, 1.0, 0.0])
POLE_FALLBACK_UP = np.array([1.0, 0.0, 0.0])


def intrinsics(fx: float, fy: float, cx: float, cy: float) -> np.ndarray:
    return np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])


def intrinsics_from_fov(width: int, height: int, fov_deg: float) -> np.ndarray:
    """Square pixels, principal point at the image center, horizontal FOV."""
    f = 0.5 * width / np.tan(np.deg2rad(fov_deg) / 2.0)
    return intrinsics(f, f, width / 2.0, height / 2.0)


@dataclass
class CameraModel:
    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=np.float64).reshape(3, 3)
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        self.width, self.height = int(self.width), int(self.height)

    @classmethod
    def from_extrinsics(cls, E, K, width: int, height: int) -> "CameraModel":
        E = np.asarray(E, dtype=np.float64).reshape(3, 4)
        return cls(K, E[:, :3], E[:, 3], width, height)

    @property
    def E(self) -> np.ndarray:
        return np.concatenate([self.R, self.t[:, None]], axis=1)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates, ``-R^T t``."""
        return -self.R.T @ self.t

    def validate(self, tol: float = 1e-5) -> None:
        err = np.linalg.norm(self.R @ self.R.T - np.eye(3))
        if err > tol or abs(np.linalg.det(self.R) - 1.0) > tol:
            raise ValueError(f"rotation is not proper orthonormal (|RR^T - I| = {err:.2e})")
        fx, fy, cx, cy = self.K[0, 0], self.K[1, 1], self.K[0, 2], self.K[1, 2]
        if fx <= 0 or fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= cx < self.width and 0 <= cy < self.height):
            raise ValueError("principal point outside the image")

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return points @ self.R.T + self.t

    def project(self, points: np.ndarray) -> np.ndarray:
        """World points ``[..., 3]`` -> ``[..., 3]`` of (u, v, z_cam)."""
        pc = self.world_to_camera(np.asarray(points, dtype=np.float64))
        z = pc[..., 2]
        u = self.K[0, 0] * pc[..., 0] / z + self.K[0, 2]
        v = self.K[1, 1] * pc[..., 1] / z + self.K[1, 2]
        return np.stack([u, v, z], axis=-1)

    def with_size(self, width: int, height: int) -> "CameraModel":
        """Same pose and field of view at another resolution."""
        sx, sy = width / self.width, height / self.height
        K = self.K.copy()
        K[0] *= sx
        K[1] *= sy
        return CameraModel(K, self.R, self.t, width, height)


def camera_directions(cam: CameraModel, u, v) -> np.ndarray:
    """Unit ray directions in the camera frame for (sub)pixel coordinates."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    Kinv = np.linalg.inv(cam.K)
    pix = np.stack([u, v, np.ones_like(u)], axis=-1)
    d = pix @ Kinv.T
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def ray_directions(cam: CameraModel, u, v) -> np.ndarray:
    """Unit world-frame directions ``R^T normalize(K^-1 (u, v, 1))``."""
    return camera_directions(cam, u, v) @ cam.R


def point_along_ray(cam: CameraModel, u, v, d):
    """World point at Euclidean distance ``d`` from the camera along pixel (u, v).

    ``d`` may be a float, an array, or a :class:`~neuralscene.numerics.Tensor`
    (in which case the result is differentiable w.r.t. ``d``). Non-positive
    ``d`` is allowed; only NaN raises.
    """
    from .numerics.tensor import Tensor

    direction = ray_directions(cam, u, v)
    origin = cam.center
    if isinstance(d, Tensor):
        dd = d.reshape(*d.shape, 1)
        return dd * direction.astype(d.dtype) + origin.astype(d.dtype)
    d = np.asarray(d, dtype=np.float64)
    if np.isnan(d).any():
        raise ValueError("NaN distance")
    return origin + d[..., None] * direction


@dataclass
class RayBundle:
    origins: np.ndarray      # [N, 3] world
    directions: np.ndarray   # [N, 3] world, unit norm
    pixels: np.ndarray       # [N, 2] integer (u, v)

    def __len__(self) -> int:
        return len(self.origins)


def pixel_grid(width: int, height: int) -> np.ndarray:
    """All (u, v) integer pixel indices in row-major order."""
    vv, uu = np.mgrid[0:height, 0:width]
    return np.stack([uu.ravel(), vv.ravel()], axis=-1)


def as_pixels(cam: CameraModel, pixels=None) -> np.ndarray:
    """Normalize a pixel selection (None, flat indices, or [N, 2] (u, v)) to [N, 2]."""
    if pixels is None:
        return pixel_grid(cam.width, cam.height)
    pixels = np.asarray(pixels)
    if pixels.ndim == 1:
        if pixels.size and (pixels.min() < 0 or pixels.max() >= cam.width * cam.height):
            raise IndexError("flat pixel index out of bounds")
        pixels = np.stack([pixels % cam.width, pixels // cam.width], axis=-1)
    if pixels.ndim != 2 or pixels.shape[1] != 2:
        raise ValueError(f"pixels must be flat indices or [N, 2], got shape {pixels.shape}")
    u, v = pixels[:, 0], pixels[:, 1]
    if (u < 0).any() or (u >= cam.width).any() or (v < 0).any() or (v >= cam.height).any():
        raise IndexError("pixel outside image bounds")
    return pixels.astype(np.int64)


def generate_rays(cam: CameraModel, pixels=None) -> RayBundle:
    """One ray through the center of each selected pixel."""
    pix = as_pixels(cam, pixels)
    dirs = ray_directions(cam, pix[:, 0] + 0.5, pix[:, 1] + 0.5)
    origins = np.broadcast_to(cam.center, dirs.shape).copy()
    return RayBundle(origins, dirs, pix)


# -- poses ---------------------------------------------------------------------

def look_at(eye, target=(0.0, 0.0, 0.0), up=UP) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera (R, t) for a camera at ``eye`` looking at ``target``.

    The image "up" is the component of ``up`` orthogonal to the viewing
    direction; when that vanishes (camera at a pole) ``POLE_FALLBACK_UP`` is
    used instead.
    """
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    fwd = target - eye
    fwd /= np.linalg.norm(fwd)
    up_o = None
    for cand in (np.asarray(up, dtype=np.float64), POLE_FALLBACK_UP):
        u = cand - np.dot(cand, fwd) * fwd
        n = np.linalg.norm(u)
        if n > 1e-6:
            up_o = u / n
            break
    y_axis = -up_o
    x_axis = np.cross(y_axis, fwd)
    R = np.stack([x_axis, y_axis, fwd], axis=0)
    t = -R @ eye
    return R, t


def roll(R: np.ndarray, t: np.ndarray, angle_deg: float) -> tuple[np.ndarray, np.ndarray]:
    """Rotate the camera about its own viewing axis."""
    a = np.deg2rad(angle_deg)
    Rz = np.array([[np.cos(a), -np.sin(a), 0.0], [np.sin(a), np.cos(a), 0.0], [0.0, 0.0, 1.0]])
    return Rz @ R, Rz @ t


def _extrinsics(eye, center) -> np.ndarray:
    R, t = look_at(eye, center)
    return np.concatenate([R, t[:, None]], axis=1)


def sample_sphere_poses(count: int, radius: float, center=(0.0, 0.0, 0.0),
                        seed: int | np.random.Generator = 0) -> list[np.ndarray]:
    """``count`` 3x4 extrinsics with camera centers uniform on a sphere."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    center = np.asarray(center, dtype=np.float64)
    dirs = rng.normal(size=(count, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return [_extrinsics(center + radius * d, center) for d in dirs]


def spiral_centers(count: int, radius: float, turns: float = 4.0,
                   polar_range: tuple[float, float] = (0.1 * np.pi, 0.9 * np.pi)) -> np.ndarray:
    s = np.linspace(0.0, 1.0, count)
    theta = polar_range[0] + s * (polar_range[1] - polar_range[0])
    phi = 2.0 * np.pi * turns * s
    return radius * np.stack([np.sin(theta) * np.cos(phi), np.cos(theta),
                              np.sin(theta) * np.sin(phi)], axis=-1)


def archimedean_spiral_poses(count: int, radius: float, turns: float = 4.0,
                             polar_range: tuple[float, float] = (0.1 * np.pi, 0.9 * np.pi)
                             ) -> list[np.ndarray]:
    """Ordered extrinsics along a spherical spiral around the origin.

    The polar angle (measured from +y) moves linearly through
    ``polar_range`` while the azimuth winds ``turns`` times.
    """
    if count < 2:
        raise ValueError("a spiral needs at least 2 poses")
    return [_extrinsics(c, np.zeros(3)) for c in spiral_centers(count, radius, turns, polar_range)]
