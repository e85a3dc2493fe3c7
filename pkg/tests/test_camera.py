import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neuralscene.camera import (CameraModel, archimedean_spiral_poses, generate_rays, intrinsics,
                                intrinsics_from_fov, look_at, point_along_ray, roll,
                                sample_sphere_poses, spiral_centers)
from neuralscene.numerics import Tensor, backward


def random_camera(rng, width=32, height=24):
    eye = rng.normal(size=3)
    eye *= rng.uniform(1.5, 4.0) / np.linalg.norm(eye)
    R, t = look_at(eye, rng.normal(scale=0.2, size=3))
    K = intrinsics(rng.uniform(20, 40), rng.uniform(20, 40), rng.uniform(10, 20), rng.uniform(8, 14))
    return CameraModel(K, R, t, width, height)


def test_principal_ray():
    cam = CameraModel(intrinsics(1, 1, 0, 0), np.eye(3), np.zeros(3), 4, 4)
    np.testing.assert_allclose(point_along_ray(cam, 0, 0, 1.0), [0, 0, 1])


def test_translation_composition():
    cam = CameraModel(intrinsics(1, 1, 0, 0), np.eye(3), [0, 0, -2], 4, 4)
    np.testing.assert_allclose(cam.center, [0, 0, 2])
    np.testing.assert_allclose(point_along_ray(cam, 0, 0, 2.0), [0, 0, 4])


def test_distance_to_camera_identity():
    rng = np.random.default_rng(0)
    for _ in range(20):
        cam = random_camera(rng)
        u, v, d = rng.uniform(0, 32), rng.uniform(0, 24), rng.uniform(0.1, 5)
        p = point_along_ray(cam, u, v, d)
        assert abs(np.linalg.norm(p - cam.center) - d) < 1e-5


def test_point_along_ray_differentiable_in_d():
    cam = random_camera(np.random.default_rng(1))
    d = Tensor(np.array([1.5, 2.0]), requires_grad=True)
    p = point_along_ray(cam, np.array([3.0, 4.0]), np.array([5.0, 6.0]), d)
    backward(p.sum())
    dirs = (p.data - cam.center) / d.data[:, None]
    np.testing.assert_allclose(d.grad, dirs.sum(axis=1), rtol=1e-10)


def test_point_along_ray_allows_negative_but_not_nan():
    cam = random_camera(np.random.default_rng(2))
    point_along_ray(cam, 1.0, 1.0, -0.5)
    with pytest.raises(ValueError):
        point_along_ray(cam, 1.0, 1.0, np.nan)


def test_generate_rays_full_image():
    cam = CameraModel(intrinsics(2, 2, 1, 1), np.eye(3), np.zeros(3), 2, 2)
    rays = generate_rays(cam)
    assert len(rays) == 4
    np.testing.assert_allclose(np.linalg.norm(rays.directions, axis=1), 1.0, atol=1e-6)


def test_center_pixel_of_odd_image_looks_forward():
    cam = CameraModel(intrinsics(3, 3, 2.5, 2.5), np.eye(3), np.zeros(3), 5, 5)
    rays = generate_rays(cam, np.array([[2, 2]]))
    np.testing.assert_allclose(rays.directions[0], [0, 0, 1], atol=1e-12)


def test_generate_rays_rejects_out_of_bounds():
    cam = CameraModel(intrinsics(3, 3, 2, 2), np.eye(3), np.zeros(3), 4, 4)
    with pytest.raises(IndexError):
        generate_rays(cam, np.array([[4, 0]]))
    with pytest.raises(IndexError):
        generate_rays(cam, np.array([16]))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), d=st.floats(0.05, 20.0))
def test_project_unproject_round_trip(seed, d):
    rng = np.random.default_rng(seed)
    cam = random_camera(rng)
    rays = generate_rays(cam, rng.integers(0, 32 * 24, size=8))
    pts = rays.origins + d * rays.directions
    uvz = cam.project(pts)
    np.testing.assert_allclose(uvz[:, :2], rays.pixels + 0.5, atol=1e-4)
    assert (uvz[:, 2] > 0).all()


def test_point_along_ray_linear_in_d():
    cam = random_camera(np.random.default_rng(3))
    r = [point_along_ray(cam, 7.0, 9.0, k * 0.7) for k in (1, 2, 3)]
    np.testing.assert_allclose(r[1] - r[0], r[2] - r[1], atol=1e-6)


def test_sphere_poses_deterministic_and_on_sphere():
    a = sample_sphere_poses(1, 2.5, seed=11)
    b = sample_sphere_poses(1, 2.5, seed=11)
    assert np.array_equal(a[0], b[0])
    cam = CameraModel.from_extrinsics(a[0], np.eye(3), 1, 1)
    assert abs(np.linalg.norm(cam.center) - 2.5) < 1e-6


def test_sphere_poses_look_at_center_and_are_rotations():
    K = intrinsics_from_fov(64, 48, 50)
    center = np.array([0.3, -0.2, 0.1])
    for E in sample_sphere_poses(200, 3.0, center=center, seed=4):
        cam = CameraModel.from_extrinsics(E, K, 64, 48)
        cam.validate()
        assert np.linalg.norm(cam.R @ cam.R.T - np.eye(3)) < 1e-5
        uvz = cam.project(center)
        np.testing.assert_allclose(uvz[:2], [32.0, 24.0], atol=1e-3)
        assert abs(np.linalg.norm(cam.center - center) - 3.0) < 1e-6


def test_sphere_poses_uniformity():
    centers = np.array([CameraModel.from_extrinsics(E, np.eye(3), 1, 1).center
                        for E in sample_sphere_poses(10_000, 2.0, seed=5)])
    assert np.linalg.norm(centers.mean(axis=0)) < 0.05 * 2.0


def test_look_at_pole_fallback():
    R, t = look_at([0.0, 3.0, 0.0])
    assert np.linalg.norm(R @ R.T - np.eye(3)) < 1e-9
    assert abs(np.linalg.det(R) - 1) < 1e-9
    np.testing.assert_allclose(R[2], [0, -1, 0], atol=1e-12)


def test_spiral_continuity_and_endpoints():
    poses = archimedean_spiral_poses(250, 2.0)
    assert len(poses) == 250
    centers = np.array([CameraModel.from_extrinsics(E, np.eye(3), 1, 1).center for E in poses])
    np.testing.assert_allclose(np.linalg.norm(centers, axis=1), 2.0, atol=1e-6)
    steps = np.linalg.norm(np.diff(centers, axis=0), axis=1)
    assert steps.max() <= 3.0 * np.median(steps)
    # polar angle measured from +y: first near the top, last near the bottom
    polar = np.arccos(centers[:, 1] / 2.0)
    assert polar[0] == pytest.approx(0.1 * np.pi)
    assert polar[-1] == pytest.approx(0.9 * np.pi)
    assert np.all(np.diff(polar) > 0)


def test_spiral_needs_two_poses():
    with pytest.raises(ValueError):
        archimedean_spiral_poses(1, 2.0)
    assert spiral_centers(2, 1.0).shape == (2, 3)


def test_roll_keeps_center_and_axis():
    R, t = look_at([0.0, 0.5, 2.0])
    R2, t2 = roll(R, t, 30.0)
    np.testing.assert_allclose(-R2.T @ t2, -R.T @ t, atol=1e-12)
    np.testing.assert_allclose(R2[2], R[2], atol=1e-12)


def test_with_size_preserves_field_of_view():
    cam = CameraModel(intrinsics_from_fov(64, 64, 50), *look_at([0, 0, 3.0]), 64, 64)
    big = cam.with_size(128, 128)
    p = np.array([0.2, -0.1, 0.3])
    np.testing.assert_allclose(big.project(p)[:2], 2 * cam.project(p)[:2], rtol=1e-12)
