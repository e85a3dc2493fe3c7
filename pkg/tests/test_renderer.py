import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neuralscene.camera import CameraModel, camera_directions, intrinsics_from_fov, look_at
from neuralscene.numerics import LstmSpec, Tensor, lstm_init
from neuralscene.raymarcher import MarchConfig
from neuralscene.renderer import (SENTINEL_NORMAL, Renderer, depth_to_points, generator_spec,
                                  init_generator, normals_from_depth, normals_to_image,
                                  pixel_generator, render)
from neuralscene.scene import SceneFunction, init_scene, scene_spec

from reference import reference_mlp


def setup(seed=0, n=6, dtype=np.float32):
    rng = np.random.default_rng(seed)
    scene = init_scene(scene_spec(n, (16,)), rng, dtype)
    lstm = lstm_init(LstmSpec(n, 8, 0.2), rng, dtype, head_scale=0.1)
    gspec = generator_spec(n, (12, 12))
    return rng, scene, Renderer(lstm, init_generator(gspec, rng, dtype), gspec, MarchConfig(0.05, 5))


def camera(res=16, eye=(0.4, 0.6, 2.5)):
    return CameraModel(intrinsics_from_fov(res, res, 50), *look_at(eye), res, res)


def test_generator_maps_equal_features_to_equal_colors():
    rng, _, r = setup()
    v = rng.normal(size=(1, 6)).astype(np.float32)
    rows = np.concatenate([v, rng.normal(size=(3, 6)).astype(np.float32), v])
    out = pixel_generator(rows, r.generator, r.generator_spec).data
    assert out[0].tobytes() == out[-1].tobytes()
    alone = pixel_generator(v, r.generator, r.generator_spec).data
    assert out[0].tobytes() == alone[0].tobytes()


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 300), seed=st.integers(0, 2**16))
def test_generator_commutes_with_permutation_bitwise(n, seed):
    _, _, r = setup()
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 6)).astype(np.float32)
    perm = rng.permutation(n)
    out = pixel_generator(v, r.generator, r.generator_spec).data
    assert pixel_generator(v[perm], r.generator, r.generator_spec).data.tobytes() == out[perm].tobytes()


def test_generator_matches_reference():
    rng, _, r = setup(1, dtype=np.float64)
    v = rng.normal(size=(7, 6))
    np.testing.assert_allclose(pixel_generator(v, r.generator, r.generator_spec).data,
                               reference_mlp(r.generator.data, r.generator_spec, v), rtol=1e-8)


def test_zero_generator_outputs_its_bias():
    spec = generator_spec(4, (5,))
    flat = np.zeros(spec.param_count)
    flat[spec.slices()[-1][1]] = [0.1, 0.2, 0.3]
    out = pixel_generator(np.random.default_rng(0).normal(size=(9, 4)), Tensor(flat), spec)
    np.testing.assert_array_equal(out.data, np.tile([0.1, 0.2, 0.3], (9, 1)))


def test_constant_scene_renders_constant_image():
    rng, _, r = setup()
    spec = scene_spec(6, (16,))
    flat = np.zeros(spec.param_count, dtype=np.float32)
    flat[spec.slices()[-1][1]] = rng.normal(size=6)
    out = render(SceneFunction(Tensor(flat), spec), camera(), r)
    assert np.all(out.rgb == out.rgb[0, 0])


def test_render_is_bit_reproducible_and_chunk_independent():
    _, scene, r = setup(2)
    cam = camera(20)
    a = render(scene, cam, r)
    b = render(scene, cam, r)
    c = render(scene, cam, r, chunk=37)
    assert a.rgb.tobytes() == b.rgb.tobytes() and a.depth.tobytes() == b.depth.tobytes()
    np.testing.assert_allclose(c.rgb, a.rgb, rtol=1e-5, atol=1e-6)
    assert a.rgb.shape == (20, 20, 3) and a.depth.shape == (20, 20)


def test_render_keeps_trace_on_request():
    _, scene, r = setup(3)
    out = render(scene, camera(8), r, keep_trace=True)
    assert out.trace.shape == (6, 8, 8)
    np.testing.assert_allclose(out.trace[-1], out.depth)
    assert np.all(out.rgb_clamped() <= 1) and np.all(out.rgb_clamped() >= 0)


def test_render_rejects_batched_scene():
    _, scene, r = setup()
    batched = SceneFunction(Tensor(np.stack([scene.phi.data] * 2)), scene.spec)
    with pytest.raises(ValueError):
        render(batched, camera(), r)


def _angles(a, b):
    return np.degrees(np.arccos(np.clip((a * b).sum(-1), -1, 1)))


def test_normals_of_fronto_parallel_plane():
    cam = camera(12)
    n = normals_from_depth(np.full((12, 12), 2.0), cam)
    np.testing.assert_allclose(n, np.broadcast_to([0, 0, -1.0], n.shape), atol=1e-9)


def test_normals_of_slanted_plane():
    cam = camera(32)
    normal = np.array([0.3, -0.2, -1.0])
    normal /= np.linalg.norm(normal)
    rays = camera_directions(cam, *np.meshgrid(np.arange(32) + 0.5, np.arange(32) + 0.5))
    rays = rays / rays[..., 2:3]
    depth = -2.0 / (rays @ normal)          # plane normal . X = -2 in camera frame
    n = normals_from_depth(depth, cam)
    assert _angles(n, normal).max() < 1.0


def test_normals_of_sphere():
    res = 64
    cam = CameraModel(intrinsics_from_fov(res, res, 50), np.eye(3), np.zeros(3), res, res)
    center, radius = np.array([0.0, 0.0, 3.0]), 1.0
    rays = camera_directions(cam, *np.meshgrid(np.arange(res) + 0.5, np.arange(res) + 0.5))
    rays = rays / np.linalg.norm(rays, axis=-1, keepdims=True)
    b = rays @ center
    disc = b ** 2 - (center @ center - radius ** 2)
    hit = disc > 0
    t = np.where(hit, b - np.sqrt(np.where(hit, disc, 0.0)), 0.0)
    P = rays * t[..., None]
    depth = np.where(hit, P[..., 2], 0.0)
    n = normals_from_depth(depth, cam)
    truth = (P - center) / radius
    assert np.median(_angles(n[hit], truth[hit])) < 5.0
    assert np.all(n[~hit] == SENTINEL_NORMAL)


def test_depth_to_points_round_trip():
    cam = camera(10)
    depth = np.random.default_rng(0).uniform(1, 3, size=(10, 10))
    P = depth_to_points(depth, cam)
    np.testing.assert_allclose(P[..., 2], depth)
    img = normals_to_image(normals_from_depth(depth, cam))
    assert img.min() >= 0 and img.max() <= 1
