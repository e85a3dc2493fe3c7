import numpy as np
import pytest

from neuralscene.camera import CameraModel, intrinsics_from_fov, look_at
from neuralscene.numerics import (ConfigurationError, LstmSpec, MlpSpec, OptimizerState, Tensor,
                                  backward, grad_check, lstm_init, optimizer_step, square)
from neuralscene.raymarcher import MarchConfig
from neuralscene.renderer import Renderer, generator_spec, init_generator, render, shade_rays
from neuralscene.scene import (LatentCodebook, SceneFunction, codebook_init, conditioned_code,
                               hypernet_map, init_hypernetwork, init_scene, phi_eval, scene_spec)

from reference import reference_mlp


def small_renderer(rng, n=4, dtype=np.float64, max_iter=3):
    lstm = lstm_init(LstmSpec(n, 3, 0.5), rng, dtype)
    gspec = generator_spec(n, (5,))
    return Renderer(lstm, init_generator(gspec, rng, dtype), gspec, MarchConfig(0.05, max_iter))


def small_camera(res=4):
    R, t = look_at([0.3, 0.4, 2.5])
    return CameraModel(intrinsics_from_fov(res, res, 40), R, t, res, res)


def test_phi_zero_params():
    spec = scene_spec(8, (16,))
    scene = SceneFunction(Tensor(np.zeros(spec.param_count)), spec)
    x = np.random.default_rng(0).normal(size=(10, 3))
    assert np.all(phi_eval(scene, x).data == 0)


def test_phi_deterministic_and_matches_reference():
    rng = np.random.default_rng(1)
    spec = scene_spec(5, (6, 6))
    scene = init_scene(spec, rng, np.float64)
    x = rng.uniform(-2, 2, size=(1000, 3))
    a = phi_eval(scene, x).data
    assert a.tobytes() == phi_eval(scene, x).data.tobytes()
    ref = reference_mlp(scene.phi.data, spec, x[:200])
    np.testing.assert_allclose(a[:200], ref, rtol=1e-6, atol=1e-12)
    # remaining points: point-by-point evaluation
    for p in x[200::50]:
        np.testing.assert_allclose(phi_eval(scene, p[None]).data[0], a[np.where((x == p).all(1))[0][0]],
                                   rtol=1e-12)


def test_phi_finite_on_compact_box():
    scene = init_scene(scene_spec(), np.random.default_rng(2))
    grid = np.stack(np.meshgrid(*[np.linspace(-10, 10, 15)] * 3), -1).reshape(-1, 3)
    assert np.isfinite(phi_eval(scene, grid).data).all()


def test_scene_function_rejects_bad_shapes():
    with pytest.raises(ConfigurationError):
        SceneFunction(Tensor(np.zeros(5)), scene_spec(4, (4,)))
    with pytest.raises(ConfigurationError):
        SceneFunction(Tensor(np.zeros(MlpSpec(2, (), 1).param_count)), MlpSpec(2, (), 1))


def test_hypernet_zero_weights_is_constant_map():
    rng = np.random.default_rng(3)
    target = scene_spec(4, (6,))
    h = init_hypernetwork(target, 3, (5,), rng, np.float64)
    h.psi.data[...] = 0.0
    a = hypernet_map(h, rng.normal(size=3)).phi.data
    b = hypernet_map(h, rng.normal(size=3)).phi.data
    assert a.tobytes() == b.tobytes()


def test_hypernet_equal_codes_equal_phi():
    rng = np.random.default_rng(4)
    h = init_hypernetwork(scene_spec(4, (6,)), 3, (5,), rng)
    z = rng.normal(size=3).astype(np.float32)
    assert hypernet_map(h, z).phi.data.tobytes() == hypernet_map(h, z.copy()).phi.data.tobytes()


def test_hypernet_output_length_and_dim_errors():
    rng = np.random.default_rng(5)
    target = scene_spec(4, (6,))
    h = init_hypernetwork(target, 3, (5,), rng)
    assert hypernet_map(h, np.zeros(3)).phi.shape == (target.param_count,)
    assert hypernet_map(h, np.zeros((2, 3))).phi.shape == (2, target.param_count)
    with pytest.raises(ConfigurationError):
        hypernet_map(h, np.zeros(4))
    with pytest.raises(ConfigurationError):
        init_hypernetwork(MlpSpec(3, (), 1), 4, (5,), rng)


def test_render_loss_gradient_wrt_z_matches_finite_differences():
    rng = np.random.default_rng(6)
    h = init_hypernetwork(scene_spec(4, (6,)), 3, (5,), rng, np.float64)
    renderer = small_renderer(rng)
    cam = small_camera()
    from neuralscene.camera import generate_rays
    rays = generate_rays(cam)
    target = rng.uniform(size=(len(rays), 3))
    z = Tensor(rng.normal(size=3), requires_grad=True)

    def loss():
        rgb, _ = shade_rays(hypernet_map(h, z), rays.origins, rays.directions, renderer)
        return square(rgb - target).mean()

    assert grad_check(loss, z, eps=1e-6) < 1e-6


def test_zero_hypernet_renders_identical_images_for_all_codes():
    rng = np.random.default_rng(7)
    h = init_hypernetwork(scene_spec(4, (6,)), 3, (5,), rng)
    h.psi.data[...] = 0.0
    renderer = small_renderer(rng, dtype=np.float32)
    cam = small_camera(8)
    imgs = [render(hypernet_map(h, rng.normal(size=3)), cam, renderer).rgb for _ in range(3)]
    assert imgs[0].tobytes() == imgs[1].tobytes() == imgs[2].tobytes()


def test_gradient_reaches_latent_code():
    rng = np.random.default_rng(8)
    h = init_hypernetwork(scene_spec(4, (6,)), 3, (5,), rng)
    renderer = small_renderer(rng, dtype=np.float32)
    from neuralscene.camera import generate_rays
    rays = generate_rays(small_camera())
    book = codebook_init(["a"], 3, seed=1)
    rgb, _ = shade_rays(hypernet_map(h, book["a"]), rays.origins, rays.directions, renderer)
    backward(square(rgb - 0.5).mean())
    assert np.linalg.norm(book["a"].z.grad) > 0


def test_codebook_init_deterministic_and_unique():
    a = codebook_init(["x", "y"], 5, seed=3)
    b = codebook_init(["x", "y"], 5, seed=3)
    assert all(a[i].z.data.tobytes() == b[i].z.data.tobytes() for i in ("x", "y"))
    with pytest.raises(ValueError):
        codebook_init(["x", "x"], 5)
    with pytest.raises(ConfigurationError):
        codebook_init(["x"], 0)
    with pytest.raises(KeyError):
        a["missing"]


def test_codebook_mean_is_near_zero():
    sigma = 0.01
    book = codebook_init(range(10_000), 4, seed=0, sigma=sigma)
    codes = np.stack([c.z.data for c in book.codes.values()]).astype(np.float64)
    assert np.all(np.abs(codes.mean(axis=0)) < 3 * sigma / np.sqrt(10_000))
    assert codes.std() == pytest.approx(sigma, rel=0.05)


def test_codebook_zero_sigma():
    book = codebook_init([0, 1, 2], 1, seed=0, sigma=0.0)
    assert all(np.all(c.z.data == 0) for c in book.codes.values())


def test_codebook_gather_routes_gradients():
    book = codebook_init(["a", "b"], 3, seed=0)
    backward((book.gather(["a", "b", "a"]) * np.arange(9.0).reshape(3, 3)).sum())
    np.testing.assert_allclose(book["a"].z.grad, [6.0, 8.0, 10.0])
    np.testing.assert_allclose(book["b"].z.grad, [3.0, 4.0, 5.0])


def test_conditioned_code():
    a = conditioned_code([0.1, 0.2, 0.3], k=3, instance_id="face")
    b = conditioned_code([0.1, 0.2, 0.3], k=3)
    assert a.z.data.tobytes() == b.z.data.tobytes()
    assert a.frozen and not a.z.requires_grad
    with pytest.raises(ValueError):
        conditioned_code([1.0, 2.0], k=3)


def test_frozen_code_is_left_alone_by_optimizer():
    book = LatentCodebook({"c": conditioned_code([1.0, -1.0], k=2, instance_id="c")})
    assert book.tensors() == {}
    z = book["c"].z
    before = z.data.tobytes()
    z.grad = np.ones(2, dtype=np.float32)
    optimizer_step(OptimizerState(lr=0.1), {"code.c": z}, frozen={"code.c"})
    assert z.data.tobytes() == before
