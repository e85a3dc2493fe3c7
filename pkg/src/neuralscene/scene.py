"""Scene functions (coordinate -> feature MLPs), the hypernetwork that emits
their weights from a latent code, and the auto-decoder codebook."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Iterable

import numpy as np

from .numerics import ConfigurationError, MlpSpec, Tensor, mlp_forward, mlp_init, stack

LATENT_INIT_STD = 0.01


@dataclass
class SceneFunction:
    """Flat weights ``phi`` (``[l]`` or a batch ``[B, l]``) of a 3 -> n MLP."""

    phi: Tensor
    spec: MlpSpec

    def __post_init__(self):
        if self.spec.input_dim != 3:
            raise ConfigurationError("scene functions take 3-D world coordinates")
        if self.phi.shape[-1] != self.spec.param_count:
            raise ConfigurationError(
                f"phi has {self.phi.shape[-1]} entries, spec needs {self.spec.param_count}")

    @property
    def feature_dim(self) -> int:
        return self.spec.output_dim

    @property
    def batched(self) -> bool:
        return self.phi.ndim == 2


def scene_spec(feature_dim: int = 32, hidden: tuple[int, ...] = (64, 64, 64),
               layer_norm: bool = False) -> MlpSpec:
    return MlpSpec(3, tuple(hidden), feature_dim, "relu", layer_norm)


def init_scene(spec: MlpSpec, rng: np.random.Generator, dtype=np.float32) -> SceneFunction:
    return SceneFunction(Tensor(mlp_init(spec, rng, dtype), requires_grad=True, name="phi"), spec)


def phi_eval(scene: SceneFunction, x) -> Tensor:
    """Features at world points.

    Unbatched scenes accept ``x`` of any shape ``[..., 3]``; batched scenes
    need ``x`` shaped ``[B, N, 3]`` to pair row ``b`` with ``phi[b]``.
    """
    return mlp_forward(scene.phi, scene.spec, x)


# -- hypernetwork -----------------------------------------------------------------

@dataclass
class Hypernetwork:
    """MLP R^k -> R^l whose output is the flat weight vector of a scene function."""

    psi: Tensor
    spec: MlpSpec
    target: MlpSpec

    def __post_init__(self):
        if self.spec.output_dim != self.target.param_count:
            raise ConfigurationError(
                f"hypernetwork emits {self.spec.output_dim} values, scene needs {self.target.param_count}")

    @property
    def latent_dim(self) -> int:
        return self.spec.input_dim


def init_hypernetwork(target: MlpSpec, latent_dim: int, hidden: tuple[int, ...],
                      rng: np.random.Generator, dtype=np.float32,
                      head_scale: float = 0.05) -> Hypernetwork:
    """Hidden layers He-initialized; the head starts as a small z-dependent
    perturbation around a freshly initialized scene function (its bias)."""
    if latent_dim >= target.param_count:
        raise ConfigurationError("latent dimension must be smaller than the scene parameter count")
    spec = MlpSpec(latent_dim, tuple(hidden), target.param_count)
    flat = mlp_init(spec, rng, np.float64, last_layer_scale=0.0)
    ws, bs = spec.slices()[-1]
    phi0 = mlp_init(target, rng, np.float64)
    flat[bs] = phi0
    # scale head rows per target entry so each phi entry moves ~head_scale of its init spread
    per_entry = np.empty(target.param_count)
    for (i, _o), (w_sl, b_sl) in zip(target.layer_dims, target.slices()):
        per_entry[w_sl] = np.sqrt(2.0 / i)
        per_entry[b_sl] = np.sqrt(2.0 / i)
    h = spec.layer_dims[-1][0]
    head = rng.normal(size=(h, target.param_count)) * per_entry * head_scale / np.sqrt(h)
    flat[ws] = head.ravel()
    return Hypernetwork(Tensor(flat.astype(dtype), requires_grad=True, name="psi"), spec, target)


def hypernet_map(h: Hypernetwork, z) -> SceneFunction:
    """``z`` (a LatentCode, ``[k]`` or ``[B, k]`` tensor) -> scene function(s)."""
    if isinstance(z, LatentCode):
        z = z.z
    if not isinstance(z, Tensor):
        z = Tensor(np.asarray(z, dtype=h.psi.dtype))
    if z.shape[-1] != h.latent_dim:
        raise ConfigurationError(f"latent code has dim {z.shape[-1]}, hypernetwork expects {h.latent_dim}")
    phi = mlp_forward(h.psi, h.spec, z)
    return SceneFunction(phi, h.target)


# -- latent codes ------------------------------------------------------------------

@dataclass
class LatentCode:
    z: Tensor
    instance_id: Hashable = None
    frozen: bool = False

    @property
    def dim(self) -> int:
        return self.z.shape[-1]


@dataclass
class LatentCodebook:
    codes: dict = field(default_factory=dict)

    @property
    def latent_dim(self) -> int:
        return next(iter(self.codes.values())).dim

    def __len__(self) -> int:
        return len(self.codes)

    def __contains__(self, key) -> bool:
        return key in self.codes

    def __getitem__(self, key) -> LatentCode:
        try:
            return self.codes[key]
        except KeyError:
            raise KeyError(f"no latent code for instance {key!r}") from None

    def ids(self) -> list:
        return list(self.codes)

    def gather(self, ids: Iterable) -> Tensor:
        """Stack the codes for ``ids`` into a ``[B, k]`` tensor (gradients flow back)."""
        return stack([self[i].z for i in ids], axis=0)

    def tensors(self) -> dict[str, Tensor]:
        return {f"code.{i}": c.z for i, c in self.codes.items() if not c.frozen}


def codebook_init(instance_ids: Iterable, k: int, seed: int | np.random.Generator = 0,
                  sigma: float = LATENT_INIT_STD, dtype=np.float32) -> LatentCodebook:
    """One N(0, sigma^2 I) code per instance, drawn in id order."""
    if k < 1:
        raise ConfigurationError("latent dimension must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    book = LatentCodebook()
    for iid in instance_ids:
        if iid in book.codes:
            raise ValueError(f"duplicate instance id {iid!r}")
        z = rng.normal(0.0, 1.0, size=k) * sigma
        book.codes[iid] = LatentCode(Tensor(z.astype(dtype), requires_grad=True, name=f"code.{iid}"), iid)
    return book


def conditioned_code(known, k: int | None = None, instance_id: Hashable = None,
                     dtype=np.float32) -> LatentCode:
    """Wrap externally known instance parameters as a frozen latent code."""
    arr = np.asarray(known, dtype=dtype).reshape(-1)
    if k is not None and arr.size != k:
        raise ValueError(f"conditioning vector has {arr.size} entries, expected {k}")
    return LatentCode(Tensor(arr.copy()), instance_id, frozen=True)
