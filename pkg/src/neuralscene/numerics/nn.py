"""MLP and LSTM-cell building blocks over flat parameter vectors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, as_tensor, getitem, layer_norm, linear, relu, reshape, sigmoid, tanh


class ConfigurationError(ValueError):
    """Shapes or sizes that do not agree with a network spec."""


_ACTIVATIONS = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid}


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    activation: str = "relu"
    layer_norm: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ConfigurationError(f"all MLP dims must be >= 1, got {dims}")
        if self.activation not in _ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return list(zip(dims[:-1], dims[1:]))

    @property
    def param_count(self) -> int:
        return sum(i * o + o for i, o in self.layer_dims)

    def slices(self) -> list[tuple[slice, slice]]:
        """(weight, bias) slices into the flat vector, layer by layer.

        Weights are stored row-major as ``[in, out]`` so that ``x @ W``.
        """
        out, pos = [], 0
        for i, o in self.layer_dims:
            w = slice(pos, pos + i * o)
            pos += i * o
            b = slice(pos, pos + o)
            pos += o
            out.append((w, b))
        return out

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "output_dim": self.output_dim,
            "activation": self.activation,
            "layer_norm": self.layer_norm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(d["input_dim"], tuple(d["hidden_dims"]), d["output_dim"],
                   d.get("activation", "relu"), d.get("layer_norm", False))


def mlp_init(spec: MlpSpec, rng: np.random.Generator, dtype=np.float32,
             last_layer_scale: float = 1.0) -> np.ndarray:
    """He-normal weights, zero biases, packed into one flat vector."""
    flat = np.zeros(spec.param_count, dtype=np.float64)
    slices = spec.slices()
    for n, ((i, o), (ws, _)) in enumerate(zip(spec.layer_dims, slices)):
        std = np.sqrt(2.0 / i)
        if n == len(slices) - 1:
            std = np.sqrt(1.0 / i) * last_layer_scale
        flat[ws] = rng.normal(0.0, std, size=i * o)
    return flat.astype(dtype)


def mlp_forward(params, spec: MlpSpec, x, rowwise: bool = False) -> Tensor:
    """Evaluate the MLP described by ``spec`` with weights ``params``.

    ``params`` is either a flat ``[l]`` vector shared by all rows of ``x``
    (``[..., input_dim]``), or a batch ``[B, l]`` of parameter vectors, in
    which case ``x`` must be ``[B, N, input_dim]`` and batch entry ``b`` is
    evaluated with ``params[b]``. ``rowwise`` makes every output row depend
    bitwise on its input row only (see ``linear``).
    """
    params = as_tensor(params)
    x = as_tensor(x, dtype=params.dtype)
    if params.shape[-1] != spec.param_count:
        raise ConfigurationError(
            f"parameter vector has length {params.shape[-1]}, spec needs {spec.param_count}")
    if x.shape[-1] != spec.input_dim:
        raise ConfigurationError(f"input has {x.shape[-1]} features, spec needs {spec.input_dim}")
    act = _ACTIVATIONS[spec.activation]
    batched = params.ndim == 2
    if batched:
        if x.ndim != 3 or x.shape[0] != params.shape[0]:
            raise ConfigurationError(
                f"batched params {params.shape} need input [B, N, in], got {x.shape}")
        lead = None
        h = x
    else:
        lead = x.shape[:-1]
        h = reshape(x, (-1, spec.input_dim))
    n_layers = len(spec.layer_dims)
    for n, ((i, o), (ws, bs)) in enumerate(zip(spec.layer_dims, spec.slices())):
        if batched:
            w = reshape(getitem(params, (slice(None), ws)), (params.shape[0], i, o))
            b = getitem(params, (slice(None), bs))
        else:
            w = reshape(getitem(params, ws), (i, o))
            b = getitem(params, bs)
        h = linear(h, w, b, rowwise)
        if n < n_layers - 1:
            if spec.layer_norm:
                h = layer_norm(h)
            h = act(h)
    if not batched:
        h = reshape(h, (*lead, spec.output_dim))
    return h


@dataclass(frozen=True)
class LstmSpec:
    input_dim: int
    hidden_dim: int
    # initial value of the scalar head bias (step length at init)
    head_bias: float = 0.0

    @property
    def shapes(self) -> dict[str, tuple[int, ...]]:
        n, h = self.input_dim, self.hidden_dim
        return {"w_x": (n, 4 * h), "w_h": (h, 4 * h), "b": (4 * h,),
                "head_w": (h, 1), "head_b": (1,)}

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "hidden_dim": self.hidden_dim, "head_bias": self.head_bias}

    @classmethod
    def from_dict(cls, d: dict) -> "LstmSpec":
        return cls(d["input_dim"], d["hidden_dim"], d.get("head_bias", 0.0))


@dataclass
class LstmParams:
    """Gate weights in column blocks ordered (input, forget, cell, output)."""

    w_x: Tensor
    w_h: Tensor
    b: Tensor
    head_w: Tensor
    head_b: Tensor
    spec: LstmSpec = field(repr=False, default=None)

    def tensors(self) -> dict[str, Tensor]:
        return {"w_x": self.w_x, "w_h": self.w_h, "b": self.b,
                "head_w": self.head_w, "head_b": self.head_b}


def lstm_init(spec: LstmSpec, rng: np.random.Generator, dtype=np.float32,
              head_scale: float = 1e-2) -> LstmParams:
    """Uniform(+-1/sqrt(H)) gates, forget-gate bias 1, near-zero step head."""
    h = spec.hidden_dim
    bound = 1.0 / np.sqrt(h)
    shapes = spec.shapes
    w_x = rng.uniform(-bound, bound, shapes["w_x"])
    w_h = rng.uniform(-bound, bound, shapes["w_h"])
    b = np.zeros(4 * h)
    b[h:2 * h] = 1.0
    head_w = rng.normal(0.0, head_scale / np.sqrt(h), shapes["head_w"])
    head_b = np.full(1, spec.head_bias)
    mk = lambda a, name: Tensor(np.asarray(a, dtype=dtype), requires_grad=True, name=name)  # noqa: E731
    return LstmParams(mk(w_x, "lstm.w_x"), mk(w_h, "lstm.w_h"), mk(b, "lstm.b"),
                      mk(head_w, "lstm.head_w"), mk(head_b, "lstm.head_b"), spec)


def lstm_cell(v, h, c, params: LstmParams) -> tuple[Tensor, Tensor, Tensor]:
    """One LSTM step plus a linear scalar head on the new hidden state.

    Returns ``(out [batch, 1], h', c')``.
    """
    dtype = params.w_x.dtype
    v, h, c = as_tensor(v, dtype), as_tensor(h, dtype), as_tensor(c, dtype)
    H = params.w_h.shape[0]
    if h.shape[-1] != H or c.shape[-1] != H:
        raise ConfigurationError(f"state width must be {H}, got {h.shape}, {c.shape}")
    if v.shape[-1] != params.w_x.shape[0]:
        raise ConfigurationError(f"input width must be {params.w_x.shape[0]}, got {v.shape}")
    gates = linear(v, params.w_x, params.b) + linear(h, params.w_h)
    i = sigmoid(gates[:, 0:H])
    f = sigmoid(gates[:, H:2 * H])
    g = tanh(gates[:, 2 * H:3 * H])
    o = sigmoid(gates[:, 3 * H:4 * H])
    c_new = f * c + i * g
    h_new = o * tanh(c_new)
    out = linear(h_new, params.head_w, params.head_b)
    return out, h_new, c_new
