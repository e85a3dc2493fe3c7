"""Finite-difference verification of analytic gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


def numeric_grad(f: Callable[[], Tensor], x: Tensor, eps: float = 1e-5,
                 index: Sequence[int] | None = None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. the entries of ``x``.

    ``x.data`` is perturbed in place and restored. When ``index`` is given
    only those flat coordinates are evaluated (others are left at 0).
    """
    flat = x.data.reshape(-1)
    out = np.zeros(flat.size, dtype=np.float64)
    coords = range(flat.size) if index is None else index
    with no_grad():
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f().data)
            flat[i] = orig - eps
            fm = float(f().data)
            flat[i] = orig
            out[i] = (fp - fm) / (2.0 * eps)
    return out.reshape(x.shape)


def analytic_grad(f: Callable[[], Tensor], xs: Sequence[Tensor]) -> list[np.ndarray]:
    for x in xs:
        x.grad = None
    backward(f())
    return [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in xs]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max_i |a_i - n_i| / max(max_i |n_i|, max_i |a_i|).

    Normalizing by the gradient's scale rather than per coordinate keeps
    coordinates with near-zero gradient from turning finite-difference noise
    into huge relative errors.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    diff = np.abs(a - n).max(initial=0.0)
    if scale == 0.0:
        return diff
    return float(diff / scale)


def grad_check(f: Callable[[], Tensor], x: Tensor | Sequence[Tensor], eps: float = 1e-5,
               max_coords: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Worst relative error between backward() and central differences.

    ``f`` is a closure over the tensors in ``x`` (which must have
    ``requires_grad=True``). With ``max_coords`` a random subset of each
    tensor's coordinates is compared.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    grads = analytic_grad(f, xs)
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for t, g in zip(xs, grads):
        idx = None
        if max_coords is not None and t.size > max_coords:
            idx = np.sort(rng.choice(t.size, size=max_coords, replace=False))
        num = numeric_grad(f, t, eps, idx)
        if idx is None:
            err = relative_error(g, num)
        else:
            err = relative_error(g.reshape(-1)[idx], num.reshape(-1)[idx])
        worst = max(worst, err)
    return worst
