"""Adam with bias correction, operating in place on tensor data."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import NonFiniteError, Tensor


@dataclass
class OptimizerState:
    lr: float = 4e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    # per-parameter learning-rate multipliers, keyed by parameter name
    lr_scale: dict[str, float] = field(default_factory=dict)


def optimizer_step(state: OptimizerState, params: Mapping[str, Tensor],
                   grads: Mapping[str, np.ndarray] | None = None,
                   frozen: set[str] | frozenset = frozenset()) -> None:
    """Apply one Adam update to every parameter that has a gradient.

    ``grads`` defaults to each tensor's ``.grad``. Parameters without a
    gradient, or listed in ``frozen``, are left untouched. Moments are only
    created for parameters that are actually updated.
    """
    todo = []
    for name, p in params.items():
        if name in frozen:
            continue
        g = p.grad if grads is None else grads.get(name)
        if g is None:
            continue
        if not np.isfinite(g).all():
            bad = int((~np.isfinite(g)).sum())
            raise NonFiniteError(f"optimizer_step[{name}] ({bad} non-finite gradient entries)", "backward")
        todo.append((name, p, g))
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for name, p, g in todo:
        g = np.asarray(g, dtype=p.dtype)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        lr = state.lr * state.lr_scale.get(name, 1.0)
        update = (lr / corr1) * m / (np.sqrt(v / corr2) + state.eps)
        if np.any(update):
            p.data -= update.astype(p.dtype)
