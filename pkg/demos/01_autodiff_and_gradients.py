# %% [markdown]
# # The autodiff engine
#
# Everything in the package is differentiated by a small reverse-mode engine
# on top of numpy. This script builds a tiny MLP, compares its gradients
# with central finite differences, and runs Adam on a quadratic.

# %%
import numpy as np

from neuralscene.numerics import (MlpSpec, OptimizerState, Tensor, backward, grad_check,
                                  mlp_forward, mlp_init, optimizer_step, square)

rng = np.random.default_rng(0)
spec = MlpSpec(3, (16, 16), 2)
params = Tensor(mlp_init(spec, rng, np.float64), requires_grad=True)
x = Tensor(rng.normal(size=(8, 3)))
target = rng.normal(size=(8, 2))

def loss():
    return square(mlp_forward(params, spec, x) - target).mean()

print("parameters:", spec.param_count)
print("max relative gradient error:", grad_check(loss, params))

# %% [markdown]
# Gradients accumulate on leaves until cleared, the same as in most
# frameworks. `backward` only accepts scalars.

# %%
params.grad = None
backward(loss())
print("gradient norm:", np.linalg.norm(params.grad))

# %% [markdown]
# Adam on a quadratic bowl converges to the minimizer.

# %%
p = Tensor(np.zeros(3), requires_grad=True)
goal = np.array([0.7, -1.3, 2.0])
state = OptimizerState(lr=1e-2)
for step in range(1000):
    p.grad = None
    backward(square(p - goal).sum())
    optimizer_step(state, {"p": p})
print("after 1000 Adam steps:", p.data, "target:", goal)
