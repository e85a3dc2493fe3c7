# %% [markdown]
# # A prior over a class of objects
#
# With a hypernetwork, each training object is a latent code. A new object
# is reconstructed by optimizing only a code against one or two images,
# with every network weight frozen.

# %%
import tempfile
from pathlib import Path

import numpy as np

from neuralscene.metrics import psnr
from neuralscene.numerics import Tensor
from neuralscene.synthdata import DatasetConfig, build_dataset, load_dataset
from neuralscene.training import (ModelConfig, TrainConfig, few_shot_infer, fit, init_model,
                                  render_view)

work = Path(tempfile.mkdtemp())
build_dataset(DatasetConfig(instances=8, views=10, resolution=24, seed=0), work / "train")
build_dataset(DatasetConfig(instances=2, views=4, resolution=24, seed=99), work / "new")
train = load_dataset(work / "train")
new = load_dataset(work / "new")

model = init_model(ModelConfig(init_step=0.2, background=1.0, feature_dim=32, latent_dim=16),
                   [ds.instance_id for ds in train])
fit(train, model, TrainConfig(steps=400, batch_views=4, rays_per_view=128, lr=1e-3))

# %% [markdown]
# Fit codes from view 0 (one shot) and views 0-1 (two shots); score on the
# remaining views. z = 0 is the starting point and the baseline.

# %%
for ds in new:
    held_out = range(2, len(ds))
    def score(z):
        return np.mean([psnr(render_view(model, ds.cameras[j], z=z).rgb_clamped(), ds.images[j])
                        for j in held_out])
    zero = Tensor(np.zeros(16, dtype=np.float32))
    one = few_shot_infer([(ds.images[0], ds.cameras[0])], model, steps=200).z
    two = few_shot_infer([(ds.images[j], ds.cameras[j]) for j in (0, 1)], model, steps=200).z
    print(f"{ds.instance_id}: z=0 {score(zero):.2f} dB, one-shot {score(one):.2f} dB, "
          f"two-shot {score(two):.2f} dB")
