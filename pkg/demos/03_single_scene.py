# %% [markdown]
# # Fitting one scene from posed images
#
# Generate a Shepard-Metzler object, train a scene network and marcher on
# its images, then look at held-out views and the learned depth.
# The step count here is small so the script finishes in a few minutes;
# raise STEPS for sharper results.

# %%
import tempfile
from pathlib import Path

from neuralscene.metrics import psnr
from neuralscene.renderer import normals_from_depth, normals_to_image
from neuralscene.images import write_png
from neuralscene.synthdata import DatasetConfig, build_dataset, load_dataset
from neuralscene.training import ModelConfig, TrainConfig, fit, init_model, render_view

STEPS = 600
work = Path(tempfile.mkdtemp())
build_dataset(DatasetConfig(views=30, test_views=5, resolution=32, seed=1), work / "data")
train = load_dataset(work / "data")
test = load_dataset(work / "data", "test")

# %%
model = init_model(ModelConfig(init_step=0.2, background=1.0, feature_dim=32))
fit(train, model, TrainConfig(steps=STEPS, rays_per_view=256, lr=1e-3, lr_schedule="cosine",
                                      lr_final=5e-5, log_every=100))

# %% [markdown]
# Held-out spiral views. The depth is never supervised, only images are.

# %%
for j, cam in enumerate(test[0].cameras):
    out = render_view(model, cam)
    print(f"view {j}: PSNR {psnr(out.rgb_clamped(), test[0].images[j]):.2f} dB")
    write_png(work / f"view_{j:02d}.png", out.rgb_clamped())
    write_png(work / f"normals_{j:02d}.png", normals_to_image(normals_from_depth(out.depth, cam)))
print("renders written to", work)
