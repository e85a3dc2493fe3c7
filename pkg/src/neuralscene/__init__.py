"""Neural scene representation with a learned, differentiable ray marcher.

Subpackages and modules:

- ``numerics``: reverse-mode autodiff on numpy, MLP/LSTM layers, Adam
- ``camera``: pinhole cameras, rays and pose trajectories
- ``scene``: the coordinate network, hypernetwork and latent codebook
- ``raymarcher`` / ``renderer``: marching, color generation, depth and normals
- ``synthdata``: analytic scenes, an oracle sphere tracer and dataset files
- ``training``: losses, the training loop, few-shot inference and evaluation
- ``cli``: the ``neuralscene`` command
"""

__version__ = "0.1.0"
