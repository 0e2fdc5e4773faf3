"""Contrastive autoencoder for unsupervised image clustering.

Subpackages and modules:

- ``data``: IDX / NPZ loaders
- ``augment``: positive-pair augmentations
- ``nncore``: numpy autodiff, layers, optimizers, LR schedule, checkpoints
- ``model``: encoder, projector, (conditional) decoder
- ``loss``: NT-Xent, MSE, combined objective
- ``cluster``: KMeans, elbow selection, prototype soft assignment
- ``pipeline``: two-phase training driver
- ``evaluate`` / ``tsne`` / ``plots``: evaluation protocols and visual output
- ``cli``: command-line entry point
"""
from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
