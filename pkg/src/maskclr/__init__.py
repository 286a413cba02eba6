"""maskclr: dual-encoder contrastive learning with a hard feature mask.

Library layout:

- ``autodiff``    float64 tensors, reverse-mode gradients, Adam
- ``augment``     paired view generation (full view + unresized crop)
- ``model``       encoders, projection heads, mask network, classifier
- ``losses``      NT-Xent, cross-entropy, weighted combination
- ``train``       class-balanced batches, epoch loop, checkpoints
- ``evaluation``  embedding export, K-Means, NMI/AMI/ARI
- ``mixture``     diagonal GMM with a designated outlier component
- ``data``        directory ingestion and the synthetic image generator
- ``cli``         ``maskclr`` command-line entry points
"""

__version__ = "0.1.0"
