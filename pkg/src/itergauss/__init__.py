"""Iterative Gaussianization for sampling from unnormalized densities.

Builds an invertible transport map from the standard Gaussian toward a
target by alternating relative-score-PCA rotations with mean-field
variational inference, with exact log-determinants, diagnostics and
reproducible experiment drivers.
"""

__version__ = "0.1.0"
