"""Perceptual font manifolds.

Pipeline: rasterize font glyphs into 28x28 training bitmaps, train a
convolutional VAE with a 5-D latent space, collect perception-labeled
latent vectors, reduce them to a 2-D manifold with t-SNE and KDE heatmaps,
and serve an exploration interface with SSIM-based matching.
"""

__version__ = "0.1.0"
