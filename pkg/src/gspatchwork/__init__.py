"""gspatchwork: patch-based inpainting of anchor-based Gaussian scenes.

The pipeline locates damaged regions from semantic masks and opacity,
searches the scene's road manifold for structurally similar patches using
feature-embedded splats, transplants the best match voxel-by-voxel, and
runs a short reprojection-supervised fusion. A CPU splatting renderer
provides all projections, feature maps, and gradients.
"""

__version__ = "0.1.0"
