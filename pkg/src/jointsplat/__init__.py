"""Joint feed-forward prediction of pixel-aligned 3D Gaussians and camera
poses from unposed sparse views, with self-supervised training from rendering
and reprojection losses.

Subpackages:
  tensor      reverse-mode autodiff over numpy arrays
  geometry    rigid transforms, intrinsics, pose codec, pose metrics
  gaussians   Gaussian primitive containers, activations, PLY interop
  render      differentiable tile rasterizer + naive compositing oracle
  model       masked multi-view transformer and prediction heads
  losses      rendering / reprojection / pose losses
  synthdata   deterministic synthetic scenes, cameras and samples
  training    optimizer, train loop, checkpoints
  evaluation  PSNR/SSIM, pose AUC, EPA, PnP+RANSAC, leakage audit
  cli         command-line interface
"""

__version__ = "0.1.0"
