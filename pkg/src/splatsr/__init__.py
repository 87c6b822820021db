"""Continuous multi-band image representation by anisotropic 2D Gaussians.

A raster is fitted as one Gaussian per source pixel (centers, covariances
and feature amplitudes all optimizable through fixed activations) and can
then be evaluated at any continuous coordinate, so a single fitted set
renders at arbitrary scale factors.  Rendering selects the k most relevant
Gaussians per target pixel under their own Mahalanobis metrics and blends
them with reference-aware similarity weights.
"""

from .errors import (ConfigError, FileFormatError, ParameterError,
                     ShapeMismatchError, SplatsrError)
from .fitting import (AdamState, FitConfig, FitResult, GradBundle, adam_step,
                      backward, fit, gradcheck, loss_value, pack_params,
                      unpack_params, vbgs_forward_backward)
from .gaussians import (GaussianSet, RawGaussianParams, constrain,
                        constrain_from_base, contribution, mahalanobis,
                        sq_mahalanobis)
from .image import (ImageMeta, MultiBandImage, axis_centers, grid_coords_flat,
                    pixel_center_coords)
from .metrics import MetricReport, evaluate, psnr, psnr_per_band, sam, ssim
from .render import (Direct, Rasterized, RenderPlan, Vbgs, eval_point,
                     plan_for_points, plan_for_scale, render, render_direct,
                     render_rasterized, render_vbgs)
from .resample import resize, resize_array
from .sde import Mlp, SdeWeights, sde_forward, sde_random_init
from .selection import (GaussianGridIndex, SelectionResult, batch_brute_force,
                        batch_top_k, brute_force_top_k, build_index, top_k)
from .synthetic import make_smooth_image

__version__ = "0.1.0"
