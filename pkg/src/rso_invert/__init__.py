"""Synthesis of degraded RSO imagery and its recovery by Krylov-projected
Tikhonov deconvolution, plus the metrics and pose math used to evaluate both."""

from .image import ImageGray, load_image, save_image, downsample, crop
from .epsf import (StarStamp, EffectivePsf, detect_stars, extract_stamps,
                   build_epsf, fit_star, sample_kernel, save_epsf, load_epsf)
from .degrade import DegradeConfig, DegradeRecord, convolve, bloom, degrade, gaussian_kernel
from .operator import ConvOperator, make_operator
from .solvers import (ArnoldiBasis, BidiagBasis, RegSolution, arnoldi, golub_kahan,
                      projected_tikhonov, discrepancy_select, arnoldi_tikhonov,
                      hybrid_gmres, gk_tikhonov)
from .metrics import MetricReport, DistributionSummary, mse, psnr, psnr_from_mse, ssim, summarize
from .rotations import (EULER_CONVENTION, EulerXYZ, Rotation, euler_to_matrix,
                        matrix_to_euler, svd_orthogonalize, geodesic_angle, grid_labels)
from .dataset import SampleRecord, Manifest, generate, split, validate, save_manifest, load_manifest

__version__ = "0.1.0"
