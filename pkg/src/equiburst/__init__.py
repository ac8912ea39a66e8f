"""Rotation-translation equivariant convolutions and burst alignment/super-resolution."""

from ._validation import FormatError, InvalidArgument
from .align import AlignmentResult, SearchConfig, align_burst, align_features, align_loss, estimate_transform
from .burst import BurstSequence, read_burst, synthesize_burst, write_burst
from .conv import EquivNetSpec, group_conv, lift_conv, project_conv, relu, run_network
from .estimators import BurstAligner, BurstSuperResolver, EquivariantFeatureExtractor
from .filters import FilterBank, SteerableFilter, compute_constants, sample_filter_grid
from .fusion import MdtaParams, mdta_attention, mdta_fuse
from .grid import GroupFeatureMap, Image, LatentField, make_grid_image, pixel_shuffle, pixel_unshuffle
from .io import read_array, read_pfm, read_tensor, write_array, write_pfm, write_tensor
from .meter import SweepConfig, commutation_error, equivariance_error, run_sweep
from .reconstruct import bicubic_baseline, psnr, reconstruct, ssim
from .transforms import AffineTransform, compose, invert, warp_feature, warp_image

__version__ = "0.1.0"
