"""Dual sparse decomposition image denoising.

Learn an over-complete patch dictionary at a low error tolerance, split it
into principal and noise sub-dictionaries by how often each atom is used,
and rebuild images from the principal atoms only.
"""

from dualsparse.errors import (
    ContractError,
    CoverageError,
    DegenerateDataError,
    DimensionError,
    DualSparseError,
    FormatError,
    TerminationError,
)
from dualsparse.grouping import Group, GroupingConfig, euclidean_similarity, form_group, ppb_similarity
from dualsparse.image import Image
from dualsparse.metrics import MetricConfig, NoiseModel, add_awgn, add_speckle, psnr, ssim
from dualsparse.patches import PatchMatrix, aggregate, devectorize_patch, extract_patches, vectorize_patch
from dualsparse.pipeline import DenoiseConfig, DenoiseReport, denoise, denoise_single, despeckle
from dualsparse.sparse import SparseConfig, encode_all, init_dictionary, ksvd_learn, omp_encode, reconstruct
from dualsparse.subdict import (
    SubdictSplit,
    atom_frequencies,
    compute_split,
    histogram_cut,
    principal_reconstruct,
    sort_by_frequency,
    split,
)

__version__ = "0.1.0"

__all__ = [
    "ContractError",
    "CoverageError",
    "DegenerateDataError",
    "DenoiseConfig",
    "DenoiseReport",
    "DimensionError",
    "DualSparseError",
    "FormatError",
    "Group",
    "GroupingConfig",
    "Image",
    "MetricConfig",
    "NoiseModel",
    "PatchMatrix",
    "SparseConfig",
    "SubdictSplit",
    "TerminationError",
    "add_awgn",
    "add_speckle",
    "aggregate",
    "atom_frequencies",
    "compute_split",
    "denoise",
    "denoise_single",
    "despeckle",
    "devectorize_patch",
    "encode_all",
    "euclidean_similarity",
    "extract_patches",
    "form_group",
    "histogram_cut",
    "init_dictionary",
    "ksvd_learn",
    "omp_encode",
    "ppb_similarity",
    "principal_reconstruct",
    "psnr",
    "reconstruct",
    "sort_by_frequency",
    "split",
    "ssim",
    "vectorize_patch",
]
