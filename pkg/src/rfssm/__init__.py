"""Sequential inference for random-feature GP state-space models.

Filters learn unknown transition and observation functions online: every
particle stream carries closed-form normal-inverse-Gamma posteriors over
random-feature weights, so propagation and weighting use Student's t
predictives.  Ensembles over a kernel dictionary combine members by their
posterior weights.
"""

from .alignment import align_to_guidance, fuse, procrustes_to_truth, svd_standardize
from .conjugate_blr import NIGBank, NIGState, StudentTParams, TMixture, nig_update, predictive_params
from .ensemble import Ensemble
from .errors import (
    ConfigError,
    DegenerateTrajectoryError,
    DegenerateWeightsError,
    InvalidSpecError,
    NumericalDegeneracyError,
    RfssmError,
    SchemaError,
)
from .gpdssm import DeepConfig, DeepMember
from .gpssm import FilterConfig, GpssmMember
from .spectral_features import FrequencySet, KernelSpec, build_dictionary, feature_map, sample_frequencies

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DeepConfig", "DeepMember", "DegenerateTrajectoryError", "DegenerateWeightsError",
    "Ensemble", "FilterConfig", "FrequencySet", "GpssmMember", "InvalidSpecError", "KernelSpec",
    "NIGBank", "NIGState", "NumericalDegeneracyError", "RfssmError", "SchemaError", "StudentTParams",
    "TMixture", "align_to_guidance", "build_dictionary", "feature_map", "fuse", "nig_update",
    "predictive_params", "procrustes_to_truth", "sample_frequencies", "svd_standardize",
]
