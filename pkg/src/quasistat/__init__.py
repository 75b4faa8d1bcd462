"""Local quasi-stationarity analysis of non-stationary MIMO channels."""

__version__ = "0.1.0"

# ruff: noqa: E402
from .channel import (
    ChannelTensor,
    PhaseOffsets,
    SamplingGrid,
    SubArraySelection,
    apply_noise_floor,
    apply_phase_offsets,
    decode_container,
    encode_container,
    make_tensor,
    normalize_copolarized,
    read_container,
    select_subarray,
    write_container,
)
from .errors import (
    ConfigError,
    DataError,
    DegenerateBlockWarning,
    DegenerateThresholdWarning,
    FormatError,
    InsufficientData,
    NumericalError,
    QuasiStatError,
    UndefinedMeasure,
)
from .lqs import (
    DuReport,
    LqsResult,
    MeasureCurve,
    average_measure,
    du_check,
    extract_lqs,
    measure_correlation,
)
from .measures import (
    EstimatorConfig,
    MeasureKind,
    MeasurePair,
    approx_mse,
    approx_relative_mse,
    cmd,
    cmd_algorithmic_decomposition,
    collinearity_psd,
    estimate_corr_track,
    exact_mse,
    exact_relative_mse,
    relative_snr,
)
from .spectral import (
    DpssBank,
    GlsfEstimate,
    dpss_windows,
    estimate_glsf,
    make_dpss_bank,
    marginal_delay,
    marginal_doppler,
)
from .synth import ScattererCluster, SteeringModel, generate, ground_truth_psd

__all__ = [
    "__version__",
    "ChannelTensor",
    "PhaseOffsets",
    "SamplingGrid",
    "SubArraySelection",
    "apply_noise_floor",
    "apply_phase_offsets",
    "decode_container",
    "encode_container",
    "make_tensor",
    "normalize_copolarized",
    "read_container",
    "select_subarray",
    "write_container",
    "ConfigError",
    "DataError",
    "DegenerateBlockWarning",
    "DegenerateThresholdWarning",
    "FormatError",
    "InsufficientData",
    "NumericalError",
    "QuasiStatError",
    "UndefinedMeasure",
    "DuReport",
    "LqsResult",
    "MeasureCurve",
    "average_measure",
    "du_check",
    "extract_lqs",
    "measure_correlation",
    "EstimatorConfig",
    "MeasureKind",
    "MeasurePair",
    "approx_mse",
    "approx_relative_mse",
    "cmd",
    "cmd_algorithmic_decomposition",
    "collinearity_psd",
    "estimate_corr_track",
    "exact_mse",
    "exact_relative_mse",
    "relative_snr",
    "DpssBank",
    "GlsfEstimate",
    "dpss_windows",
    "estimate_glsf",
    "make_dpss_bank",
    "marginal_delay",
    "marginal_doppler",
    "ScattererCluster",
    "SteeringModel",
    "generate",
    "ground_truth_psd",
]
