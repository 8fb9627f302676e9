"""Cyclic-spectral transforms and Shapley attribution for vibration classifiers."""

from .errors import (
    CapacityError,
    ConfigurationError,
    CsShapError,
    FormatError,
    InvalidInputError,
    TrainingError,
)
from .signal import (
    Spectrum,
    STFTGrid,
    TimeSeries,
    WindowSpec,
    add_noise,
    analytic_envelope,
    envelope_spectrum,
    istft,
    normalize_meanstd,
    spectrum,
    stft,
)
from .cstransform import (
    CSRepresentation,
    cs_forward,
    cs_inverse,
    cs_magnitude,
    load_cs,
    save_cs,
)
from .shapley import (
    CooperativeGame,
    ShapleyResult,
    exact_shapley,
    sampled_shapley,
)
from .domains import (
    DOMAIN_KINDS,
    MASKING_WINDOW,
    BackgroundSet,
    CoalitionPartition,
    cell_containing,
    default_partition,
    domain_forward,
    domain_roundtrip,
    draw_background,
    mask_and_invert,
    zero_background,
)
from .simulate import (
    ClassSpec,
    Dataset,
    DatasetSpec,
    ImpulseComponentSpec,
    benchmark_spec,
    build_dataset,
    load_dataset,
    periodic_impulse,
    save_dataset,
    synthesize_sample,
)
from .attribution import (
    AttributionConfig,
    AttributionMap,
    attribute,
    build_masking_game,
    export_attribution_csv,
    export_attribution_json,
)

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "ConfigurationError",
    "CsShapError",
    "FormatError",
    "InvalidInputError",
    "TrainingError",
    "Spectrum",
    "STFTGrid",
    "TimeSeries",
    "WindowSpec",
    "add_noise",
    "analytic_envelope",
    "envelope_spectrum",
    "istft",
    "normalize_meanstd",
    "spectrum",
    "stft",
    "CSRepresentation",
    "cs_forward",
    "cs_inverse",
    "cs_magnitude",
    "load_cs",
    "save_cs",
    "CooperativeGame",
    "ShapleyResult",
    "exact_shapley",
    "sampled_shapley",
    "DOMAIN_KINDS",
    "MASKING_WINDOW",
    "BackgroundSet",
    "CoalitionPartition",
    "cell_containing",
    "default_partition",
    "domain_forward",
    "domain_roundtrip",
    "draw_background",
    "mask_and_invert",
    "zero_background",
    "ClassSpec",
    "Dataset",
    "DatasetSpec",
    "ImpulseComponentSpec",
    "benchmark_spec",
    "build_dataset",
    "load_dataset",
    "periodic_impulse",
    "save_dataset",
    "synthesize_sample",
    "AttributionConfig",
    "AttributionMap",
    "attribute",
    "build_masking_game",
    "export_attribution_csv",
    "export_attribution_json",
    "__version__",
]
