"""Multiple-frame, two-stage survey estimation of mean crop yield."""

from mfyield.design import (
    DesignSpec,
    FrameDesign,
    SampleDraw,
    draw_sample,
    enumerate_samples,
    impose_shared_sample,
    inclusion_probability,
    induce_sample,
)
from mfyield.estimate import (
    compare_combinations,
    mf_mean,
    mf_variance_est,
    mf_variance_population,
    percentage_deviation,
    relative_efficiency,
    sf_from_summary,
)
from mfyield.frames import (
    DomainKey,
    Frame,
    Population,
    Psu,
    UnitRecord,
    build_population,
    domain_of,
)
from mfyield.weights import WeightTable, compute_weights, star_probability

__version__ = "0.1.0"

__all__ = [
    "DesignSpec",
    "DomainKey",
    "Frame",
    "FrameDesign",
    "Population",
    "Psu",
    "SampleDraw",
    "UnitRecord",
    "WeightTable",
    "build_population",
    "compare_combinations",
    "compute_weights",
    "domain_of",
    "draw_sample",
    "enumerate_samples",
    "impose_shared_sample",
    "inclusion_probability",
    "induce_sample",
    "mf_mean",
    "mf_variance_est",
    "mf_variance_population",
    "percentage_deviation",
    "relative_efficiency",
    "sf_from_summary",
    "star_probability",
]
