"""Speckle distribution fitting and cohort statistics for B-mode kidney ultrasound."""

__version__ = "0.1.0"

from .envelope_models import (  # noqa: E402
    FAMILY_ORDER,
    Burr,
    Gamma,
    IntensityGrid,
    Lomax,
    Nakagami,
    Pareto,
    Rayleigh,
    Rician,
    cdf,
    log_pdf,
    nakagami_to_gamma,
    pdf,
    rayleigh_as_nakagami,
    sample,
)
from .estimators import FitFailure, FitResult, fit_all  # noqa: E402
from .region_analysis import LabeledImage, Region, analyze_image, kl_divergence  # noqa: E402
