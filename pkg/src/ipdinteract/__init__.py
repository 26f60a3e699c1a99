"""Treatment-covariate interactions in individual participant data meta-analysis."""

__version__ = "0.1.0"
