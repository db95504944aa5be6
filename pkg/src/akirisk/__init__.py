"""AKI risk prediction for rehospitalized patients from longitudinal EHR tables."""

__version__ = "0.1.0"
