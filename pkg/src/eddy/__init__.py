"""Marginal-preserving particle guidance (EDDY) for diffusion and flow-matching samplers."""

__version__ = "0.1.0"
REPORT_SCHEMA_VERSION = "1.0"
