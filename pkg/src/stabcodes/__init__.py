"""Stabilizing erasure codes for feedback control over packet-erasure channels."""

from . import lti, mdc, quantizer, sim, stability

__all__ = ["lti", "mdc", "quantizer", "sim", "stability"]
__version__ = "0.1.0"
