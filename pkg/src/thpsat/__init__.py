"""Huge-page aware memory for CDCL SAT solving, with TLB models and a paired benchmark harness."""

__version__ = "0.1.0"
