"""Transient stability assessment backend: LLM classifier tuned by IBCC."""

__version__ = "1.0.0"
