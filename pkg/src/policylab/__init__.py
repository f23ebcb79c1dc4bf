"""policylab: a policy analytics workbench.

Governed dataset pipelines (ingest, validate, clean, annotate) combined with
a deterministic agent-based simulation engine for comparing policy options
against measurable criteria.
"""
from __future__ import annotations

__version__ = "0.1.0"

from .errors import WorkbenchError

__all__ = ["WorkbenchError", "__version__"]
