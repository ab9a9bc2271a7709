"""Sentence-embedding exporter for the EMBV1 vector-store format."""

__version__ = "0.1.0"

from .exporter import ExportJob, ExportSummary, export_embeddings  # noqa: F401
