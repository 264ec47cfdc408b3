"""Feature export and explanation rendering around the EPT/manifest/report file contracts."""

from .export import ExportJob, export_features
from .render import render_report

__all__ = ["ExportJob", "export_features", "render_report"]
