"""Probe, optimize and comparatively evaluate agent skill packages."""

__version__ = "0.1.0"
TOOL_VERSION = f"skillevo/{__version__}"
