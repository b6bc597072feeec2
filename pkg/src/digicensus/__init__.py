"""Neighborhood features from point-event data for house price models."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("digicensus")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.1.0"

SNAPSHOT_SCHEMA_VERSION = 1
