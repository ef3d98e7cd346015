"""Pitch-level bang data: ingestion, descriptive tests, and mixed models."""

from importlib import resources

__version__ = "0.1.0"


def bundled_data_path():
    """Path to the packaged pitch-level CSV."""
    return resources.files(__name__) / "data" / "astros_bangs_2017.csv"


def bundled_schema_path():
    """Path to the packaged schema JSON."""
    return resources.files(__name__) / "data" / "schema.json"
