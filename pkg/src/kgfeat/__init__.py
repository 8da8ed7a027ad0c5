"""Knowledge-guided automated feature engineering for tabular data."""

from importlib import resources as _resources

__version__ = "0.1.0"


def resource_path(name: str) -> str:
    """Absolute path of a bundled resource file (datasets, default KG)."""
    return str(_resources.files(__name__).joinpath("resources", name))
