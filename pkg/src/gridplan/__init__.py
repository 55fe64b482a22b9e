"""Planning studies for renewable integration on small transmission cases."""

__version__ = "0.1.0"

from .grid_model import GridCase, load_case, load_fixture, save_case, validate  # noqa: E402

__all__ = ["GridCase", "load_case", "load_fixture", "save_case", "validate", "__version__"]
