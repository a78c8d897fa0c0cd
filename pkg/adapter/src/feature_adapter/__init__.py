"""feature-adapter: bridges real VQA data to the triplet engine."""

__version__ = "0.1.0"

from .encoder import CrossModalEncoder, make_test_encoder
from .errors import ExportError
from .export import RawRegionFeatures, export_features, load_source

__all__ = [
    "CrossModalEncoder",
    "ExportError",
    "RawRegionFeatures",
    "export_features",
    "load_source",
    "make_test_encoder",
]
