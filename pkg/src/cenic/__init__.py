"""cenic: desk-scale neural image codec and decode-runtime benchmark toolkit."""

from .config import default_dtype, precision, set_default_dtype

__version__ = "0.1.0"

__all__ = ["default_dtype", "precision", "set_default_dtype", "__version__"]
