"""Numerical certificates against polynomial first integrals near transverse homoclinic orbits."""

__version__ = "0.1.0"

from .errors import NonintError  # noqa: E402

__all__ = ["NonintError", "__version__"]
