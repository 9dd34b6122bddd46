"""HTTP service wrapping the library; see :mod:`sptlab.service.app`."""

from .app import app, create_app

__all__ = ["app", "create_app"]
