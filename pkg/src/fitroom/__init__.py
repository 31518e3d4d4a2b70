"""Image-based virtual fitting room: detection geometry and losses, neural
style transfer, detection metrics, annotation ingestion and compositing."""

__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402
