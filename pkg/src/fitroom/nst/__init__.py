"""Neural style transfer by gradient descent on pixels."""

from .extractor import (
    AvgPool,
    Conv,
    ExtractorError,
    FeatureExtractor,
    ReLU,
    load_extractor,
    reference_extractor,
)
from .objective import (
    LossTerms,
    NstConfig,
    Targets,
    compute_targets,
    content_loss,
    gram,
    loss_and_gradient,
    pixel_gradient,
    style_loss,
    total_loss,
    tv_grad,
    tv_loss,
)
from .optimize import NonFiniteLoss, NstResult, optimize, write_loss_csv

__all__ = [
    "AvgPool",
    "Conv",
    "ExtractorError",
    "FeatureExtractor",
    "LossTerms",
    "NonFiniteLoss",
    "NstConfig",
    "NstResult",
    "ReLU",
    "Targets",
    "compute_targets",
    "content_loss",
    "gram",
    "load_extractor",
    "loss_and_gradient",
    "optimize",
    "pixel_gradient",
    "reference_extractor",
    "style_loss",
    "total_loss",
    "tv_grad",
    "tv_loss",
    "write_loss_csv",
]
