"""bubforge: labeled synthetic bubbly-flow image generation.

Pipeline: render or extract single-bubble training patches, train a
feature-conditioned adversarial generator on them, pre-generate a searchable
bubble database, then assemble physically constrained flow scenes with full
ground-truth export.
"""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
