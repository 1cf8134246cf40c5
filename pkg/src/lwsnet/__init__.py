"""Compact Inception-SE U-Net toolkit for shelf-edge segmentation."""

import os as _os

# Honor the worker cap before numpy first loads its BLAS thread pool.
_cap = _os.environ.get("LWSNET_THREADS")
if _cap:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _cap)

from .tensor import Tensor, no_grad  # noqa: E402
from .blocks import (  # noqa: E402
    InceptionConfig,
    SEConfig,
    build_inception_block,
    build_se_block,
    ref_config,
)
from .model import LWSNet, build_lwsnet, reference_shape_table  # noqa: E402
from .audit import audit_params, search_inception_config, LAYER_BUDGET, TOTAL_BUDGET  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "no_grad",
    "InceptionConfig",
    "SEConfig",
    "build_inception_block",
    "build_se_block",
    "ref_config",
    "LWSNet",
    "build_lwsnet",
    "reference_shape_table",
    "audit_params",
    "search_inception_config",
    "LAYER_BUDGET",
    "TOTAL_BUDGET",
    "__version__",
]
