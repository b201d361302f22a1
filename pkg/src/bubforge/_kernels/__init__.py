"""Kernel backend selection.

The hot inner loops (conv patch gather/scatter, distance transform,
thinning, labeling, flooding, reconstruction) exist twice: a compiled Cython
extension and a pure numpy fallback. The extension is used when importable;
set ``BUBFORGE_PURE=1`` to force the fallback. Both backends return
identical arrays.
"""

import os

from . import pure

if os.environ.get("BUBFORGE_PURE", "0") == "1":
    _impl = pure
    BACKEND = "pure"
else:
    try:
        from . import _native as _impl  # type: ignore[no-redef]

        BACKEND = "native"
    except ImportError:
        _impl = pure
        BACKEND = "pure"

im2col = _impl.im2col
col2im = _impl.col2im
edt_sq = _impl.edt_sq
label_components = _impl.label_components
thin = _impl.thin
reconstruct = _impl.reconstruct
watershed_flood = _impl.watershed_flood

__all__ = [
    "BACKEND",
    "col2im",
    "edt_sq",
    "im2col",
    "label_components",
    "pure",
    "reconstruct",
    "thin",
    "watershed_flood",
]
