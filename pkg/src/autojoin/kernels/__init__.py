"""Hot numeric kernels, dispatched to numba or numpy by ``AUTOJOIN_BACKEND``.

The backend is fixed at import time. Both implementations live side by side
so tests and the benchmark can call either one directly.
"""

from .. import _accel
from . import _np

BACKEND = _accel.active_backend()

if BACKEND == "numba":
    from . import _nb as _impl
else:
    _impl = _np

# A strided numpy copy beats the numba loop for im2col (see the benchmark);
# both are pure gathers, so the choice cannot change results.
im2col = _np.im2col
col2im = _impl.col2im
rgb_to_hsv = _impl.rgb_to_hsv
hsv_to_rgb = _impl.hsv_to_rgb
blur_separable = _impl.blur_separable
remap_bilinear = _impl.remap_bilinear

__all__ = [
    "BACKEND",
    "im2col",
    "col2im",
    "rgb_to_hsv",
    "hsv_to_rgb",
    "blur_separable",
    "remap_bilinear",
]
