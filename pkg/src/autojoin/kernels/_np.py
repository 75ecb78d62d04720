"""Pure-numpy kernels. Summation order mirrors ``_nb`` so both paths agree."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

HUE_SCALE = 0.5  # degrees to 8-bit hue units, so H lies in [0, 180)


def im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
    return cols.reshape(n * oh * ow, c * kh * kw)


def col2im(cols, x_shape, kh, kw, stride, pad):
    n, c, h, w = x_shape
    hp, wp = h + 2 * pad, w + 2 * pad
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    cols6 = cols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols6[..., i, j]
    if pad:
        out = out[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(out)


def rgb_to_hsv(img):
    rgb = img.astype(np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    c = v - rgb.min(axis=-1)
    safe_c = np.where(c > 0, c, 1.0)
    s = np.where(v > 0, c / np.where(v > 0, v, 1.0) * 255.0, 0.0)
    hue = np.where(
        v == r,
        np.mod((g - b) / safe_c, 6.0),
        np.where(v == g, (b - r) / safe_c + 2.0, (r - g) / safe_c + 4.0),
    )
    hue = np.where(c > 0, hue * 60.0, 0.0)
    out = np.empty(rgb.shape, dtype=np.float64)
    out[..., 0] = hue * HUE_SCALE
    out[..., 1] = s
    out[..., 2] = v
    return out


def hsv_to_rgb(hsv):
    hsv = hsv.astype(np.float64)
    hue = hsv[..., 0] / HUE_SCALE
    s = hsv[..., 1]
    v = hsv[..., 2]
    c = v * s / 255.0
    hp = np.mod(hue, 360.0) / 60.0
    x = c * (1.0 - np.abs(np.mod(hp, 2.0) - 1.0))
    m = v - c
    sector = np.minimum(hp.astype(np.int64), 5)
    zero = np.zeros_like(c)
    # rows: sector 0..5, columns: r, g, b
    table_r = np.stack([c, x, zero, zero, x, c])
    table_g = np.stack([x, c, c, x, zero, zero])
    table_b = np.stack([zero, zero, x, c, c, x])
    idx = sector[None]
    out = np.empty(hsv.shape, dtype=np.float64)
    out[..., 0] = np.take_along_axis(table_r, idx, 0)[0] + m
    out[..., 1] = np.take_along_axis(table_g, idx, 0)[0] + m
    out[..., 2] = np.take_along_axis(table_b, idx, 0)[0] + m
    return out


def blur_separable(img, taps):
    """Convolve an HxWxC image with ``taps`` along both axes, clamping at edges."""
    r = len(taps) // 2
    h, w = img.shape[:2]
    src = img.astype(np.float64)
    padded = np.pad(src, ((r, r), (0, 0), (0, 0)), mode="edge")
    tmp = np.zeros_like(src)
    for k in range(len(taps)):
        tmp += taps[k] * padded[k:k + h]
    padded = np.pad(tmp, ((0, 0), (r, r), (0, 0)), mode="edge")
    out = np.zeros_like(src)
    for k in range(len(taps)):
        out += taps[k] * padded[:, k:k + w]
    return out


def remap_bilinear(img, xs, ys):
    h, w = img.shape[:2]
    src = img.astype(np.float64)
    x = np.clip(xs, 0.0, w - 1.0)
    y = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    top = (1.0 - fx) * src[y0, x0] + fx * src[y0, x1]
    bot = (1.0 - fx) * src[y1, x0] + fx * src[y1, x1]
    return (1.0 - fy) * top + fy * bot
