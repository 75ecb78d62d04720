"""numba kernels; same signatures and arithmetic order as ``_np``."""

import numpy as np
from numba import njit

HUE_SCALE = 0.5  # degrees to 8-bit hue units, so H lies in [0, 180)


@njit(cache=True)
def _im2col(x, kh, kw, stride, pad, oh, ow, cols):
    n, c, h, w = x.shape
    for b in range(n):
        for y in range(oh):
            y0 = y * stride - pad
            for xo in range(ow):
                x0 = xo * stride - pad
                row = (b * oh + y) * ow + xo
                inside = y0 >= 0 and x0 >= 0 and y0 + kh <= h and x0 + kw <= w
                col = 0
                for ch in range(c):
                    for i in range(kh):
                        yy = y0 + i
                        if inside:
                            for j in range(kw):
                                cols[row, col + j] = x[b, ch, yy, x0 + j]
                        else:
                            for j in range(kw):
                                xx = x0 + j
                                if 0 <= yy < h and 0 <= xx < w:
                                    cols[row, col + j] = x[b, ch, yy, xx]
                                else:
                                    cols[row, col + j] = 0.0
                        col += kw


def im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols = np.empty((n * oh * ow, c * kh * kw), dtype=x.dtype)
    _im2col(np.ascontiguousarray(x), kh, kw, stride, pad, oh, ow, cols)
    return cols


@njit(cache=True)
def _col2im(cols, out, kh, kw, stride, pad, oh, ow):
    n, c, h, w = out.shape
    # Output positions run backwards so every pixel sums its kernel taps in
    # ascending (i, j) order, the same order as the numpy path.
    for b in range(n):
        for y in range(oh - 1, -1, -1):
            for xo in range(ow - 1, -1, -1):
                row = (b * oh + y) * ow + xo
                col = 0
                for ch in range(c):
                    for i in range(kh):
                        yy = y * stride + i - pad
                        for j in range(kw):
                            xx = xo * stride + j - pad
                            if 0 <= yy < h and 0 <= xx < w:
                                out[b, ch, yy, xx] += cols[row, col]
                            col += 1


def col2im(cols, x_shape, kh, kw, stride, pad):
    n, c, h, w = x_shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, c, h, w), dtype=cols.dtype)
    _col2im(np.ascontiguousarray(cols), out, kh, kw, stride, pad, oh, ow)
    return out


@njit(cache=True)
def _rgb_to_hsv(rgb, out):
    h, w, _ = rgb.shape
    for y in range(h):
        for x in range(w):
            r = rgb[y, x, 0]
            g = rgb[y, x, 1]
            b = rgb[y, x, 2]
            v = max(r, g, b)
            c = v - min(r, g, b)
            s = c / v * 255.0 if v > 0 else 0.0
            if c > 0:
                if v == r:
                    hue = ((g - b) / c) % 6.0
                elif v == g:
                    hue = (b - r) / c + 2.0
                else:
                    hue = (r - g) / c + 4.0
                hue = hue * 60.0
            else:
                hue = 0.0
            out[y, x, 0] = hue * HUE_SCALE
            out[y, x, 1] = s
            out[y, x, 2] = v


def rgb_to_hsv(img):
    out = np.empty(img.shape, dtype=np.float64)
    _rgb_to_hsv(np.ascontiguousarray(img, dtype=np.float64), out)
    return out


@njit(cache=True)
def _hsv_to_rgb(hsv, out):
    h, w, _ = hsv.shape
    for y in range(h):
        for x in range(w):
            hue = hsv[y, x, 0] / HUE_SCALE
            s = hsv[y, x, 1]
            v = hsv[y, x, 2]
            c = v * s / 255.0
            hp = (hue % 360.0) / 60.0
            xx = c * (1.0 - abs(hp % 2.0 - 1.0))
            m = v - c
            sector = min(int(hp), 5)
            if sector == 0:
                r, g, b = c, xx, 0.0
            elif sector == 1:
                r, g, b = xx, c, 0.0
            elif sector == 2:
                r, g, b = 0.0, c, xx
            elif sector == 3:
                r, g, b = 0.0, xx, c
            elif sector == 4:
                r, g, b = xx, 0.0, c
            else:
                r, g, b = c, 0.0, xx
            out[y, x, 0] = r + m
            out[y, x, 1] = g + m
            out[y, x, 2] = b + m


def hsv_to_rgb(hsv):
    out = np.empty(hsv.shape, dtype=np.float64)
    _hsv_to_rgb(np.ascontiguousarray(hsv, dtype=np.float64), out)
    return out


@njit(cache=True)
def _blur_separable(src, taps, out):
    h, w, ch = src.shape
    r = taps.shape[0] // 2
    tmp = np.zeros_like(src)
    for k in range(taps.shape[0]):
        t = taps[k]
        for y in range(h):
            yy = min(max(y + k - r, 0), h - 1)
            for x in range(w):
                for c in range(ch):
                    tmp[y, x, c] += t * src[yy, x, c]
    for k in range(taps.shape[0]):
        t = taps[k]
        for y in range(h):
            for x in range(w):
                xx = min(max(x + k - r, 0), w - 1)
                for c in range(ch):
                    out[y, x, c] += t * tmp[y, xx, c]


def blur_separable(img, taps):
    src = np.ascontiguousarray(img, dtype=np.float64)
    out = np.zeros_like(src)
    _blur_separable(src, np.asarray(taps, dtype=np.float64), out)
    return out


@njit(cache=True)
def _remap_bilinear(src, xs, ys, out):
    h, w, ch = src.shape
    oh, ow = xs.shape
    for i in range(oh):
        for j in range(ow):
            x = min(max(xs[i, j], 0.0), w - 1.0)
            y = min(max(ys[i, j], 0.0), h - 1.0)
            x0 = int(np.floor(x))
            y0 = int(np.floor(y))
            x1 = min(x0 + 1, w - 1)
            y1 = min(y0 + 1, h - 1)
            fx = x - x0
            fy = y - y0
            for c in range(ch):
                top = (1.0 - fx) * src[y0, x0, c] + fx * src[y0, x1, c]
                bot = (1.0 - fx) * src[y1, x0, c] + fx * src[y1, x1, c]
                out[i, j, c] = (1.0 - fy) * top + fy * bot


def remap_bilinear(img, xs, ys):
    src = np.ascontiguousarray(img, dtype=np.float64)
    out = np.empty(xs.shape + (src.shape[2],), dtype=np.float64)
    _remap_bilinear(src, np.ascontiguousarray(xs, dtype=np.float64),
                    np.ascontiguousarray(ys, dtype=np.float64), out)
    return out
