"""Hot loops behind the convolution primitive.

Column layout used throughout: ``cols[(c*kh + i)*kw + j, (n*oh + y)*ow + x]``,
so a convolution is a single GEMM of the flattened kernel against ``cols``.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .._accel import njit, pick


def conv_output_size(size, k, stride):
    return (size - k) // stride + 1


@njit
def _im2col_nb(x, kh, kw, stride):
    n, c, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    cols = np.empty((c * kh * kw, n * oh * ow))
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                crow = cols[(ci * kh + i) * kw + j]
                for b in range(n):
                    base = b * oh * ow
                    for y in range(oh):
                        xrow = x[b, ci, y * stride + i]
                        o = base + y * ow
                        for xx in range(ow):
                            crow[o + xx] = xrow[xx * stride + j]
    return cols


def _im2col_np(x, kh, kw, stride):
    n, c, h, w = x.shape
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    # [n, c, oh, ow, kh, kw] -> [c, kh, kw, n, oh, ow]
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(c * kh * kw, n * oh * ow)


@njit
def _col2im_nb(cols, n, c, h, w, kh, kw, stride):
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    out = np.zeros((n, c, h, w))
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                row = (ci * kh + i) * kw + j
                for b in range(n):
                    base = b * oh * ow
                    for y in range(oh):
                        yy = y * stride + i
                        for xx in range(ow):
                            out[b, ci, yy, xx * stride + j] += cols[row, base + y * ow + xx]
    return out


def _col2im_np(cols, n, c, h, w, kh, kw, stride):
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    blocks = cols.reshape(c, kh, kw, n, oh, ow).transpose(3, 0, 1, 2, 4, 5)
    out = np.zeros((n, c, h, w))
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * (oh - 1) + 1:stride, j:j + stride * (ow - 1) + 1:stride] += blocks[:, :, i, j]
    return out


im2col_numba, im2col_numpy = _im2col_nb, _im2col_np
col2im_numba, col2im_numpy = _col2im_nb, _col2im_np

# The strided-view copy is memory bound and already beats the compiled loop
# (see benchmarks/bench_kernels.py), so both paths share it.
im2col = _im2col_np
col2im = pick(_col2im_nb, _col2im_np)


def bilinear_weights(n_in, n_out):
    """Interpolation matrix ``R`` (n_out x n_in) for half-pixel-centred bilinear resampling.

    Resizing a 2D array is then ``Ry @ a @ Rx.T``; same-size resizing is the identity.
    """
    r = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for o in range(n_out):
        src = (o + 0.5) * scale - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        t = src - lo
        r[o, lo] += 1.0 - t
        r[o, hi] += t
    return r
