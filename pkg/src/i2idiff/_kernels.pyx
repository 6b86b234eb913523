# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled im2col / col2im kernels for NCHW convolution.

These are the hot inner loops of every forward and backward convolution.
The pure-numpy fallback in ``i2idiff.nn.kernels_py`` implements the same
contracts with identical floating-point accumulation order, so results are
bit-identical between backends.
"""

import numpy as np

cimport numpy as cnp

ctypedef fused floating:
    float
    double


def im2col(floating[:, :, :, ::1] xp, int kh, int kw, int sy, int sx,
           int dy, int dx):
    """Extract convolution patches from a padded NCHW tensor.

    Returns an array of shape (B, C*kh*kw, Ho*Wo) where row (c*kh + ky)*kw + kx
    holds the input values seen by kernel tap (ky, kx) for channel c.
    """
    cdef Py_ssize_t B = xp.shape[0], C = xp.shape[1]
    cdef Py_ssize_t Hp = xp.shape[2], Wp = xp.shape[3]
    cdef Py_ssize_t Ho = (Hp - (dy * (kh - 1) + 1)) // sy + 1
    cdef Py_ssize_t Wo = (Wp - (dx * (kw - 1) + 1)) // sx + 1
    cdef Py_ssize_t b, c, ky, kx, oy, ox, row

    dtype = np.float32 if floating is float else np.float64
    cols_arr = np.empty((B, C * kh * kw, Ho * Wo), dtype=dtype)
    cdef floating[:, :, ::1] cols = cols_arr

    for b in range(B):
        for c in range(C):
            for ky in range(kh):
                for kx in range(kw):
                    row = (c * kh + ky) * kw + kx
                    for oy in range(Ho):
                        for ox in range(Wo):
                            cols[b, row, oy * Wo + ox] = \
                                xp[b, c, ky * dy + oy * sy, kx * dx + ox * sx]
    return cols_arr


def col2im(floating[:, :, ::1] cols, Py_ssize_t C, Py_ssize_t Hp,
           Py_ssize_t Wp, int kh, int kw, int sy, int sx, int dy, int dx):
    """Scatter-add patch columns back onto a padded NCHW tensor.

    Adjoint of :func:`im2col`; overlapping taps accumulate. Contributions are
    added in ascending (ky, kx) order per output element, matching the numpy
    fallback exactly.
    """
    cdef Py_ssize_t B = cols.shape[0]
    cdef Py_ssize_t Ho = (Hp - (dy * (kh - 1) + 1)) // sy + 1
    cdef Py_ssize_t Wo = (Wp - (dx * (kw - 1) + 1)) // sx + 1
    cdef Py_ssize_t b, c, ky, kx, oy, ox, row

    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((B, C, Hp, Wp), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr

    for ky in range(kh):
        for kx in range(kw):
            for b in range(B):
                for c in range(C):
                    row = (c * kh + ky) * kw + kx
                    for oy in range(Ho):
                        for ox in range(Wo):
                            out[b, c, ky * dy + oy * sy, kx * dx + ox * sx] += \
                                cols[b, row, oy * Wo + ox]
    return out_arr
