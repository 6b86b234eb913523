"""Pure-numpy im2col / col2im, the fallback for the compiled extension.

Accumulation order in :func:`col2im` mirrors the Cython kernel (ascending
kernel tap (ky, kx) for every output element) so both backends produce
bit-identical results.
"""

import numpy as np


def _out_size(hp: int, wp: int, kh: int, kw: int, sy: int, sx: int,
              dy: int, dx: int) -> tuple[int, int]:
    ho = (hp - (dy * (kh - 1) + 1)) // sy + 1
    wo = (wp - (dx * (kw - 1) + 1)) // sx + 1
    return ho, wo


def im2col(xp: np.ndarray, kh: int, kw: int, sy: int, sx: int,
           dy: int, dx: int) -> np.ndarray:
    """Extract patches from padded (B, C, Hp, Wp) into (B, C*kh*kw, Ho*Wo)."""
    b, c, hp, wp = xp.shape
    ho, wo = _out_size(hp, wp, kh, kw, sy, sx, dy, dx)
    cols = np.empty((b, c, kh, kw, ho, wo), dtype=xp.dtype)
    for ky in range(kh):
        ys = ky * dy
        for kx in range(kw):
            xs = kx * dx
            cols[:, :, ky, kx] = xp[:, :, ys:ys + (ho - 1) * sy + 1:sy,
                                    xs:xs + (wo - 1) * sx + 1:sx]
    return cols.reshape(b, c * kh * kw, ho * wo)


def col2im(cols: np.ndarray, c: int, hp: int, wp: int, kh: int, kw: int,
           sy: int, sx: int, dy: int, dx: int) -> np.ndarray:
    """Scatter-add (B, C*kh*kw, Ho*Wo) columns back onto (B, C, Hp, Wp)."""
    b = cols.shape[0]
    ho, wo = _out_size(hp, wp, kh, kw, sy, sx, dy, dx)
    cols6 = cols.reshape(b, c, kh, kw, ho, wo)
    out = np.zeros((b, c, hp, wp), dtype=cols.dtype)
    for ky in range(kh):
        ys = ky * dy
        for kx in range(kw):
            xs = kx * dx
            out[:, :, ys:ys + (ho - 1) * sy + 1:sy,
                xs:xs + (wo - 1) * sx + 1:sx] += cols6[:, :, ky, kx]
    return out
