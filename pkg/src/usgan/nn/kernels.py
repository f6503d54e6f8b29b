"""2-D convolution kernels: numba hot path with a pure-numpy fallback.

All tensors are NCHW. ``conv2d_forward`` / ``conv2d_backward`` implement
cross-correlation (the deep-learning convention) with symmetric zero
padding and stride 1 or 2. Transposed convolution is expressed on top of
these in the layer module via input dilation.

Backend selection follows ``usgan.backend`` (env var USGAN_BACKEND).
"""

from __future__ import annotations

import numpy as np

from .. import backend


def _out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


# ---------------------------------------------------------------------------
# pure-numpy path (im2col + BLAS matmul)
# ---------------------------------------------------------------------------

def _im2col(xp: np.ndarray, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    n, c, _, _ = xp.shape
    cols = np.empty((n, c, k, k, oh, ow), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + oh * stride : stride, j : j + ow * stride : stride]
    return cols


def conv2d_forward_numpy_cached(
    x: np.ndarray, w: np.ndarray, stride: int, pad: int
) -> tuple[np.ndarray, np.ndarray]:
    """Forward pass returning the im2col matrix for reuse in backward."""
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    oh, ow = _out_size(h, k, stride, pad), _out_size(wd, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = _im2col(xp, k, stride, oh, ow).reshape(n, c * k * k, oh * ow)
    y = np.matmul(w.reshape(f, c * k * k), cols)  # (N, F, OH*OW)
    return y.reshape(n, f, oh, ow), cols


def conv2d_forward_numpy(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    return conv2d_forward_numpy_cached(x, w, stride, pad)[0]


def conv2d_backward_numpy(
    x: np.ndarray,
    w: np.ndarray,
    dy: np.ndarray,
    stride: int,
    pad: int,
    cols: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    oh, ow = dy.shape[2], dy.shape[3]
    if cols is None:
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
        cols = _im2col(xp, k, stride, oh, ow).reshape(n, c * k * k, oh * ow)
    dy2 = dy.reshape(n, f, oh * ow)
    # batched GEMM per sample then reduce over the batch
    dw = np.matmul(dy2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(f, c, k, k)
    dcols = np.matmul(w.reshape(f, c * k * k).T, dy2)  # (N, CKK, P)
    dcols = dcols.reshape(n, c, k, k, oh, ow)
    ph, pw = h + 2 * pad, wd + 2 * pad
    dxp = np.zeros((n, c, ph, pw), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + oh * stride : stride, j : j + ow * stride : stride] += dcols[:, :, i, j]
    dx = dxp[:, :, pad : pad + h, pad : pad + wd] if pad else dxp
    return dx, dw


# ---------------------------------------------------------------------------
# numba path (direct loops; one writer per output element)
# ---------------------------------------------------------------------------

_NUMBA = backend.use_numba()
_NUMBA_CONV = backend.use_numba_conv()

if _NUMBA:
    from numba import njit

    @njit(cache=True, fastmath=False)
    def _conv2d_forward_nb(x, w, stride, pad, y):  # pragma: no cover - numba
        n, c, h, wd = x.shape
        f, _, k, _ = w.shape
        oh = y.shape[2]
        ow = y.shape[3]
        for ni in range(n):
            for fi in range(f):
                for oy in range(oh):
                    for ox in range(ow):
                        acc = 0.0
                        iy0 = oy * stride - pad
                        ix0 = ox * stride - pad
                        for ci in range(c):
                            for ky in range(k):
                                iy = iy0 + ky
                                if iy < 0 or iy >= h:
                                    continue
                                for kx in range(k):
                                    ix = ix0 + kx
                                    if ix < 0 or ix >= wd:
                                        continue
                                    acc += x[ni, ci, iy, ix] * w[fi, ci, ky, kx]
                        y[ni, fi, oy, ox] = acc

    @njit(cache=True, fastmath=False)
    def _conv2d_backward_dx_nb(w, dy, stride, pad, dx):  # pragma: no cover - numba
        n, c, h, wd = dx.shape
        f, _, k, _ = w.shape
        oh = dy.shape[2]
        ow = dy.shape[3]
        for ni in range(n):
            for ci in range(c):
                for iy in range(h):
                    for ix in range(wd):
                        acc = 0.0
                        for fi in range(f):
                            for ky in range(k):
                                t = iy + pad - ky
                                if t < 0 or t % stride != 0:
                                    continue
                                oy = t // stride
                                if oy >= oh:
                                    continue
                                for kx in range(k):
                                    s = ix + pad - kx
                                    if s < 0 or s % stride != 0:
                                        continue
                                    ox = s // stride
                                    if ox >= ow:
                                        continue
                                    acc += dy[ni, fi, oy, ox] * w[fi, ci, ky, kx]
                        dx[ni, ci, iy, ix] = acc

    @njit(cache=True, fastmath=False)
    def _conv2d_backward_dw_nb(x, dy, stride, pad, dw):  # pragma: no cover - numba
        n, c, h, wd = x.shape
        f, _, k, _ = dw.shape
        oh = dy.shape[2]
        ow = dy.shape[3]
        for fi in range(f):
            for ci in range(c):
                for ky in range(k):
                    for kx in range(k):
                        acc = 0.0
                        for ni in range(n):
                            for oy in range(oh):
                                iy = oy * stride - pad + ky
                                if iy < 0 or iy >= h:
                                    continue
                                for ox in range(ow):
                                    ix = ox * stride - pad + kx
                                    if ix < 0 or ix >= wd:
                                        continue
                                    acc += x[ni, ci, iy, ix] * dy[ni, fi, oy, ox]
                        dw[fi, ci, ky, kx] = acc


def conv2d_forward_numba(x, w, stride, pad):
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    oh, ow = _out_size(h, k, stride, pad), _out_size(wd, k, stride, pad)
    y = np.empty((n, f, oh, ow), dtype=x.dtype)
    _conv2d_forward_nb(np.ascontiguousarray(x), np.ascontiguousarray(w), stride, pad, y)
    return y


def conv2d_forward_numba_cached(x, w, stride, pad):
    return conv2d_forward_numba(x, w, stride, pad), None


def conv2d_backward_numba(x, w, dy, stride, pad, cols=None):
    dx = np.empty_like(x)
    dw = np.empty_like(w)
    xc = np.ascontiguousarray(x)
    wc = np.ascontiguousarray(w)
    dyc = np.ascontiguousarray(dy)
    _conv2d_backward_dx_nb(wc, dyc, stride, pad, dx)
    _conv2d_backward_dw_nb(xc, dyc, stride, pad, dw)
    return dx, dw


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if _NUMBA_CONV:
    conv2d_forward = conv2d_forward_numba
    conv2d_forward_cached = conv2d_forward_numba_cached
    conv2d_backward = conv2d_backward_numba
else:
    conv2d_forward = conv2d_forward_numpy
    conv2d_forward_cached = conv2d_forward_numpy_cached
    conv2d_backward = conv2d_backward_numpy
