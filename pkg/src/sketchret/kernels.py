"""Hot numeric kernels: convolution patch shuffles and line rasterization.

Every kernel here has two interchangeable implementations:

* a loop version compiled with ``numba.njit`` (the default when numba is
  importable), and
* a pure-numpy version used as fallback.

The active backend is chosen at import time from the ``SKETCHRET_NUMBA``
environment variable (``0``/``false``/``off`` disables numba) and can be
switched at runtime with :func:`set_numba` (used by the tests and by
``benchmarks/bench_kernels.py`` to compare both paths).

All kernels operate on contiguous float64 arrays and are deterministic:
no fastmath, no parallel reductions.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAS_NUMBA = False


def _env_wants_numba() -> bool:
    return os.environ.get("SKETCHRET_NUMBA", "1").strip().lower() not in (
        "0",
        "false",
        "no",
        "off",
    )


_numba_enabled = HAS_NUMBA and _env_wants_numba()


def numba_active() -> bool:
    """True when the njit kernel path is in use."""
    return _numba_enabled


def set_numba(enabled: bool) -> bool:
    """Switch between the njit and pure-numpy kernel paths.

    Returns the previous setting. Enabling has no effect when numba is
    not installed.
    """
    global _numba_enabled
    previous = _numba_enabled
    _numba_enabled = bool(enabled) and HAS_NUMBA
    return previous


# ---------------------------------------------------------------------------
# loop implementations (compiled with njit when available)
# ---------------------------------------------------------------------------


def _im2col_loops(xp, kh, kw, sh, sw, oh, ow):
    b_n, c_n, _, _ = xp.shape
    cols = np.empty((b_n, oh * ow, c_n * kh * kw), dtype=np.float64)
    for b in range(b_n):
        for oy in range(oh):
            iy = oy * sh
            for ox in range(ow):
                ix = ox * sw
                r = oy * ow + ox
                k = 0
                for c in range(c_n):
                    for i in range(kh):
                        for j in range(kw):
                            cols[b, r, k] = xp[b, c, iy + i, ix + j]
                            k += 1
    return cols


def _col2im_loops(gcols, b_n, c_n, hp, wp, kh, kw, sh, sw, oh, ow):
    gxp = np.zeros((b_n, c_n, hp, wp), dtype=np.float64)
    for b in range(b_n):
        for oy in range(oh):
            iy = oy * sh
            for ox in range(ow):
                ix = ox * sw
                r = oy * ow + ox
                k = 0
                for c in range(c_n):
                    for i in range(kh):
                        for j in range(kw):
                            gxp[b, c, iy + i, ix + j] += gcols[b, r, k]
                            k += 1
    return gxp


def _draw_segments_loops(img, x0s, y0s, x1s, y1s):
    # Integer Bresenham, width 1; pixels outside the canvas are skipped.
    h, w = img.shape
    for s in range(x0s.shape[0]):
        x0 = x0s[s]
        y0 = y0s[s]
        x1 = x1s[s]
        y1 = y1s[s]
        dx = abs(x1 - x0)
        dy = -abs(y1 - y0)
        sx = 1 if x0 < x1 else -1
        sy = 1 if y0 < y1 else -1
        err = dx + dy
        while True:
            if 0 <= y0 < h and 0 <= x0 < w:
                img[y0, x0] = 1.0
            if x0 == x1 and y0 == y1:
                break
            e2 = 2 * err
            if e2 >= dy:
                err += dy
                x0 += sx
            if e2 <= dx:
                err += dx
                y0 += sy
    return img


if HAS_NUMBA:
    _im2col_nb = numba.njit(cache=True)(_im2col_loops)
    _col2im_nb = numba.njit(cache=True)(_col2im_loops)
    _draw_segments_nb = numba.njit(cache=True)(_draw_segments_loops)


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _im2col_np(xp, kh, kw, sh, sw, oh, ow):
    b_n, c_n, _, _ = xp.shape
    cols6 = np.empty((b_n, c_n, kh, kw, oh, ow), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols6[:, :, i, j] = xp[:, :, i : i + sh * oh : sh, j : j + sw * ow : sw]
    return np.ascontiguousarray(
        cols6.reshape(b_n, c_n * kh * kw, oh * ow).transpose(0, 2, 1)
    )


def _col2im_np(gcols, b_n, c_n, hp, wp, kh, kw, sh, sw, oh, ow):
    g6 = gcols.transpose(0, 2, 1).reshape(b_n, c_n, kh, kw, oh, ow)
    gxp = np.zeros((b_n, c_n, hp, wp), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i : i + sh * oh : sh, j : j + sw * ow : sw] += g6[:, :, i, j]
    return gxp


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------


def im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, oh: int, ow: int) -> np.ndarray:
    """Extract conv patches from a padded NCHW batch.

    Returns ``(B, oh*ow, C*kh*kw)`` with the patch axis ordered (c, i, j).
    """
    xp = np.ascontiguousarray(xp)
    if _numba_enabled:
        return _im2col_nb(xp, kh, kw, sh, sw, oh, ow)
    return _im2col_np(xp, kh, kw, sh, sw, oh, ow)


def col2im(
    gcols: np.ndarray,
    b_n: int,
    c_n: int,
    hp: int,
    wp: int,
    kh: int,
    kw: int,
    sh: int,
    sw: int,
    oh: int,
    ow: int,
) -> np.ndarray:
    """Scatter-add patch gradients back onto the padded input grid."""
    gcols = np.ascontiguousarray(gcols)
    if _numba_enabled:
        return _col2im_nb(gcols, b_n, c_n, hp, wp, kh, kw, sh, sw, oh, ow)
    return _col2im_np(gcols, b_n, c_n, hp, wp, kh, kw, sh, sw, oh, ow)


def draw_segments(
    img: np.ndarray,
    x0s: np.ndarray,
    y0s: np.ndarray,
    x1s: np.ndarray,
    y1s: np.ndarray,
) -> np.ndarray:
    """Draw 1px Bresenham segments with value 1.0 onto ``img`` in place."""
    x0s = np.ascontiguousarray(x0s, dtype=np.int64)
    y0s = np.ascontiguousarray(y0s, dtype=np.int64)
    x1s = np.ascontiguousarray(x1s, dtype=np.int64)
    y1s = np.ascontiguousarray(y1s, dtype=np.int64)
    if _numba_enabled:
        return _draw_segments_nb(img, x0s, y0s, x1s, y1s)
    return _draw_segments_loops(img, x0s, y0s, x1s, y1s)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, pad: int):
    """2D convolution on NCHW input.

    x: (B, C, H, W); w: (O, C, kh, kw); b: (O,).
    Returns (out (B, O, oh, ow), cols) where cols is reused by the backward
    pass.
    """
    b_n, c_n, h, w_in = x.shape
    o_n, _, kh, kw = w.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w_in + 2 * pad - kw) // stride + 1
    if pad > 0:
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    else:
        xp = x
    cols = im2col(xp, kh, kw, stride, stride, oh, ow)
    w2 = w.reshape(o_n, -1)
    out = cols.reshape(b_n * oh * ow, -1) @ w2.T
    out += b
    out = out.reshape(b_n, oh * ow, o_n).transpose(0, 2, 1).reshape(b_n, o_n, oh, ow)
    return out, cols


def conv2d_backward(
    gout: np.ndarray,
    cols: np.ndarray,
    x_shape: tuple,
    w: np.ndarray,
    stride: int,
    pad: int,
):
    """Gradients of conv2d_forward w.r.t. input, weight and bias."""
    b_n, c_n, h, w_in = x_shape
    o_n, _, kh, kw = w.shape
    _, _, oh, ow = gout.shape
    gflat = np.ascontiguousarray(gout.reshape(b_n, o_n, oh * ow).transpose(0, 2, 1)).reshape(
        b_n * oh * ow, o_n
    )
    gb = gflat.sum(axis=0)
    gw = (gflat.T @ cols.reshape(b_n * oh * ow, -1)).reshape(w.shape)
    gcols = (gflat @ w.reshape(o_n, -1)).reshape(b_n, oh * ow, -1)
    hp, wp = h + 2 * pad, w_in + 2 * pad
    gxp = col2im(gcols, b_n, c_n, hp, wp, kh, kw, stride, stride, oh, ow)
    if pad > 0:
        gx = gxp[:, :, pad:-pad, pad:-pad]
    else:
        gx = gxp
    return np.ascontiguousarray(gx), gw, gb
