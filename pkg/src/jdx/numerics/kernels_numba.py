"""numba kernels for the spatial hot loops (conv2d, max_pool2d).

All kernels are serial and deterministic; unit-stride inner loops so numba
can vectorize.  Signatures mirror kernels_numpy exactly.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _pad2d(x, ph, pw):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=np.float64)
    out[:, :, ph:ph + h, pw:pw + w] = x
    return out


@njit(cache=True)
def conv2d_forward(x, w, ph, pw, sh, sw):
    xp = _pad2d(x, ph, pw)
    n_b, c_in, hp, wp = xp.shape
    c_out, _, kh, kw = w.shape
    oh = (hp - kh) // sh + 1
    ow = (wp - kw) // sw + 1
    out = np.zeros((n_b, c_out, oh, ow), dtype=np.float64)
    for n in range(n_b):
        for co in range(c_out):
            for ci in range(c_in):
                for i in range(kh):
                    for j in range(kw):
                        wv = w[co, ci, i, j]
                        for y in range(oh):
                            row = xp[n, ci, y * sh + i]
                            for z in range(ow):
                                out[n, co, y, z] += wv * row[z * sw + j]
    return out


@njit(cache=True)
def conv2d_backward(x, w, gout, ph, pw, sh, sw):
    xp = _pad2d(x, ph, pw)
    n_b, c_in, hp, wp = xp.shape
    c_out, _, kh, kw = w.shape
    oh = gout.shape[2]
    ow = gout.shape[3]
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for n in range(n_b):
        for co in range(c_out):
            for ci in range(c_in):
                for i in range(kh):
                    for j in range(kw):
                        wv = w[co, ci, i, j]
                        acc = 0.0
                        for y in range(oh):
                            grow = gout[n, co, y]
                            xrow = xp[n, ci, y * sh + i]
                            gxrow = gxp[n, ci, y * sh + i]
                            for z in range(ow):
                                g = grow[z]
                                gxrow[z * sw + j] += wv * g
                                acc += xrow[z * sw + j] * g
                        gw[co, ci, i, j] += acc
    h = x.shape[2]
    w_in = x.shape[3]
    return gxp[:, :, ph:ph + h, pw:pw + w_in].copy(), gw


@njit(cache=True)
def maxpool_forward(x, kh, kw, sh, sw):
    n_b, c_n, h, w = x.shape
    oh = (h - kh) // sh + 1
    ow = (w - kw) // sw + 1
    out = np.empty((n_b, c_n, oh, ow), dtype=np.float64)
    arg = np.empty((n_b, c_n, oh, ow), dtype=np.int64)
    for n in range(n_b):
        for c in range(c_n):
            for y in range(oh):
                for z in range(ow):
                    best = -np.inf
                    bi = 0
                    for i in range(kh):
                        ih = y * sh + i
                        for j in range(kw):
                            iw = z * sw + j
                            v = x[n, c, ih, iw]
                            if v > best:
                                best = v
                                bi = ih * w + iw
                    out[n, c, y, z] = best
                    arg[n, c, y, z] = bi
    return out, arg


@njit(cache=True)
def maxpool_backward(gout, arg, h, w):
    n_b, c_n, oh, ow = gout.shape
    gx = np.zeros((n_b, c_n, h, w), dtype=np.float64)
    for n in range(n_b):
        for c in range(c_n):
            plane = gx[n, c].reshape(h * w)
            for y in range(oh):
                for z in range(ow):
                    plane[arg[n, c, y, z]] += gout[n, c, y, z]
    return gx
