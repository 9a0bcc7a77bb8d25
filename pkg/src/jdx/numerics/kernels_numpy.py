"""Pure-numpy twin of kernels_numba.

Convolutions are decomposed into one tensordot per kernel offset, so cost is
kh*kw BLAS calls instead of a compiled loop nest.  Max pooling gradient goes
to the first maximal element in row-major window order, matching the numba
kernel's tie rule.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pad2d(x, ph, pw):
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def conv2d_forward(x, w, ph, pw, sh, sw):
    xp = _pad2d(x, ph, pw)
    n_b, c_in, hp, wp = xp.shape
    c_out, _, kh, kw = w.shape
    oh = (hp - kh) // sh + 1
    ow = (wp - kw) // sw + 1
    acc = np.zeros((n_b, oh, ow, c_out), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            sl = xp[:, :, i:i + oh * sh:sh, j:j + ow * sw:sw]
            # (N,Ci,OH,OW) x (Co,Ci) -> (N,OH,OW,Co)
            acc += np.tensordot(sl, w[:, :, i, j], axes=([1], [1]))
    return np.ascontiguousarray(acc.transpose(0, 3, 1, 2))


def conv2d_backward(x, w, gout, ph, pw, sh, sw):
    xp = _pad2d(x, ph, pw)
    c_out, c_in, kh, kw = w.shape
    oh, ow = gout.shape[2], gout.shape[3]
    gxp = np.zeros_like(xp)
    gw = np.empty_like(w)
    for i in range(kh):
        for j in range(kw):
            sl = xp[:, :, i:i + oh * sh:sh, j:j + ow * sw:sw]
            # (N,Ci,OH,OW) x (N,Co,OH,OW) summed over N,OH,OW -> (Ci,Co)
            gw[:, :, i, j] = np.tensordot(sl, gout, axes=([0, 2, 3], [0, 2, 3])).T
            # (N,Co,OH,OW) x (Co,Ci) -> (N,OH,OW,Ci)
            contrib = np.tensordot(gout, w[:, :, i, j], axes=([1], [0]))
            gxp[:, :, i:i + oh * sh:sh, j:j + ow * sw:sw] += contrib.transpose(0, 3, 1, 2)
    h, w_in = x.shape[2], x.shape[3]
    return gxp[:, :, ph:ph + h, pw:pw + w_in].copy(), gw


def maxpool_forward(x, kh, kw, sh, sw):
    n_b, c_n, h, w = x.shape
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    oh, ow = win.shape[2], win.shape[3]
    flat = win.reshape(n_b, c_n, oh, ow, kh * kw)
    local = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]
    # convert window-local argmax to flat input-plane index
    ys = np.arange(oh)[:, None] * sh
    zs = np.arange(ow)[None, :] * sw
    arg = (ys + local // kw) * w + (zs + local % kw)
    return np.ascontiguousarray(out), arg.astype(np.int64)


def maxpool_backward(gout, arg, h, w):
    n_b, c_n = gout.shape[0], gout.shape[1]
    gx = np.zeros((n_b, c_n, h * w), dtype=np.float64)
    flat_arg = arg.reshape(n_b, c_n, -1)
    np.add.at(gx, (np.arange(n_b)[:, None, None], np.arange(c_n)[None, :, None], flat_arg),
              gout.reshape(n_b, c_n, -1))
    return gx.reshape(n_b, c_n, h, w)
