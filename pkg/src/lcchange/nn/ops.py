"""Array-level building blocks with hand-written backward passes.

All activations are channels-last ``(N, H, W, C)``; conv weights are
``(k, k, Cin, Cout)``.  Every forward returns ``(out, cache)`` and every
backward consumes that cache.
"""

import numpy as np


def conv2d_forward(x, w, b, stride=1):
    """Zero-padded ("same" at stride 1) 2-D convolution via im2col + GEMM."""
    n, h, wd, cin = x.shape
    k = w.shape[0]
    cout = w.shape[3]
    if k == 1 and stride == 1:
        cols = x.reshape(-1, cin)
        out = cols @ w.reshape(cin, cout)
        out += b
        return out.reshape(n, h, wd, cout), (x.shape, cols, w, stride)
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    cols = np.empty((n, ho, wo, k, k, cin), dtype=x.dtype)
    for ky in range(k):
        for kx in range(k):
            cols[:, :, :, ky, kx, :] = xp[:, ky:ky + stride * (ho - 1) + 1:stride,
                                          kx:kx + stride * (wo - 1) + 1:stride, :]
    cols = cols.reshape(-1, k * k * cin)
    out = cols @ w.reshape(-1, cout)
    out += b
    return out.reshape(n, ho, wo, cout), (x.shape, cols, w, stride)


def conv2d_backward(dout, cache, need_dx=True):
    xshape, cols, w, stride = cache
    n, h, wd, cin = xshape
    k = w.shape[0]
    cout = w.shape[3]
    d2 = dout.reshape(-1, cout)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = d2 @ w.reshape(-1, cout).T
    if k == 1 and stride == 1:
        return dcols.reshape(xshape), dw, db
    pad = (k - 1) // 2
    ho, wo = dout.shape[1], dout.shape[2]
    dcols = dcols.reshape(n, ho, wo, k, k, cin)
    dxp = np.zeros((n, h + 2 * pad, wd + 2 * pad, cin), dtype=dout.dtype)
    for ky in range(k):
        for kx in range(k):
            dxp[:, ky:ky + stride * (ho - 1) + 1:stride,
                kx:kx + stride * (wo - 1) + 1:stride, :] += dcols[:, :, :, ky, kx, :]
    return dxp[:, pad:pad + h, pad:pad + wd, :], dw, db


def relu_forward(x):
    np.maximum(x, 0, out=x)
    return x


def relu_backward(dout, out):
    return dout * (out > 0)


def upsample2_forward(x):
    return x.repeat(2, axis=1).repeat(2, axis=2)


def upsample2_backward(dout):
    n, h, w, c = dout.shape
    return dout.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=axis, keepdims=True)
    return z


def masked_cross_entropy(logits, y, mask):
    """Mean of ``-log softmax(logits)[y]`` over pixels where ``mask`` is set.

    ``logits`` is ``(N, H, W, K)``; ``y`` and ``mask`` are ``(N, H, W)``.
    Returns ``(loss, dlogits, n_valid)``.
    """
    k = logits.shape[-1]
    z = logits - logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    valid = mask.astype(bool)
    n_valid = int(valid.sum())
    picked = np.take_along_axis(logp, y[..., None].astype(np.intp), axis=-1)[..., 0]
    loss = -picked[valid].sum(dtype=np.float64) / n_valid
    d = np.exp(logp)
    d -= np.eye(k, dtype=logits.dtype)[y]
    d *= (valid / n_valid).astype(logits.dtype)[..., None]
    return loss, d, n_valid
