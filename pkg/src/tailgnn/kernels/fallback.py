"""Pure-numpy implementations of the hot convolution kernels.

Shapes follow the autodiff convention: sequences are (batch, length,
channels); the input arrives pre-padded so output length L satisfies
Lp = L + (kernel - 1) * dilation.
"""

import numpy as np

BACKEND = "numpy"


def conv1d_forward(xpad, w, bias, dilation):
    batch, lp, c_in = xpad.shape
    kernel, _, c_out = w.shape
    length = lp - (kernel - 1) * dilation
    out = np.broadcast_to(bias, (batch, length, c_out)).copy()
    for t in range(kernel):
        out += xpad[:, t * dilation:t * dilation + length, :] @ w[t]
    return out


def conv1d_backward(xpad, w, dout, dilation, need_dx=True):
    batch, lp, c_in = xpad.shape
    kernel, _, c_out = w.shape
    length = dout.shape[1]
    dxpad = np.zeros_like(xpad)
    dw = np.zeros_like(w)
    for t in range(kernel):
        lo = t * dilation
        seg = xpad[:, lo:lo + length, :]
        if need_dx:
            dxpad[:, lo:lo + length, :] += dout @ w[t].T
        dw[t] = np.tensordot(seg, dout, axes=([0, 1], [0, 1]))
    dbias = dout.sum(axis=(0, 1))
    return dxpad, dw, dbias
