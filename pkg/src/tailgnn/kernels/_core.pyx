# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled dilated-convolution kernels (hot path of the labeller network)."""

import numpy as np

cimport numpy as cnp

BACKEND = "cython"


def conv1d_forward(cnp.float64_t[:, :, ::1] xpad,
                   cnp.float64_t[:, :, ::1] w,
                   cnp.float64_t[::1] bias,
                   int dilation):
    cdef Py_ssize_t batch = xpad.shape[0]
    cdef Py_ssize_t lp = xpad.shape[1]
    cdef Py_ssize_t c_in = xpad.shape[2]
    cdef Py_ssize_t kernel = w.shape[0]
    cdef Py_ssize_t length = lp - (kernel - 1) * dilation
    cdef Py_ssize_t c_out = w.shape[2]

    out_arr = np.empty((batch, length, c_out), dtype=np.float64)
    cdef cnp.float64_t[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, i, t, ci, co
    cdef double xv

    with nogil:
        for b in range(batch):
            for i in range(length):
                for co in range(c_out):
                    out[b, i, co] = bias[co]
                for t in range(kernel):
                    for ci in range(c_in):
                        xv = xpad[b, i + t * dilation, ci]
                        if xv != 0.0:
                            for co in range(c_out):
                                out[b, i, co] += xv * w[t, ci, co]
    return out_arr


def conv1d_backward(cnp.float64_t[:, :, ::1] xpad,
                    cnp.float64_t[:, :, ::1] w,
                    cnp.float64_t[:, :, ::1] dout,
                    int dilation):
    cdef Py_ssize_t batch = xpad.shape[0]
    cdef Py_ssize_t c_in = xpad.shape[2]
    cdef Py_ssize_t kernel = w.shape[0]
    cdef Py_ssize_t length = dout.shape[1]
    cdef Py_ssize_t c_out = w.shape[2]

    dxpad_arr = np.zeros((batch, xpad.shape[1], c_in), dtype=np.float64)
    dw_arr = np.zeros((kernel, c_in, c_out), dtype=np.float64)
    dbias_arr = np.zeros(c_out, dtype=np.float64)
    cdef cnp.float64_t[:, :, ::1] dxpad = dxpad_arr
    cdef cnp.float64_t[:, :, ::1] dw = dw_arr
    cdef cnp.float64_t[::1] dbias = dbias_arr
    cdef Py_ssize_t b, i, t, ci, co
    cdef double g, acc, xv

    with nogil:
        for b in range(batch):
            for i in range(length):
                for co in range(c_out):
                    dbias[co] += dout[b, i, co]
                for t in range(kernel):
                    for ci in range(c_in):
                        acc = 0.0
                        xv = xpad[b, i + t * dilation, ci]
                        for co in range(c_out):
                            g = dout[b, i, co]
                            acc += g * w[t, ci, co]
                            dw[t, ci, co] += xv * g
                        dxpad[b, i + t * dilation, ci] += acc
    return dxpad_arr, dw_arr, dbias_arr
