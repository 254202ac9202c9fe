"""Compiled inner loops for sliding-window layers.

All kernels take an already zero-padded input and walk it in a fixed
(n, c, i, j, q, row, col) order, so every output element is reduced in the
same sequence on every run.
"""
import numpy as np
from numba import njit

SURROGATE = 0
SIGN = 1


@njit(cache=True)
def adder_forward(xp, w, stride, ho, wo):
    n_b, c_in, _, _ = xp.shape
    c_out, _, k, _ = w.shape
    y = np.zeros((n_b, c_out, ho, wo))
    for n in range(n_b):
        for c in range(c_in):
            for i in range(k):
                for j in range(k):
                    for q in range(c_out):
                        wv = w[q, c, i, j]
                        for r in range(ho):
                            row = xp[n, c, r * stride + i]
                            out = y[n, q, r]
                            for s in range(wo):
                                out[s] -= abs(row[s * stride + j] - wv)
    return y


@njit(cache=True)
def adder_backward(xp, w, dy, stride, mode):
    n_b, c_in, _, _ = xp.shape
    c_out, _, k, _ = w.shape
    ho, wo = dy.shape[2], dy.shape[3]
    dxp = np.zeros(xp.shape)
    dw = np.zeros(w.shape)
    for n in range(n_b):
        for c in range(c_in):
            for i in range(k):
                for j in range(k):
                    for q in range(c_out):
                        wv = w[q, c, i, j]
                        acc = 0.0
                        for r in range(ho):
                            row = xp[n, c, r * stride + i]
                            drow = dxp[n, c, r * stride + i]
                            g = dy[n, q, r]
                            for s in range(wo):
                                d = row[s * stride + j] - wv
                                if mode == SURROGATE:
                                    acc += g[s] * d
                                    if d > 1.0:
                                        drow[s * stride + j] -= g[s]
                                    elif d < -1.0:
                                        drow[s * stride + j] += g[s]
                                    else:
                                        drow[s * stride + j] -= g[s] * d
                                else:
                                    if d > 0.0:
                                        acc += g[s]
                                        drow[s * stride + j] -= g[s]
                                    elif d < 0.0:
                                        acc -= g[s]
                                        drow[s * stride + j] += g[s]
                        dw[q, c, i, j] += acc
    return dxp, dw


@njit(cache=True)
def conv_forward(xp, w, stride, ho, wo):
    n_b, c_in, _, _ = xp.shape
    c_out, _, k, _ = w.shape
    y = np.zeros((n_b, c_out, ho, wo))
    for n in range(n_b):
        for c in range(c_in):
            for i in range(k):
                for j in range(k):
                    for q in range(c_out):
                        wv = w[q, c, i, j]
                        for r in range(ho):
                            row = xp[n, c, r * stride + i]
                            out = y[n, q, r]
                            for s in range(wo):
                                out[s] += row[s * stride + j] * wv
    return y


@njit(cache=True)
def conv_backward(xp, w, dy, stride):
    n_b, c_in, _, _ = xp.shape
    c_out, _, k, _ = w.shape
    ho, wo = dy.shape[2], dy.shape[3]
    dxp = np.zeros(xp.shape)
    dw = np.zeros(w.shape)
    for n in range(n_b):
        for c in range(c_in):
            for i in range(k):
                for j in range(k):
                    for q in range(c_out):
                        wv = w[q, c, i, j]
                        acc = 0.0
                        for r in range(ho):
                            row = xp[n, c, r * stride + i]
                            drow = dxp[n, c, r * stride + i]
                            g = dy[n, q, r]
                            for s in range(wo):
                                acc += g[s] * row[s * stride + j]
                                drow[s * stride + j] += g[s] * wv
                        dw[q, c, i, j] += acc
    return dxp, dw
