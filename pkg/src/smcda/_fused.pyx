# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled core for one-hidden-layer networks.

Everything between the two dense GEMMs of an ensemble likelihood/gradient
evaluation, fused into a single pass over (datapoint, particle) pairs:
hidden bias and activation, output layer, log-softmax, the weighted
log-likelihood sum and the backward pass down to the hidden pre-activations.
"""

from libc.math cimport exp, log, tanh

import numpy as np


cdef enum:
    # scratch lives on the stack so the compiler can keep it in registers
    MAX_HIDDEN = 1024
    MAX_CLASSES = 256

MAX_HIDDEN_UNITS = MAX_HIDDEN
MAX_OUTPUTS = MAX_CLASSES


def mlp1_fused(double[:, ::1] A, double[:, ::1] b1, double[:, :, ::1] W2, double[:, ::1] b2,
               long long[::1] y, double[::1] c, int act, bint grad):
    """See :func:`smcda._fused_py.mlp1_fused` for the contract."""
    cdef Py_ssize_t M = A.shape[0]
    cdef Py_ssize_t J = W2.shape[0]
    cdef Py_ssize_t H = W2.shape[1]
    cdef Py_ssize_t C = W2.shape[2]
    if A.shape[1] != J * H or b1.shape[0] != J or b1.shape[1] != H or b2.shape[0] != J \
            or b2.shape[1] != C or y.shape[0] != M or c.shape[0] != M:
        raise ValueError("mlp1_fused: inconsistent shapes")
    if H > MAX_HIDDEN or C > MAX_CLASSES:
        raise ValueError("mlp1_fused: layer too wide for the compiled kernel")
    if M == 0 or J == 0:
        return np.zeros(J), np.zeros((J, H, C)), np.zeros((J, C)), np.zeros((J, H))

    total_a = np.zeros(J)
    gW2_a = np.zeros((J, H, C))
    gb2_a = np.zeros((J, C))
    gb1_a = np.zeros((J, H))
    cdef double[::1] total = total_a
    cdef double[:, :, ::1] gW2 = gW2_a
    cdef double[:, ::1] gb2 = gb2_a
    cdef double[:, ::1] gb1 = gb1_a

    cdef double h[MAX_HIDDEN]
    cdef double z[MAX_CLASSES]
    cdef double *arow
    cdef double *w2
    cdef double *g2
    cdef double *pb1
    cdef double *pb2
    cdef double *gb1j
    cdef double *gb2j
    cdef Py_ssize_t j, m, a, k
    cdef long long lab
    cdef double zmax, s, cm, acc, dz, v, ll
    with nogil:
        for m in range(M):
            lab = y[m]
            cm = c[m]
            for j in range(J):
                arow = &A[m, j * H]
                w2 = &W2[j, 0, 0]
                pb1 = &b1[j, 0]
                pb2 = &b2[j, 0]
                for a in range(H):
                    v = arow[a] + pb1[a]
                    if act == 0:
                        h[a] = v if v > 0.0 else 0.0
                    else:
                        h[a] = tanh(v)
                for k in range(C):
                    z[k] = pb2[k]
                for a in range(H):
                    v = h[a]
                    for k in range(C):
                        z[k] += v * w2[a * C + k]
                zmax = z[0]
                for k in range(1, C):
                    if z[k] > zmax:
                        zmax = z[k]
                ll = z[lab] - zmax
                s = 0.0
                for k in range(C):
                    z[k] = exp(z[k] - zmax)
                    s += z[k]
                total[j] += cm * (ll - log(s))
                if not grad:
                    continue
                # z becomes dL/dz = c (onehot - softmax)
                v = -cm / s
                for k in range(C):
                    z[k] = v * z[k]
                z[lab] += cm
                gb2j = &gb2[j, 0]
                for k in range(C):
                    gb2j[k] += z[k]
                g2 = &gW2[j, 0, 0]
                gb1j = &gb1[j, 0]
                for a in range(H):
                    v = h[a]
                    acc = 0.0
                    for k in range(C):
                        dz = z[k]
                        g2[a * C + k] += v * dz
                        acc += w2[a * C + k] * dz
                    if act == 0:
                        acc = acc if v > 0.0 else 0.0
                    else:
                        acc = acc * (1.0 - v * v)
                    gb1j[a] += acc
                    arow[a] = acc
    return total_a, gW2_a, gb2_a, gb1_a
