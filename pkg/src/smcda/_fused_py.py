"""Pure numpy implementation of the fused one-hidden-layer kernel."""

import numpy as np


def mlp1_fused(A, b1, W2, b2, y, c, act, grad):
    """Hidden activation, output layer, weighted log-softmax likelihood and its backward pass.

    ``A`` is the ``(M, J*H)`` first-layer GEMM output (no bias) with particle
    ``j`` owning columns ``j*H:(j+1)*H``. ``act`` is 0 for relu, 1 for tanh.
    Returns ``(total (J,), gW2 (J,H,C), gb2 (J,C), gb1 (J,H))``; when ``grad``
    is true ``A`` is overwritten with the gradient w.r.t. the hidden
    pre-activations, ready for the ``X.T @ A`` GEMM.
    """
    M = A.shape[0]
    J, H, C = W2.shape
    pre = np.ascontiguousarray(A.reshape(M, J, H).transpose(1, 0, 2))  # (J, M, H)
    pre += b1[:, None, :]
    h = np.maximum(pre, 0.0) if act == 0 else np.tanh(pre)
    z = np.matmul(h, W2)
    z += b2[:, None, :]
    z -= z.max(axis=2, keepdims=True)
    ez = np.exp(z)
    lse = np.log(ez.sum(axis=2))
    rows = np.arange(M)
    total = (z[:, rows, y] - lse) @ c
    if not grad:
        return total, None, None, None
    delta = ez / ez.sum(axis=2, keepdims=True)
    np.negative(delta, out=delta)
    delta[:, rows, y] += 1.0
    delta *= c[None, :, None]
    gW2 = np.matmul(h.transpose(0, 2, 1), delta)
    gb2 = delta.sum(axis=1)
    dpre = np.matmul(delta, W2.transpose(0, 2, 1))
    if act == 0:
        dpre *= h > 0
    else:
        dpre *= 1.0 - h * h
    gb1 = dpre.sum(axis=1)
    A.reshape(M, J, H)[...] = dpre.transpose(1, 0, 2)
    return total, gW2, gb2, gb1
