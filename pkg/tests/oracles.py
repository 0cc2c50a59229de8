"""Independent FP64 loop-nest oracles. Nothing here calls library code."""

from __future__ import annotations

import itertools
import math

import numpy as np


def conv_loops(x, w, b=None, stride=1, padding=0):
    """Cross-correlation by explicit loops over (c_out, c_in, spatial, kernel).

    x: (c_in, *spatial), w: (c_out, c_in, *kernel)."""
    x = np.asarray(x, np.float64)
    w = np.asarray(w, np.float64)
    d = x.ndim - 1
    stride = (stride,) * d if isinstance(stride, int) else tuple(stride)
    padding = (padding,) * d if isinstance(padding, int) else tuple(padding)
    xp = np.pad(x, [(0, 0)] + [(p, p) for p in padding])
    ks = w.shape[2:]
    out_sp = [(x.shape[1 + i] + 2 * padding[i] - ks[i]) // stride[i] + 1 for i in range(d)]
    out = np.zeros((w.shape[0], *out_sp))
    for co in range(w.shape[0]):
        for pos in itertools.product(*[range(n) for n in out_sp]):
            acc = 0.0 if b is None else float(b[co])
            for ci in range(w.shape[1]):
                for kk in itertools.product(*[range(k) for k in ks]):
                    src = tuple(pos[i] * stride[i] + kk[i] for i in range(d))
                    acc += xp[(ci, *src)] * w[(co, ci, *kk)]
            out[(co, *pos)] = acc
    return out


def gemm_loops(a, w, bias=None):
    a = np.asarray(a, np.float64)
    w = np.asarray(w, np.float64)
    M, K = a.shape
    N = w.shape[1]
    out = np.zeros((M, N))
    for i in range(M):
        for j in range(N):
            s = 0.0
            for k in range(K):
                s += a[i, k] * w[k, j]
            out[i, j] = s + (0.0 if bias is None else float(bias[j]))
    return out


def maxpool_loops(x, k, s):
    x = np.asarray(x, np.float64)
    H, W = x.shape[-2:]
    oh, ow = (H - k) // s + 1, (W - k) // s + 1
    out = np.empty(x.shape[:-2] + (oh, ow))
    for lead in itertools.product(*[range(n) for n in x.shape[:-2]]):
        for i in range(oh):
            for j in range(ow):
                out[lead + (i, j)] = max(x[lead + (i * s + a, j * s + b)] for a in range(k) for b in range(k))
    return out


def aap_window(i, n_in, n_out):
    return math.floor(i * n_in / n_out), math.ceil((i + 1) * n_in / n_out)


def aap_loops(x, out_shape):
    """Window-formula oracle over the trailing len(out_shape) axes."""
    x = np.asarray(x, np.float64)
    d = len(out_shape)
    lead, sp = x.shape[:-d], x.shape[-d:]
    out = np.empty(lead + tuple(out_shape))
    for L in itertools.product(*[range(n) for n in lead]):
        for idx in itertools.product(*[range(n) for n in out_shape]):
            wins = [aap_window(i, sp[a], out_shape[a]) for a, i in enumerate(idx)]
            vals = [x[L + cell] for cell in itertools.product(*[range(lo, hi) for lo, hi in wins])]
            out[L + idx] = sum(vals) / len(vals)
    return out


def rnn_step(x, h, w_ih, w_hh, b_ih, b_hh):
    x, h = np.asarray(x, np.float64), np.asarray(h, np.float64)
    pre = np.zeros(len(b_ih))
    for j in range(len(b_ih)):
        s = float(b_ih[j]) + float(b_hh[j])
        for k in range(len(x)):
            s += float(w_ih[j, k]) * x[k]
        for k in range(len(h)):
            s += float(w_hh[j, k]) * h[k]
        pre[j] = s
    return np.tanh(pre)


def rel_close(y, ref, tol) -> bool:
    """Largest deviation relative to the largest reference magnitude."""
    y, ref = np.asarray(y, np.float64), np.asarray(ref, np.float64)
    scale = max(float(np.max(np.abs(ref))), 1e-30)
    return y.shape == ref.shape and float(np.max(np.abs(y - ref))) <= tol * scale
