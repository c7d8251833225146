"""Shared oracles for the test suite (kept independent of the code they check)."""

import numpy as np


def naive_shift(s, x):
    """Per-node ascending-j accumulation, the documented summation order."""
    s = np.asarray(s)
    x = np.asarray(x)
    col = x[:, None] if x.ndim == 1 else x
    out = np.empty((s.shape[0], col.shape[1]))
    for i in range(s.shape[0]):
        for f in range(col.shape[1]):
            acc = 0.0
            for j in range(s.shape[1]):
                acc += s[i, j] * col[j, f]
            out[i, f] = acc
    return out[:, 0] if x.ndim == 1 else out


def central_diff_grads(f, arrays, h=1e-5):
    """Central finite differences of a scalar-valued f(list_of_arrays)."""
    grads = []
    for k, arr in enumerate(arrays):
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(arrays)
            flat[i] = orig - h
            fm = f(arrays)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_err(a, b, clamp=1e-8):
    a = np.asarray(a)
    b = np.asarray(b)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), clamp)
    return float(np.max(np.abs(a - b) / denom))


def model_loss_fn(model, s, x_seq, target_seq):
    """Plain-mode L1 sequence loss as a function of the parameter arrays."""
    from grnnkit import models

    names = [n for n, _ in model.parameters()]

    def f(arrays):
        params = dict(zip(names, arrays))
        y_seq, _, _ = models.grnn_forward(model, s, x_seq, params=params)
        total = 0.0
        for t in range(len(x_seq)):
            total += float(np.mean(np.abs(np.asarray(y_seq[t]) - target_seq[t])))
        return total / len(x_seq)

    return names, f
