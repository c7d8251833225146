"""Multi-feature LSI graph convolutions and their gated variants.

The convolution is computed by iterated shifting: S^k x is built as
S (S^(k-1) x), never by forming matrix powers, with a fixed left-to-right
accumulation order so results are bit-reproducible.  S^0 is the identity for
every GSO, including edge-gated ones, so the k = 0 tap is never gated away.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var, val
from .errors import DimensionMismatch, GateOutOfRange
from .graphs import Gso, as_matrix


@dataclass(frozen=True)
class FilterBank:
    """K tap matrices of shape (F_in, F_out), stored as one (K, F_in, F_out) array."""

    taps: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.taps, dtype=np.float64)
        if t.ndim == 1:  # single-feature convenience: taps a_0..a_{K-1}
            t = t.reshape(-1, 1, 1)
        if t.ndim != 3 or t.shape[0] < 1:
            raise ValueError(f"taps must be (K, F_in, F_out), got {t.shape}")
        object.__setattr__(self, "taps", t)

    @property
    def order(self):
        return self.taps.shape[0]

    @property
    def f_in(self):
        return self.taps.shape[1]

    @property
    def f_out(self):
        return self.taps.shape[2]

    def response_taps(self):
        """Scalar response taps; only defined for single-feature banks."""
        if self.f_in != 1 or self.f_out != 1:
            raise ValueError("frequency response needs a single-feature bank")
        return self.taps[:, 0, 0].copy()


def _resolve_taps(bank):
    """FilterBank | (K,F_in,F_out) ndarray | Var -> (tap object, K, F_in)."""
    if isinstance(bank, FilterBank):
        t = bank.taps
    else:
        t = bank
    v = val(t)
    if v.ndim != 3:
        raise DimensionMismatch(f"tap array must be 3-d, got shape {v.shape}")
    return t, v.shape[0], v.shape[1]


def _shift_fn(s):
    if isinstance(s, Var):
        return lambda x: ad.matmul(s, x)
    m = as_matrix(s)
    return lambda x: ad.graph_shift(m, x)


def lsigf(bank, s, x):
    """Graph convolution sum_k S^k X A_k for X of shape (..., n, F_in)."""
    taps, k_order, f_in = _resolve_taps(bank)
    if val(x).shape[-1] != f_in:
        raise DimensionMismatch(f"signal has {val(x).shape[-1]} features, bank expects {f_in}")
    n = val(x).shape[-2]
    sm = s.matrix if isinstance(s, Gso) else val(s)
    if sm.shape[-1] != n:
        raise DimensionMismatch(f"GSO size {sm.shape[-1]} vs signal nodes {n}")
    shift = _shift_fn(s)
    shifted = [x]
    for _ in range(1, k_order):
        shifted.append(shift(shifted[-1]))
    return ad.bank_contract(shifted, taps)


def _check_gate_range(q):
    qv = val(q)
    if qv.size and (np.min(qv) < 0.0 or np.max(qv) > 1.0):
        raise GateOutOfRange(f"gate values outside [0,1]: min={np.min(qv)}, max={np.max(qv)}")


def node_gated_lsigf(bank, s, x, q):
    """diag(q) applied to the convolution output; q has shape (..., n)."""
    _check_gate_range(q)
    out = lsigf(bank, s, x)
    qv = val(q)
    if qv.shape[-1] != val(out).shape[-2]:
        raise DimensionMismatch("gate vector length does not match node count")
    q_col = ad.reshape(q, qv.shape + (1,))
    return ad.mul(q_col, out)


def edge_gated_lsigf(bank, s, x, q):
    """Convolution on the gated shift operator S ⊙ Q; q has shape (..., n, n)."""
    _check_gate_range(q)
    m = s.matrix if isinstance(s, Gso) else s
    qv = val(q)
    if qv.shape[-2:] != val(m).shape[-2:]:
        raise DimensionMismatch("gate matrix shape does not match GSO")
    return lsigf(bank, ad.mul(q, m), x)
