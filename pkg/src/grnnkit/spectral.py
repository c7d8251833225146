"""Eigendecompositions, the graph Fourier transform and filter responses.

The eigendecomposition is canonicalized so that downstream quantities (the
misalignment delta in particular) are deterministic: eigenvalues sorted in
descending order, and each eigenvector's sign fixed so its largest-magnitude
entry is positive (ties broken by lowest index).
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NotSymmetric
from .graphs import as_matrix
from .linalg import operator_norm

DEGENERACY_GAP = 1e-8
DEFAULT_IL_GRID = 1024


@dataclass(frozen=True)
class EigenSystem:
    """Canonicalized symmetric eigendecomposition S = V diag(lam) V^T."""

    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns aligned with eigenvalues
    degenerate: bool = False  # some eigengap below DEGENERACY_GAP

    @property
    def n(self):
        return self.eigenvalues.shape[0]

    def to_csv(self, path):
        rows = np.vstack([self.eigenvalues[None, :], self.eigenvectors])
        np.savetxt(path, rows, delimiter=",")


def _canonical_sign(v):
    """Flip each column so its largest-|.| entry (lowest index on ties) is positive."""
    v = v.copy()
    for k in range(v.shape[1]):
        col = v[:, k]
        idx = int(np.argmax(np.abs(col)))  # argmax returns the first maximizer
        if col[idx] < 0:
            v[:, k] = -col
    return v


def eigendecompose(s, sym_tol=1e-12) -> EigenSystem:
    m = as_matrix(s)
    if m.shape[0] != m.shape[1]:
        raise DimensionMismatch("GSO must be square")
    asym = float(np.max(np.abs(m - m.T))) if m.size else 0.0
    if asym > sym_tol:
        raise NotSymmetric(f"matrix asymmetry {asym:.3e} exceeds {sym_tol:.0e}")
    lam, v = np.linalg.eigh(0.5 * (m + m.T))
    order = np.argsort(-lam, kind="stable")
    lam = lam[order]
    v = _canonical_sign(v[:, order])
    gaps = np.abs(np.diff(lam))
    degenerate = bool(gaps.size and np.min(gaps) < DEGENERACY_GAP)
    if degenerate:
        # within a near-equal cluster, order sign-fixed columns by their first
        # significant entry (then lexicographically) so the basis is stable
        lam, v = _order_degenerate(lam, v)
    return EigenSystem(eigenvalues=lam, eigenvectors=v, degenerate=degenerate)


def _order_degenerate(lam, v, tol=DEGENERACY_GAP):
    start = 0
    lam = lam.copy()
    v = v.copy()
    for end in range(1, lam.size + 1):
        if end == lam.size or abs(lam[end] - lam[end - 1]) >= tol:
            if end - start > 1:
                block = v[:, start:end]
                keys = []
                for k in range(block.shape[1]):
                    col = block[:, k]
                    sig = np.flatnonzero(np.abs(col) > 1e-10)
                    first = int(sig[0]) if sig.size else v.shape[0]
                    keys.append((first, tuple(np.round(col, 10))))
                order = sorted(range(block.shape[1]), key=lambda k: keys[k])
                v[:, start:end] = block[:, order]
            start = end
    return lam, v


def gft(es: EigenSystem, x):
    """Project a signal on the eigenvector basis: V^T x."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != es.n:
        raise DimensionMismatch(f"signal has {x.shape[0]} rows, eigensystem is {es.n}")
    return es.eigenvectors.T @ x


def igft(es: EigenSystem, xhat):
    xhat = np.asarray(xhat, dtype=np.float64)
    if xhat.shape[0] != es.n:
        raise DimensionMismatch("coefficient length mismatch")
    return es.eigenvectors @ xhat


@dataclass(frozen=True)
class FrequencyResponse:
    """Scalar polynomial response a(lam) = sum_k taps[k] lam^k."""

    taps: np.ndarray

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.taps, dtype=np.float64))
        if t.ndim != 1 or t.size < 1:
            raise ValueError("taps must be a nonempty 1-d array")
        object.__setattr__(self, "taps", t)

    @property
    def order(self):
        return self.taps.size

    def derivative_taps(self):
        k = np.arange(1, self.taps.size)
        return self.taps[1:] * k if self.taps.size > 1 else np.zeros(1)


def evaluate_response(fr: FrequencyResponse, lam):
    """Polynomial value(s) by Horner's method."""
    lam = np.asarray(lam, dtype=np.float64)
    acc = np.full_like(lam, fr.taps[-1], dtype=np.float64)
    for a_k in fr.taps[-2::-1]:
        acc = acc * lam + a_k
    return acc if acc.ndim else float(acc)


def integral_lipschitz_constant(fr: FrequencyResponse, lambda_min, lambda_max, grid=DEFAULT_IL_GRID):
    """Smallest C with |lam * a'(lam)| <= C on the interval, estimated on a grid."""
    if not lambda_min < lambda_max:
        raise ValueError("need lambda_min < lambda_max")
    if grid < 2:
        raise ValueError("need grid >= 2")
    lam = np.linspace(lambda_min, lambda_max, grid)
    dfr = FrequencyResponse(fr.derivative_taps())
    return float(np.max(np.abs(lam * evaluate_response(dfr, lam))))


def filter_matrix(fr: FrequencyResponse, s):
    """Dense filter matrix sum_k a_k S^k."""
    m = as_matrix(s)
    acc = fr.taps[0] * np.eye(m.shape[0])
    power = np.eye(m.shape[0])
    for a_k in fr.taps[1:]:
        power = m @ power
        acc = acc + a_k * power
    return acc


def filter_norm(fr: FrequencyResponse, es: EigenSystem):
    """Operator norm of the filter on this graph: max_n |a(lambda_n)|."""
    return float(np.max(np.abs(evaluate_response(fr, es.eigenvalues))))


def apply_spectral(fr: FrequencyResponse, es: EigenSystem, x):
    """V diag(a(lam)) V^T x, the spectral route to the same convolution."""
    coeff = evaluate_response(fr, es.eigenvalues)
    xhat = gft(es, x)
    if np.ndim(x) == 1:
        return igft(es, coeff * xhat)
    return igft(es, coeff[:, None] * xhat)


@dataclass(frozen=True)
class MisalignmentReport:
    """delta = (||U - V|| + 1)^2 - 1 under the canonical basis convention."""

    delta: float
    u_minus_v_norm: float
    degenerate: bool = False


def misalignment_delta(s_eig: EigenSystem, e_eig: EigenSystem) -> MisalignmentReport:
    if s_eig.n != e_eig.n:
        raise DimensionMismatch("eigensystems over different node counts")
    nrm = operator_norm(e_eig.eigenvectors - s_eig.eigenvectors)
    delta = (nrm + 1.0) ** 2 - 1.0
    return MisalignmentReport(
        delta=float(delta),
        u_minus_v_norm=float(nrm),
        degenerate=s_eig.degenerate or e_eig.degenerate,
    )


def filter_distance(fr: FrequencyResponse, s, s_tilde):
    """Operator norm of A(S) - A(S~) (P = I: the pair is constructed, not matched)."""
    m = as_matrix(s)
    mt = as_matrix(s_tilde)
    if m.shape != mt.shape:
        raise DimensionMismatch("GSOs of different size")
    return operator_norm(filter_matrix(fr, m) - filter_matrix(fr, mt))


def occupied_interval(*gsos):
    """[min, max] of the union of the spectra of the given (symmetric) GSOs."""
    lo, hi = np.inf, -np.inf
    for s in gsos:
        lam = np.linalg.eigvalsh(0.5 * (as_matrix(s) + as_matrix(s).T))
        lo = min(lo, float(lam[0]))
        hi = max(hi, float(lam[-1]))
    if lo == hi:  # avoid a zero-width integral-Lipschitz grid
        lo, hi = lo - 1e-6, hi + 1e-6
    return lo, hi
