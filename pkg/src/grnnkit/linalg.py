"""Small dense linear-algebra helpers used throughout."""

import numpy as np

from .errors import ConvergenceFailure

_POWER_TOL = 1e-12
_POWER_MAX_ITER = 10_000


def operator_norm(m, rng=None):
    """Spectral norm of a dense matrix.

    Power iteration on M^T M (tolerance 1e-12, at most 10,000 iterations),
    falling back to a full eigensolve when the iteration stalls.  Matrices
    here are small (n <= ~2000), so the fallback is always affordable.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.size == 0:
        return 0.0
    if not np.all(np.isfinite(m)):
        raise ValueError("operator_norm: non-finite entries")
    gram = m.T @ m
    scale = np.max(np.abs(gram))
    if scale == 0.0:
        return 0.0
    # deterministic start vector; rng only used to reseed on stall
    v = np.ones(gram.shape[0]) / np.sqrt(gram.shape[0])
    lam = 0.0
    for _ in range(_POWER_MAX_ITER):
        w = gram @ v
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            # v is in the null space; fall back to the dense solve
            break
        v_next = w / norm_w
        lam_next = float(v_next @ (gram @ v_next))
        if abs(lam_next - lam) <= _POWER_TOL * max(1.0, abs(lam_next)):
            return float(np.sqrt(max(lam_next, 0.0)))
        lam = lam_next
        v = v_next
    # fallback: full symmetric eigensolve of the Gram matrix
    try:
        eigvals = np.linalg.eigvalsh(gram)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - numpy rarely fails here
        raise ConvergenceFailure("operator norm: power iteration and eigensolve failed") from exc
    return float(np.sqrt(max(float(eigvals[-1]), 0.0)))


def is_symmetric(m, tol=1e-12):
    m = np.asarray(m)
    if m.shape[0] != m.shape[1]:
        return False
    return float(np.max(np.abs(m - m.T))) <= tol
