"""Entropy and relative-entropy helpers, all in bits."""

import numpy as np

# Probabilities at or below this are treated as zero when deciding support.
POSITIVE_TOL = 1e-12


def kl_bits(p, r):
    """Relative entropy D(p || r) in bits.

    Terms with p == 0 contribute nothing. Returns ``inf`` when p puts mass
    where r has none.
    """
    p = np.asarray(p, dtype=float)
    r = np.asarray(r, dtype=float)
    mask = p > 0
    if np.any(r[mask] <= 0):
        return np.inf
    return float(np.sum(p[mask] * np.log2(p[mask] / r[mask])))


def kl_rows(P, R):
    """Pairwise divergences: ``out[i, j] = D(P[i] || R[j])`` in bits."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    out = np.empty((P.shape[0], R.shape[0]))
    for i, p in enumerate(P):
        for j, r in enumerate(R):
            out[i, j] = kl_bits(p, r)
    return out


def entropy_bits(p):
    p = np.asarray(p, dtype=float)
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)))


def binary_entropy(a):
    """H2(a) with the 0 log 0 = 0 convention; vectorised over ``a``."""
    a = np.asarray(a, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -a * np.log2(a) - (1 - a) * np.log2(1 - a)
    out = np.where((a <= 0) | (a >= 1), 0.0, out)
    return out if out.ndim else float(out)
