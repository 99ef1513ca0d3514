"""Derivative-free box-constrained pattern search."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class SearchTrace:
    x: np.ndarray
    value: float
    evaluations: int
    history: list = field(default_factory=list)  # (evaluation count, incumbent value)


def pattern_search(f, x0, lower, upper, step=0.1, min_step=1e-10, max_evals=10_000,
                   rng=None, random_directions=0, shrink=0.5):
    """Minimise ``f`` over a box by polling along directions with a
    shrinking step.

    Each round polls +/- every coordinate axis, then ``random_directions``
    random unit directions (drawn from ``rng``), and moves to the first
    improving point. A round with no improvement shrinks the step. Points
    outside the box are clipped onto it. ``f`` may return ``inf`` to mark
    infeasible points.
    """
    lower = np.broadcast_to(np.asarray(lower, dtype=float), np.shape(x0))
    upper = np.broadcast_to(np.asarray(upper, dtype=float), np.shape(x0))
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    fx = float(f(x))
    evals = 1
    history = [(evals, fx)]
    dim = len(x)
    rng = rng if rng is not None else np.random.default_rng(0)
    while step >= min_step and evals < max_evals:
        moved = False
        dirs = [sign * e for e in np.eye(dim) for sign in (1.0, -1.0)]
        for _ in range(random_directions):
            v = rng.normal(size=dim)
            dirs.append(v / np.linalg.norm(v))
        for d in dirs:
            if evals >= max_evals:
                break
            cand = np.clip(x + step * d, lower, upper)
            if np.array_equal(cand, x):
                continue
            fc = float(f(cand))
            evals += 1
            if fc < fx:
                x, fx, moved = cand, fc, True
                history.append((evals, fx))
                break
        if not moved:
            step *= shrink
    return SearchTrace(x, fx, evals, history)


INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0


def golden_max(f, lo, hi, tol=1e-12, max_iter=400):
    """Golden-section search for the maximum of a unimodal ``f`` on [lo, hi]."""
    a, b = float(lo), float(hi)
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    x = c if fc >= fd else d
    return x, max(fc, fd)


def multistart_golden_max(f, lo, hi, brackets=16, tol=1e-12):
    """Golden-section search inside each of ``brackets`` equal sub-intervals
    (plus the endpoints); returns the best ``(x, f(x))`` found."""
    edges = np.linspace(lo, hi, brackets + 1)
    best = max(((float(x), f(float(x))) for x in (lo, hi)), key=lambda t: t[1])
    for a, b in zip(edges[:-1], edges[1:]):
        cand = golden_max(f, a, b, tol)
        if cand[1] > best[1]:
            best = cand
    return best
