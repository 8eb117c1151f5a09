"""Simplex operations shared across the package.

Probability vectors are plain 1-d ``float64`` numpy arrays; ``check_simplex``
enforces the invariants where a boundary needs them.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .errors import InvalidInputError

SIMPLEX_TOL = 1e-9


def as_vector(v, name="vector"):
    arr = np.ascontiguousarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidInputError(f"{name} must be 1-d, got shape {arr.shape}")
    if arr.size == 0:
        raise InvalidInputError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return arr


def is_simplex(w, tol=SIMPLEX_TOL):
    w = np.asarray(w, dtype=float)
    return w.ndim == 1 and w.size > 0 and bool(np.all(w >= 0)) and abs(w.sum() - 1.0) <= tol


def check_simplex(w, name="weights", tol=SIMPLEX_TOL):
    w = as_vector(w, name)
    if np.any(w < 0):
        raise InvalidInputError(f"{name} has negative entries")
    if abs(w.sum() - 1.0) > tol:
        raise InvalidInputError(f"{name} sums to {w.sum()!r}, not 1")
    return w


def project_to_simplex(v):
    """Euclidean projection onto the probability simplex.

    Sorting-based exact algorithm, O(m log m). Raises ``InvalidInputError`` for
    empty or non-finite input.
    """
    v = as_vector(v, "v")
    # the projection commutes with adding a constant to every entry; shifting
    # by the max keeps the threshold arithmetic well conditioned for large inputs
    return kernels.project_simplex(v - v.max())


def softmax(v, temperature=1.0):
    """Numerically safe softmax; ``temperature`` divides the logits."""
    v = as_vector(v, "v")
    if not temperature > 0:
        raise InvalidInputError(f"temperature must be positive, got {temperature}")
    z = v / temperature if temperature != 1.0 else v
    e = np.exp(z - z.max())
    return e / e.sum()


def prior_distance(q, p, squared=True):
    """Distance of the mixture weights ``q`` from the prior ``p`` and its gradient in ``q``.

    The default is ``0.5 * ||q - p||^2`` with gradient ``q - p``. ``squared=False``
    gives the plain Euclidean norm (gradient ``(q - p)/||q - p||``, zero at ``q == p``).
    """
    q = as_vector(q, "q")
    p = as_vector(p, "p")
    if q.shape != p.shape:
        raise InvalidInputError(f"length mismatch: q has {q.size}, p has {p.size}")
    diff = q - p
    if squared:
        return 0.5 * float(diff @ diff), diff
    norm = float(np.sqrt(diff @ diff))
    if norm == 0.0:
        return 0.0, np.zeros_like(diff)
    return norm, diff / norm
