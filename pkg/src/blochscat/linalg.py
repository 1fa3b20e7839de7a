"""Dense linear-algebra helpers: kernel projections, subspace inverses,
condition-checked inverses and small extrapolation utilities.

All operators are plain complex ndarrays on the truncated Fourier basis;
projections are represented as full matrices, and inverses "within a
subspace" are returned extended by zero to the ambient space.
"""
from __future__ import annotations

import numpy as np

from .errors import NearSingularError, RankDetectionError

# Relative kernel-detection tolerance and the mandatory gap between kept and
# discarded singular values.
EPS_RANK = 1e-8
RANK_GAP = 10.0

# Inversions refuse condition numbers beyond this cap.
COND_CAP = 1e12


def kernel_basis(mat: np.ndarray, eps_rank: float = EPS_RANK,
                 gap: float = RANK_GAP) -> np.ndarray:
    """Orthonormal basis of the numerical kernel of ``mat``.

    Singular values below ``eps_rank * s_max`` are zero; a value landing in
    the gray zone ``[eps_rank, gap*eps_rank) * s_max`` raises
    RankDetectionError, since no reliable rank decision is possible there.

    Returns an ``(n, r)`` array whose columns span the kernel (``r`` may be 0).
    """
    mat = np.asarray(mat, dtype=complex)
    u, s, vh = np.linalg.svd(mat)
    del u
    smax = s[0] if s.size else 0.0
    if smax == 0.0:
        return np.eye(mat.shape[1], dtype=complex)
    rel = s / smax
    gray = (rel >= eps_rank) & (rel < gap * eps_rank)
    if np.any(gray):
        raise RankDetectionError(
            "singular value ratio(s) %s inside the gray zone [%g, %g); "
            "choose a different rank tolerance" %
            (rel[gray], eps_rank, gap * eps_rank))
    null_mask = rel < eps_rank
    return vh.conj().T[:, null_mask]


def kernel_projection(mat: np.ndarray, eps_rank: float = EPS_RANK,
                      gap: float = RANK_GAP) -> tuple[np.ndarray, int]:
    """Orthogonal projection onto the numerical kernel of ``mat``.

    Returns ``(P, rank)`` with ``P`` an ``(n, n)`` matrix and ``rank`` the
    kernel dimension.
    """
    q = kernel_basis(mat, eps_rank, gap)
    return q @ q.conj().T, q.shape[1]


def range_and_kernel(columns: np.ndarray, eps_rank: float = EPS_RANK,
                     gap: float = RANK_GAP) -> tuple[np.ndarray, np.ndarray]:
    """Split C^n into the span of ``columns`` and its orthogonal complement.

    ``columns`` is ``(n, m)``.  Returns ``(Q_ran, Q_ker)`` with orthonormal
    columns; ``Q_ker`` spans the complement, so ``Q_ker Q_ker^* = 1 - P_ran``.
    """
    columns = np.asarray(columns, dtype=complex)
    n = columns.shape[0]
    if columns.size == 0:
        return np.zeros((n, 0), dtype=complex), np.eye(n, dtype=complex)
    u, s, _ = np.linalg.svd(columns, full_matrices=True)
    smax = s[0] if s.size else 0.0
    if smax == 0.0:
        return np.zeros((n, 0), dtype=complex), u
    rel = np.zeros(n)
    rel[:s.size] = s / smax
    gray = (rel >= eps_rank) & (rel < gap * eps_rank)
    if np.any(gray):
        raise RankDetectionError(
            "singular value ratio(s) %s in the rank gray zone" % rel[gray])
    r = int(np.sum(rel >= gap * eps_rank))
    return u[:, :r], u[:, r:]


def checked_inverse(mat: np.ndarray, cond_cap: float = COND_CAP,
                    what: str = "matrix") -> np.ndarray:
    """Inverse of ``mat`` with an explicit condition-number guard."""
    mat = np.asarray(mat, dtype=complex)
    s = np.linalg.svd(mat, compute_uv=False)
    smin = float(s[-1]) if s.size else 0.0
    smax = float(s[0]) if s.size else 0.0
    if smin == 0.0 or smax / smin > cond_cap:
        raise NearSingularError(
            "%s is numerically singular (sigma_min=%.3e, cond=%.3e)" %
            (what, smin, np.inf if smin == 0.0 else smax / smin),
            smallest_singular_value=smin,
            condition_number=np.inf if smin == 0.0 else smax / smin)
    return np.linalg.inv(mat)


def subspace_inverse(mat: np.ndarray, basis: np.ndarray,
                     cond_cap: float = COND_CAP,
                     what: str = "operator") -> np.ndarray:
    """Inverse of ``mat`` restricted to span(basis), extended by zero.

    ``basis`` must have orthonormal columns.  The restriction
    ``basis^* mat basis`` is inverted and mapped back, which realizes the
    inverse of an operator acting within the subspace.
    """
    if basis.shape[1] == 0:
        return np.zeros_like(np.asarray(mat, dtype=complex))
    sub = basis.conj().T @ mat @ basis
    return basis @ checked_inverse(sub, cond_cap, what) @ basis.conj().T


def smallest_singular_value(mat: np.ndarray) -> float:
    s = np.linalg.svd(np.asarray(mat, dtype=complex), compute_uv=False)
    return float(s[-1]) if s.size else 0.0


def operator_norm(mat: np.ndarray) -> float:
    s = np.linalg.svd(np.asarray(mat, dtype=complex), compute_uv=False)
    return float(s[0]) if s.size else 0.0


def richardson(h: np.ndarray, values: np.ndarray, order: int | None = None):
    """Polynomial extrapolation of ``values(h)`` to ``h = 0``.

    Fits ``a0 + a1 h + ... + ad h^d`` through the samples (smallest ``h``
    last is not required) and returns ``a0``.  ``values`` may carry extra
    trailing dimensions (e.g. matrices); the fit is per component.
    """
    h = np.asarray(h, dtype=float)
    values = np.asarray(values)
    d = len(h) - 1 if order is None else min(order, len(h) - 1)
    # Use the d+1 smallest h for the fit.
    idx = np.argsort(h)[:d + 1]
    hh = h[idx]
    vv = values[idx]
    vand = np.vander(hh, d + 1, increasing=True)
    flat = vv.reshape(len(hh), -1)
    coeffs = np.linalg.solve(vand, flat)
    a0 = coeffs[0].reshape(values.shape[1:])
    if a0.shape == ():
        return complex(a0) if np.iscomplexobj(values) else float(a0)
    return a0


def fit_power_law(h: np.ndarray, values: np.ndarray) -> float:
    """Least-squares exponent p in ``values ~ C h^p`` (log-log fit)."""
    h = np.asarray(h, dtype=float)
    v = np.abs(np.asarray(values, dtype=complex))
    if np.any(v <= 0.0):
        raise ValueError("power-law fit needs strictly positive magnitudes")
    slope, _ = np.polyfit(np.log(h), np.log(v), 1)
    return float(slope)
