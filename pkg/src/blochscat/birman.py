"""Boundary Birman-Schwinger operators for one Bloch fiber.

The sandwiched free resolvent reduces to a finite channel sum on the
truncated basis:

    G R0_k(z) G^*  =  i sum_n  v P_n v / sqrt(z - lambda_{k,n}),

with the square root chosen so that Im sqrt(z) > 0 off the cut [0, oo).
On the real axis (off thresholds) the boundary values split into a
self-adjoint closed-channel part and a non-negative open-channel part:

    G R0_k(lambda + i0) G^* = sum_closed v P_n v / beta^2
                              + i sum_open v P_n v / beta^2,
    beta_{k,n}(lambda) = |lambda - lambda_{k,n}|^{1/4}.

The inverse ``M(lambda) = (u + G R0 G^*)^{-1}`` is the boundary operator the
scattering formulas consume, and ``G R^V G^* = u - u M u`` recovers the
sandwiched perturbed resolvent.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .errors import BranchCutError, ThresholdProximityError
from .linalg import COND_CAP, checked_inverse
from .torus import (FiberContext, FourierOperator, PotentialModel,
                    channel_column, max_channel, u_operator)

# boundary_bs refuses lambdas closer to a threshold than this; the cascade
# module owns that regime.
EPS_THRESHOLD = 1e-6


def sqrt_upper(z: complex, boundary: bool = False) -> complex:
    """Square root with Im sqrt(z) > 0, analytic on C minus [0, oo).

    With ``boundary=True``, points on the cut get their limit from the upper
    half-plane: sqrt(x + i0) = +sqrt(x).  Without the flag the cut raises.
    """
    z = complex(z)
    if z.imag == 0.0 and z.real >= 0.0:
        if not boundary:
            raise BranchCutError(
                f"z={z} lies on the cut [0, oo); pass boundary=True for the "
                "limit from above")
        return complex(math.sqrt(z.real))
    return 1j * cmath.sqrt(-z)


def _sqrt_upper_array(z_minus_lam: np.ndarray) -> np.ndarray:
    """Vectorized sqrt_upper with boundary values from above on the cut."""
    z = np.asarray(z_minus_lam, dtype=complex)
    out = 1j * np.sqrt(-z)
    on_axis = (z.imag == 0.0)
    if np.any(on_axis):
        re = z.real[on_axis]
        out[on_axis] = np.where(re >= 0.0, np.sqrt(np.maximum(re, 0.0)),
                                1j * np.sqrt(np.maximum(-re, 0.0)))
    return out


@dataclass(frozen=True)
class ChannelSplit:
    """Open/closed channel bookkeeping at energy lambda."""
    lam: float
    open_modes: tuple[int, ...]
    closed_modes: tuple[int, ...]
    beta: dict[int, float]

    @property
    def n_open(self) -> int:
        return len(self.open_modes)


def channel_split(fiber: FiberContext, lam: float, n_inner: int) -> ChannelSplit:
    """Partition the retained modes |n| <= n_inner at energy lambda."""
    modes = np.arange(-n_inner, n_inner + 1)
    lams = fiber.threshold(modes)
    open_modes = tuple(int(n) for n, ln in zip(modes, lams) if ln <= lam)
    closed_modes = tuple(int(n) for n, ln in zip(modes, lams) if ln > lam)
    beta = {int(n): float(abs(lam - ln) ** 0.25) for n, ln in zip(modes, lams)}
    return ChannelSplit(lam=lam, open_modes=open_modes,
                        closed_modes=closed_modes, beta=beta)


@dataclass(frozen=True)
class BSOperator:
    """Value of G R0_k(z) G^* on the truncated basis.

    ``z`` is the spectral parameter; ``boundary`` marks the lambda + i0
    limit.  ``truncation_bound`` estimates the dropped channel tail,
    ||V||_oo / sqrt(lambda_{k,N+1} - Re z) for the first un-retained channel.
    """
    fiber: FiberContext
    z: complex
    boundary: bool
    matrix: FourierOperator
    truncation_bound: float
    tail_flag: bool


def _channel_matrix(pm: PotentialModel, m: int, modes: np.ndarray) -> np.ndarray:
    """Columns w_n = coefficients of v e_n, for the given modes."""
    cols = [channel_column(pm, int(n), m) for n in modes]
    return np.stack(cols, axis=1) if cols else np.zeros((2 * m + 1, 0),
                                                        dtype=complex)


def _tail_bound(pm: PotentialModel, fiber: FiberContext, n_inner: int,
                re_z: float) -> tuple[float, bool]:
    gap = min(fiber.threshold(n_inner + 1), fiber.threshold(-n_inner - 1)) - re_z
    if gap <= 0.0:
        return float("inf"), True
    bound = pm.sup_norm / math.sqrt(gap)
    return bound, bound > 1e-6


def assemble_bs(pm: PotentialModel, fiber: FiberContext, z: complex,
                m: int = None, n_inner: int = None) -> BSOperator:
    """G R0_k(z) G^* for Im z != 0.

    The channel range defaults to |n| <= M + v_cutoff, beyond which the
    columns v e_n vanish identically for the truncated v; the residual error
    is the recorded coefficient tail.
    """
    if z.imag == 0.0:
        raise BranchCutError("assemble_bs needs Im z != 0; use boundary_bs "
                             "for real energies")
    m = pm.v_cutoff // 2 if m is None else m
    n_inner = max_channel(pm, m) if n_inner is None else n_inner
    modes = np.arange(-n_inner, n_inner + 1)
    w = _channel_matrix(pm, m, modes)
    roots = _sqrt_upper_array(z - fiber.threshold(modes))
    mat = (w * (1j / roots)) @ w.conj().T
    bound, flag = _tail_bound(pm, fiber, n_inner, z.real)
    return BSOperator(fiber=fiber, z=z, boundary=False,
                      matrix=FourierOperator(m, mat),
                      truncation_bound=bound, tail_flag=flag)


def boundary_bs(pm: PotentialModel, fiber: FiberContext, lam: float,
                m: int = None, n_inner: int = None,
                eps_threshold: float = EPS_THRESHOLD) -> BSOperator:
    """Boundary value G R0_k(lambda + i0) G^* for lambda off the thresholds."""
    m = pm.v_cutoff // 2 if m is None else m
    n_inner = max_channel(pm, m) if n_inner is None else n_inner
    modes = np.arange(-n_inner, n_inner + 1)
    lams = fiber.threshold(modes)
    dist = np.min(np.abs(lams - lam))
    if dist <= eps_threshold:
        raise ThresholdProximityError(
            f"lambda={lam} is within {eps_threshold} of a threshold; "
            "use the threshold-expansion module there")
    w = _channel_matrix(pm, m, modes)
    beta2 = np.sqrt(np.abs(lam - lams))
    weights = np.where(lams <= lam, 1j / beta2, 1.0 / beta2)
    mat = (w * weights) @ w.conj().T
    bound, flag = _tail_bound(pm, fiber, n_inner, lam)
    return BSOperator(fiber=fiber, z=complex(lam), boundary=True,
                      matrix=FourierOperator(m, mat),
                      truncation_bound=bound, tail_flag=flag)


def m_operator(pm: PotentialModel, fiber: FiberContext, lam: float,
               m: int = None, n_inner: int = None,
               cond_cap: float = COND_CAP,
               eps_threshold: float = EPS_THRESHOLD) -> FourierOperator:
    """(u + G R0_k(lambda + i0) G^*)^{-1}, the boundary M-operator.

    Near-singularity (condition number beyond the cap) raises
    NearSingularError carrying the smallest singular value: the signature of
    a nearby eigenvalue or threshold.
    """
    bs = boundary_bs(pm, fiber, lam, m=m, n_inner=n_inner,
                     eps_threshold=eps_threshold)
    mcut = bs.matrix.cutoff
    u = u_operator(pm, mcut).mat
    inv = checked_inverse(u + bs.matrix.mat, cond_cap,
                          what=f"u + G R0 G* at lambda={lam}")
    return FourierOperator(mcut, inv)


def gv_resolvent(pm: PotentialModel, fiber: FiberContext, lam: float,
                 m: int = None, n_inner: int = None,
                 cond_cap: float = COND_CAP) -> FourierOperator:
    """Boundary value of G R^V_k G^* via  u - u M u."""
    mop = m_operator(pm, fiber, lam, m=m, n_inner=n_inner, cond_cap=cond_cap)
    u = u_operator(pm, mop.cutoff).mat
    return FourierOperator(mop.cutoff, u - u @ mop.mat @ u)


def scan_csv_rows(pm: PotentialModel, fiber: FiberContext,
                  lams: np.ndarray, m: int = None) -> list[tuple]:
    """(lambda, cond, min_singular) rows along a lambda scan."""
    rows = []
    for lam in lams:
        try:
            bs = boundary_bs(pm, fiber, float(lam), m=m)
        except ThresholdProximityError:
            continue
        u = u_operator(pm, bs.matrix.cutoff).mat
        s = np.linalg.svd(u + bs.matrix.mat, compute_uv=False)
        rows.append((float(lam), float(s[0] / s[-1]) if s[-1] > 0 else
                     float("inf"), float(s[-1])))
    return rows
