"""Eigenvalue search for the perturbed fiber operator.

A value lambda off the thresholds is an eigenvalue exactly when

    K = ker( u + sum_closed v P_n v / beta^2 )  intersect
        ( ker(P_n v) for every open n )

is nontrivial, and the multiplicity equals dim K.  The kernel is probed by
the smallest singular value of the closed-channel operator stacked over the
open-channel constraint rows.  Possible eigenvalues only exist within
||V||_oo^2 to the left of a threshold (or below the bottom of the
continuous spectrum), which prunes the scan.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .birman import EPS_THRESHOLD, boundary_bs, channel_split
from .errors import ConfigError
from .torus import (FiberContext, PotentialModel, channel_column, max_channel,
                    u_operator)

EPS_EIG = 1e-7          # relative singular-value tolerance for a kernel
REFINE_MAXITER = 80


@dataclass(frozen=True)
class Eigenvalue:
    lam: float
    multiplicity: int
    min_singular: float
    cluster_width: float    # spread of the near-zero singular values
    near_threshold: bool = False


@dataclass(frozen=True)
class EigenReport:
    k: float
    interval: tuple[float, float]
    eigenvalues: list[Eigenvalue]
    unresolved: list[Eigenvalue]
    free_windows: list[tuple[float, float]]
    scan: list[tuple[float, float]] = field(repr=False, default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "k": self.k,
            "interval": list(self.interval),
            "eigenvalues": [{
                "lambda": e.lam, "multiplicity": e.multiplicity,
                "min_singular": e.min_singular,
                "cluster_width": e.cluster_width} for e in self.eigenvalues],
            "unresolved_near_threshold": [{
                "lambda": e.lam, "min_singular": e.min_singular}
                for e in self.unresolved],
            "free_windows": [list(w) for w in self.free_windows],
        }, indent=2)

    def scan_csv(self) -> str:
        buf = io.StringIO()
        buf.write("lambda,sigma_min\n")
        for lam, smin in self.scan:
            buf.write(f"{lam:.17g},{smin:.17g}\n")
        return buf.getvalue()


def _stacked_matrix(pm: PotentialModel, fiber: FiberContext, lam: float,
                    m: int, n_inner: int) -> tuple[np.ndarray, int]:
    """[A ; rho * open-channel rows] whose sigma_min probes the kernel."""
    split = channel_split(fiber, lam, n_inner)
    dim = 2 * m + 1
    a = u_operator(pm, m).mat.copy()
    for n in split.closed_modes:
        w = channel_column(pm, n, m)
        a += np.outer(w, w.conj()) / split.beta[n] ** 2
    rho = np.linalg.norm(a, 2)
    rows = [rho * channel_column(pm, n, m).conj() for n in split.open_modes]
    stacked = np.vstack([a] + [r[None, :] for r in rows]) if rows else a
    return stacked, dim


def kernel_indicator(pm: PotentialModel, fiber: FiberContext, lam: float,
                     m: int = None, n_inner: int = None,
                     eps_threshold: float = EPS_THRESHOLD) -> float:
    """Smallest singular value of the stacked kernel conditions at lambda."""
    m = pm.v_cutoff // 2 if m is None else m
    n_inner = max_channel(pm, m) if n_inner is None else n_inner
    modes = np.arange(-n_inner, n_inner + 1)
    if np.min(np.abs(fiber.threshold(modes) - lam)) <= eps_threshold:
        raise ConfigError(f"lambda={lam} too close to a threshold")
    stacked, _ = _stacked_matrix(pm, fiber, lam, m, n_inner)
    s = np.linalg.svd(stacked, compute_uv=False)
    return float(s[-1])


def localization_windows(pm: PotentialModel, fiber: FiberContext,
                         interval: tuple[float, float],
                         n_inner: int = None) -> list[tuple[float, float]]:
    """Subintervals of ``interval`` that cannot contain eigenvalues.

    Between consecutive thresholds t_i < t_{i+1}, the closed-channel sum is
    bounded by ||V||_oo / sqrt(t_{i+1} - lambda); the kernel is empty while
    that bound stays below 1, i.e. on (t_i, t_{i+1} - ||V||_oo^2).
    """
    lo, hi = interval
    if lo > hi:
        raise ConfigError("empty interval")
    v2 = pm.sup_norm ** 2
    if n_inner is None:
        n_inner = max(8, int(math.sqrt(max(hi, 0.0))) + 4)
    kn = max(n_inner, fiber.n_channels)
    fib = FiberContext(fiber.k, n_channels=kn)
    thresholds = [lam for lam, _ in fib.sorted_thresholds()]
    edges = [-math.inf] + thresholds
    windows = []
    for left, right in zip(edges[:-1], edges[1:]):
        w_lo = max(lo, left)
        w_hi = min(hi, right - v2)
        if w_hi > w_lo:
            windows.append((w_lo, w_hi))
    return windows


def _refine_minimum(func, lo: float, hi: float) -> tuple[float, float]:
    res = minimize_scalar(func, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12, "maxiter": REFINE_MAXITER})
    if not res.success and res.fun is None:
        raise ConfigError(f"minimum refinement failed on [{lo}, {hi}]")
    return float(res.x), float(res.fun)


def _quadratic_vertex(func, x0: float, h: float,
                      lo: float, hi: float) -> tuple[float, float]:
    """Parabola fit of func^2 through (x0-h, x0, x0+h), in centered
    coordinates; stabilizes the dip location where sigma_min is kinked."""
    xs = np.array([max(lo, x0 - h), x0, min(hi, x0 + h)])
    if xs[0] >= xs[1] or xs[1] >= xs[2]:
        return x0, func(x0)
    ys = np.array([func(x) for x in xs])
    coeff = np.polyfit(xs - x0, ys ** 2, 2)
    if coeff[0] <= 0:
        return x0, ys[1]
    vert = float(np.clip(x0 - coeff[1] / (2 * coeff[0]), lo, hi))
    fv = func(vert)
    if fv <= ys[1]:
        return vert, fv
    return x0, ys[1]


def find_eigenvalues(pm: PotentialModel, fiber: FiberContext,
                     interval: tuple[float, float], grid_step: float = 0.02,
                     m: int = None, n_inner: int = None,
                     eps_eig: float = EPS_EIG,
                     eps_threshold: float = EPS_THRESHOLD) -> EigenReport:
    """Scan the kernel indicator over ``interval`` and locate its roots.

    The scan skips eps_threshold-neighborhoods of the thresholds and the
    eigenvalue-free localization windows; dips are refined by bounded
    minimization plus a quadratic fit, and the multiplicity is the number
    of singular values below the (relative) kernel tolerance at the root.
    Roots closer than 10*eps_threshold to a threshold are reported as
    unresolved near-threshold candidates.
    """
    lo, hi = interval
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo >= hi:
        raise ConfigError(f"bad interval {interval}")
    m = pm.v_cutoff // 2 if m is None else m
    n_inner = max_channel(pm, m) if n_inner is None else n_inner

    free = localization_windows(pm, fiber, interval, n_inner=n_inner)

    def allowed(lam: float) -> bool:
        return not any(w_lo < lam < w_hi for w_lo, w_hi in free)

    modes = np.arange(-n_inner, n_inner + 1)
    thr = np.sort(fiber.threshold(modes))

    def indicator(lam: float) -> float:
        stacked, _ = _stacked_matrix(pm, fiber, lam, m, n_inner)
        s = np.linalg.svd(stacked, compute_uv=False)
        return float(s[-1])

    # Segment the interval at thresholds, padded by the guard width.
    cuts = [lo] + [t for t in np.unique(thr) if lo < t < hi] + [hi]
    scan: list[tuple[float, float]] = []
    candidates: list[tuple[float, float]] = []
    guard = 2 * eps_threshold
    for seg_lo, seg_hi in zip(cuts[:-1], cuts[1:]):
        a, b = seg_lo, seg_hi
        if np.min(np.abs(thr - a)) < guard:
            a += guard
        if np.min(np.abs(thr - b)) < guard:
            b -= guard
        if b <= a:
            continue
        count = max(int(np.ceil((b - a) / grid_step)) + 1, 5)
        lams = np.linspace(a, b, count)
        lams = np.array([x for x in lams if allowed(x)])
        if lams.size == 0:
            continue
        vals = np.array([indicator(x) for x in lams])
        scan.extend(zip(lams.tolist(), vals.tolist()))
        scale = float(np.median(vals)) + 1e-300
        for i in range(len(lams)):
            left = vals[i - 1] if i > 0 else np.inf
            right = vals[i + 1] if i + 1 < len(lams) else np.inf
            if vals[i] <= left and vals[i] <= right and vals[i] < 0.5 * scale:
                blo = lams[i - 1] if i > 0 else a
                bhi = lams[i + 1] if i + 1 < len(lams) else b
                candidates.append((float(blo), float(bhi)))

    eigenvalues: list[Eigenvalue] = []
    unresolved: list[Eigenvalue] = []
    for blo, bhi in candidates:
        x, fx = _refine_minimum(indicator, blo, bhi)
        # Iterated vertex fits cancel the cubic skew of sigma_min^2 around
        # the kink; each pass shrinks the fit window by 10x.
        scale = max(1.0, abs(x))
        for h in (1e-3 * scale, 1e-4 * scale, 1e-5 * scale, 1e-6 * scale):
            x, fx = _quadratic_vertex(indicator, x, h, blo, bhi)
        stacked, _ = _stacked_matrix(pm, fiber, x, m, n_inner)
        s = np.linalg.svd(stacked, compute_uv=False)
        ref = float(s[0])
        below = s[s < eps_eig * ref]
        if below.size == 0:
            continue
        ev = Eigenvalue(lam=float(x), multiplicity=int(below.size),
                        min_singular=float(s[-1]),
                        cluster_width=float(below.max() - below.min())
                        if below.size > 1 else 0.0)
        if np.min(np.abs(thr - x)) < 10 * eps_threshold:
            unresolved.append(Eigenvalue(ev.lam, ev.multiplicity,
                                         ev.min_singular, ev.cluster_width,
                                         near_threshold=True))
        else:
            # Deduplicate refinements that landed on the same root.
            if eigenvalues and abs(eigenvalues[-1].lam - ev.lam) < 1e-8:
                continue
            eigenvalues.append(ev)

    eigenvalues.sort(key=lambda e: e.lam)
    return EigenReport(k=fiber.k, interval=(lo, hi), eigenvalues=eigenvalues,
                       unresolved=unresolved, free_windows=free, scan=scan)


def full_boundary_sigma_min(pm: PotentialModel, fiber: FiberContext,
                            lam: float, m: int = None) -> float:
    """sigma_min of u + G R0(lam + i0) G^*: consistency probe for roots."""
    bs = boundary_bs(pm, fiber, lam, m=m)
    u = u_operator(pm, bs.matrix.cutoff).mat
    s = np.linalg.svd(u + bs.matrix.mat, compute_uv=False)
    return float(s[-1])
