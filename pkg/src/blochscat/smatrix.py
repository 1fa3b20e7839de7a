"""Channel scattering matrices and their limits at spectral singular points.

For lambda off the thresholds and eigenvalues, the open-channel scattering
matrix is

    S(lambda)_{nn'} = delta_{nn'}
        - 2i beta_n^{-1} <e_n, v M(lambda, 0) v e_{n'}> beta_{n'}^{-1},

each channel being one-dimensional, so S is a plain complex matrix over the
open-channel labels.  At a threshold the entries have one-sided limits
expressed through the frozen cascade operators; at an embedded eigenvalue
the limit swaps M for the finite part (T0 + S)^{-1}.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from .birman import channel_split, m_operator
from .cascade import (CascadeData, EigExpansion, build_eig_expansion,
                      build_threshold_cascade, m_eig, m_threshold)
from .errors import CascadeDomainError, ConfigError
from .linalg import fit_power_law, richardson, subspace_inverse
from .torus import FiberContext, PotentialModel, channel_column, max_channel

TOL_UNITARITY = 1e-8

# Right/left approach magnitudes used for threshold extrapolations.
KAPPA_LADDER = (1e-2, 3e-3, 1e-3, 3e-4, 1e-4)


@dataclass(frozen=True)
class SMatrix:
    """Open-channel scattering matrix at one energy."""
    lam: float
    k: float
    channels: tuple[int, ...]
    entries: np.ndarray
    tol_unitarity: float = TOL_UNITARITY
    tol_relaxed: bool = False

    def entry(self, n: int, np_: int) -> complex:
        i, j = self.channels.index(n), self.channels.index(np_)
        return complex(self.entries[i, j])

    @property
    def unitarity_defect(self) -> float:
        s = self.entries
        return float(np.linalg.norm(s.conj().T @ s - np.eye(len(s)), 2))

    def is_unitary(self) -> bool:
        return self.unitarity_defect <= self.tol_unitarity


def _sandwich(pm: PotentialModel, m_mat: np.ndarray, m: int,
              rows: tuple[int, ...], cols: tuple[int, ...],
              beta_row, beta_col) -> np.ndarray:
    """Entries -2i/(beta_n beta_n') <e_n, v A v e_n'> for channel labels."""
    w_rows = np.stack([channel_column(pm, n, m) for n in rows], axis=1)
    w_cols = np.stack([channel_column(pm, n, m) for n in cols], axis=1)
    core = w_rows.conj().T @ m_mat @ w_cols
    br = np.array([beta_row(n) for n in rows])
    bc = np.array([beta_col(n) for n in cols])
    return -2j * core / np.outer(br, bc)


def smatrix(pm: PotentialModel, fiber: FiberContext, lam: float,
            m: int = None, n_inner: int = None,
            tol_unitarity: float = TOL_UNITARITY) -> SMatrix:
    """Scattering matrix at a regular energy lambda.

    The unitarity tolerance is relaxed (with the relaxation recorded on the
    result) when the potential's coefficient-tail report shows the factor
    truncation dominates, which happens for sign-changing V.
    """
    m = pm.v_cutoff // 2 if m is None else m
    n_inner = max_channel(pm, m) if n_inner is None else n_inner
    split = channel_split(fiber, lam, n_inner)
    channels = tuple(sorted(split.open_modes))
    relaxed = False
    if pm.v_decay_report + pm.u_decay_report > 1e-9:
        tol_unitarity = max(tol_unitarity, 1e-5)
        relaxed = True
    if not channels:
        return SMatrix(lam=lam, k=fiber.k, channels=(),
                       entries=np.zeros((0, 0), dtype=complex),
                       tol_unitarity=tol_unitarity, tol_relaxed=relaxed)
    if pm.is_zero:
        return SMatrix(lam=lam, k=fiber.k, channels=channels,
                       entries=np.eye(len(channels), dtype=complex),
                       tol_unitarity=tol_unitarity, tol_relaxed=relaxed)
    mop = m_operator(pm, fiber, lam, m=m, n_inner=n_inner)
    beta = lambda n: split.beta[n]
    ent = _sandwich(pm, mop.mat, m, channels, channels, beta, beta)
    ent += np.eye(len(channels))
    return SMatrix(lam=lam, k=fiber.k, channels=channels, entries=ent,
                   tol_unitarity=tol_unitarity, tol_relaxed=relaxed)


# ---------------------------------------------------------------------------
# Threshold limits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThresholdLimit:
    """One-sided limit of the scattering matrix at a threshold lambda0.

    ``side = "left"`` covers the channels already open below lambda0;
    ``side = "right"`` additionally covers the channels opening at lambda0
    (mixed open/opening entries vanish there).
    """
    lam0: float
    k: float
    side: str
    channels: tuple[int, ...]
    opening: tuple[int, ...]
    entries: np.ndarray
    formula_terms: dict

    def entry(self, n: int, np_: int) -> complex:
        i, j = self.channels.index(n), self.channels.index(np_)
        return complex(self.entries[i, j])

    @property
    def unitarity_defect(self) -> float:
        s = self.entries
        return float(np.linalg.norm(s.conj().T @ s - np.eye(len(s)), 2))


def threshold_limit(pm: PotentialModel, fiber: FiberContext, lam0: float,
                    side: str, cascade: CascadeData = None,
                    m: int = None) -> ThresholdLimit:
    """Limit of S(lambda0 -+ kappa^2) as kappa -> 0 from the given side.

    Open/open entries (both sides):
        delta - 2i beta_n^{-1} <e_n, v S0 (I1(0)+S1)^{-1} S0 v e_n'>
        beta_n'^{-1}.
    Right side only, opening/opening entries:
        delta - 2 <e_n, v (I0(0)+S0)^{-1} v e_n'>
              + 2 <e_n, v C'10(0) S1 (I2(0)+S2)^{-1} S1 C'10(0) v e_n'>;
    mixed open/opening entries vanish.
    """
    if side not in ("left", "right"):
        raise ConfigError("side must be 'left' or 'right'")
    if cascade is None:
        cascade = build_threshold_cascade(pm, fiber, lam0, m=m)
    m = cascade.cutoff
    lam0 = cascade.lam
    n_inner = max_channel(pm, m)
    split = channel_split(fiber, lam0, n_inner)
    opening = cascade.threshold_modes
    already_open = tuple(n for n in split.open_modes if n not in opening)
    channels = tuple(sorted(already_open + (opening if side == "right" else ())))

    beta = lambda n: split.beta[n]
    core_open = cascade.s0 @ cascade.inv1 @ cascade.s0
    dim = len(channels)
    ent = np.zeros((dim, dim), dtype=complex)
    terms = {"ranks": cascade.ranks}
    if already_open:
        blk = _sandwich(pm, core_open, m, already_open, already_open,
                        beta, beta)
        idx = [channels.index(n) for n in already_open]
        ent[np.ix_(idx, idx)] = blk + np.eye(len(already_open))
        terms["open_block"] = "S0 (I1(0)+S1)^{-1} S0"
    if side == "right" and opening:
        w_op = np.stack([channel_column(pm, n, m) for n in opening], axis=1)
        blk = -2.0 * (w_op.conj().T @ cascade.inv0 @ w_op)
        slope = cascade.commutator_slopes.get((1, 0))
        if slope is not None and cascade.ranks[1] > 0:
            inv2 = subspace_inverse(cascade.i2_0 + cascade.s2,
                                    cascade.bases[1],
                                    what="I2(0) + S2 on ran S1")
            mid = slope @ cascade.s1 @ inv2 @ cascade.s1 @ slope
            blk += 2.0 * (w_op.conj().T @ mid @ w_op)
            terms["resonant_correction"] = "C'10(0) S1 (I2(0)+S2)^{-1} S1 C'10(0)"
        idx = [channels.index(n) for n in opening]
        ent[np.ix_(idx, idx)] = blk + np.eye(len(opening))
        terms["opening_block"] = "(I0(0)+S0)^{-1}"
    return ThresholdLimit(lam0=lam0, k=fiber.k, side=side, channels=channels,
                          opening=opening if side == "right" else (),
                          entries=ent, formula_terms=terms)


def smatrix_at_kappa(pm: PotentialModel, fiber: FiberContext,
                     cascade: CascadeData, kappa: complex) -> SMatrix:
    """S(lambda0 - kappa^2) evaluated through the threshold expansion.

    Within the epsilon-guard around a threshold the plain boundary-value
    route is refused; the expansion provides M_k(lambda0, kappa) there, and
    the channel entries keep the same sandwich formula with
    beta_n(lambda0 - kappa^2).
    """
    kappa = complex(kappa)
    lam = cascade.lam - (kappa * kappa).real
    n_inner = max_channel(pm, cascade.cutoff)
    split = channel_split(fiber, lam, n_inner)
    channels = tuple(sorted(split.open_modes))
    if not channels:
        return SMatrix(lam=lam, k=fiber.k, channels=(),
                       entries=np.zeros((0, 0), dtype=complex))
    mth = m_threshold(pm, fiber, cascade.lam, kappa, cascade=cascade)
    beta = lambda n: split.beta[n]
    ent = _sandwich(pm, mth.mat, cascade.cutoff, channels, channels,
                    beta, beta)
    ent += np.eye(len(channels))
    return SMatrix(lam=lam, k=fiber.k, channels=channels, entries=ent)


def limit_consistency_scan(pm: PotentialModel, fiber: FiberContext,
                           lam0: float, kappa_sequence=None,
                           cascade: CascadeData = None,
                           m: int = None) -> dict:
    """Compare threshold_limit with Richardson-extrapolated S-matrices.

    ``kappa_sequence`` holds decreasing magnitudes; real values approach
    from the left (lambda0 - kappa^2), purely imaginary ones from the right
    (-kappa^2 > 0).  Mixed open/opening entries on the right are fitted for
    their |kappa|^(1/2) vanishing rate.
    """
    if kappa_sequence is None:
        kappa_sequence = [k for k in KAPPA_LADDER]
    kappas = [complex(k) for k in kappa_sequence]
    if all(abs(k.imag) == 0 and k.real > 0 for k in kappas):
        side = "left"
        hs = np.array([k.real for k in kappas])
    elif all(k.real == 0 and k.imag < 0 for k in kappas):
        side = "right"
        hs = np.array([-k.imag for k in kappas])
    elif all(k.real == 0 and k.imag != 0 for k in kappas):
        # allow +i s input, normalize into the admitted sector
        side = "right"
        hs = np.array([abs(k.imag) for k in kappas])
        kappas = [complex(0, -h) for h in hs]
    else:
        raise ConfigError("kappa sequence must be all real (left) or all "
                          "purely imaginary (right)")
    if not np.all(np.diff(hs) < 0):
        raise ConfigError("kappa magnitudes must decrease")

    if cascade is None:
        cascade = build_threshold_cascade(pm, fiber, lam0, m=m)
    lam0 = cascade.lam
    limit = threshold_limit(pm, fiber, lam0, side, cascade=cascade, m=m)
    channels = limit.channels

    samples = []
    for kap in kappas:
        sm = smatrix_at_kappa(pm, fiber, cascade, kap)
        block = np.zeros((len(channels), len(channels)), dtype=complex)
        for i, n in enumerate(channels):
            for j, np_ in enumerate(channels):
                if n in sm.channels and np_ in sm.channels:
                    block[i, j] = sm.entry(n, np_)
        samples.append(block)
    samples = np.stack(samples)

    extrapolated = richardson(hs, samples, order=2)
    opening = set(limit.opening)
    report = {
        "lambda0": lam0, "side": side, "channels": list(channels),
        "max_deviation": 0.0, "entries": [], "mixed_rates": [],
    }
    max_dev = 0.0
    for i, n in enumerate(channels):
        for j, np_ in enumerate(channels):
            mixed = side == "right" and ((n in opening) != (np_ in opening))
            dev = abs(extrapolated[i, j] - limit.entries[i, j])
            entry_report = {"n": n, "np": np_, "deviation": float(dev),
                            "mixed": mixed}
            if mixed:
                # Mixed entries vanish like |kappa|^(1/2); a polynomial
                # extrapolation cannot resolve that, so they are checked by
                # their fitted decay rate instead of the deviation.
                mags = np.abs(samples[:, i, j])
                if np.all(mags > 1e-13):
                    rate = fit_power_law(hs, mags)
                    entry_report["rate"] = float(rate)
                    report["mixed_rates"].append(float(rate))
                else:
                    entry_report["rate"] = None  # identically zero entry
            else:
                max_dev = max(max_dev, dev)
            report["entries"].append(entry_report)
    report["max_deviation"] = float(max_dev)
    return report


def eig_limit(pm: PotentialModel, fiber: FiberContext, lam: float,
              expansion: EigExpansion = None, m: int = None) -> SMatrix:
    """Limit of the scattering matrix at an embedded eigenvalue:

        delta - 2i beta_n^{-1} <e_n, v (J0(0)+S)^{-1} v e_n'> beta_n'^{-1}.

    With rank(S) = 0 this is exactly smatrix(lam).
    """
    if expansion is None:
        expansion = build_eig_expansion(pm, fiber, lam, m=m)
    m = expansion.cutoff
    finite = m_eig(pm, fiber, lam, 0.0, expansion=expansion)
    n_inner = max_channel(pm, m)
    split = channel_split(fiber, expansion.lam, n_inner)
    channels = tuple(sorted(split.open_modes))
    beta = lambda n: split.beta[n]
    ent = _sandwich(pm, finite.mat, m, channels, channels, beta, beta)
    ent += np.eye(len(channels))
    return SMatrix(lam=expansion.lam, k=fiber.k, channels=channels,
                   entries=ent)


# ---------------------------------------------------------------------------
# Scan output
# ---------------------------------------------------------------------------

def scan_csv(matrices: list[SMatrix]) -> str:
    """CSV scan format: lambda, n, n', re, im, unitarity_defect."""
    buf = io.StringIO()
    buf.write("lambda,n,np,re,im,unitarity_defect\n")
    for sm in matrices:
        defect = sm.unitarity_defect
        for i, n in enumerate(sm.channels):
            for j, np_ in enumerate(sm.channels):
                val = sm.entries[i, j]
                buf.write(f"{sm.lam:.17g},{n},{np_},{val.real:.17g},"
                          f"{val.imag:.17g},{defect:.17g}\n")
    return buf.getvalue()


def threshold_limit_json(limit: ThresholdLimit) -> str:
    return json.dumps({
        "lambda0": limit.lam0, "k": limit.k, "side": limit.side,
        "channels": list(limit.channels), "opening": list(limit.opening),
        "entries": [{"n": n, "np": np_,
                     "re": float(limit.entries[i, j].real),
                     "im": float(limit.entries[i, j].imag)}
                    for i, n in enumerate(limit.channels)
                    for j, np_ in enumerate(limit.channels)],
        "unitarity_defect": limit.unitarity_defect,
        "formula_terms": {key: (list(val) if isinstance(val, tuple) else val)
                          for key, val in limit.formula_terms.items()},
    }, indent=2)
