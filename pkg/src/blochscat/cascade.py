"""Iterated projection-inversion expansions of the boundary operator pencil.

Near a spectral singular point ``lam`` the boundary operator is written as a
pencil in the small parameter kappa (the spectral variable is
``z = lam - kappa^2`` with Re kappa >= 0 >= Im kappa):

    u + G R0_k(lam - kappa^2) G^*  =  (1/kappa) I0(kappa),
    I0(kappa) = v P v + kappa M1(kappa),

with P the projection onto the modes whose threshold sits exactly at lam.
Each level freezes the pencil at kappa = 0, projects onto its kernel
(S0 >= S1 >= S2) and inverts the next pencil there:

    I_{j+1}(kappa) = sum_{i>=0} (-kappa)^i S_j {M_{j+1}(kappa)
                     (I_j(0)+S_j)^{-1}}^{i+1} S_j .

After at most three levels the inversion closes, and the boundary operator
inverse is the four-term expression assembled in :func:`m_threshold`.

At an embedded eigenvalue off the thresholds the pencil is quadratic,
``J0(kappa) = T0 + kappa^2 T1(kappa)`` with T0 the full boundary operator,
and a single level suffices (:func:`m_eig`).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .birman import _sqrt_upper_array, boundary_bs
from .errors import CascadeDomainError, SeriesDivergenceError
from .linalg import (COND_CAP, EPS_RANK, RANK_GAP, checked_inverse,
                     kernel_basis, operator_norm, range_and_kernel, richardson,
                     subspace_inverse)
from .torus import (FiberContext, FourierOperator, PotentialModel,
                    channel_column, max_channel, u_operator)

SERIES_TOL = 1e-14
SERIES_MAX_TERMS = 60

# Finite-difference step for the commutator-derivative cross-check.
FD_STEP = 1e-4
FD_MISMATCH_TOL = 1e-5


def validate_kappa(kappa: complex, allow_zero: bool = False) -> complex:
    """Check kappa lies in the closed quarter-disk Re >= 0 >= Im."""
    kappa = complex(kappa)
    if kappa == 0:
        if allow_zero:
            return kappa
        raise CascadeDomainError("kappa = 0 not admitted here")
    if kappa.real < 0.0 or kappa.imag > 0.0:
        raise CascadeDomainError(
            f"kappa={kappa} outside the sector Re >= 0 >= Im")
    return kappa


# ---------------------------------------------------------------------------
# Generic one-level inversion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JNInversion:
    """Result of one projection-inversion step."""
    b: np.ndarray          # the next-level pencil B(z), supported on ran S
    a_inv: np.ndarray      # A(z)^{-1} on the ambient space
    residual: float        # || A(z) A(z)^{-1} - 1 ||
    terms_used: int


def _series(s_proj: np.ndarray, x: np.ndarray, z: complex,
            start_power: int = 1, tol: float = SERIES_TOL,
            max_terms: int = SERIES_MAX_TERMS) -> tuple[np.ndarray, int]:
    """sum_{j>=0} (-z)^j S x^{j+start_power} S with growth detection."""
    acc = np.zeros_like(x)
    cur = np.linalg.matrix_power(x, start_power)
    coef = 1.0 + 0.0j
    norms: list[float] = []
    for j in range(max_terms):
        term = coef * (s_proj @ cur @ s_proj)
        acc = acc + term
        tnorm = operator_norm(term)
        norms.append(tnorm)
        if tnorm < tol * max(1.0, operator_norm(acc)):
            return acc, j + 1
        if j >= 3 and norms[-1] >= norms[-4] and norms[-1] > tol:
            raise SeriesDivergenceError(
                "pencil series terms stopped decreasing (|z| too large): "
                f"|z|={abs(z):.3e}, last terms {norms[-4:]}")
        cur = cur @ x
        coef *= -z
    return acc, max_terms


def jn_invert(a0: np.ndarray, a1: Callable[[complex], np.ndarray] | np.ndarray,
              s_proj: np.ndarray, z: complex,
              tol: float = SERIES_TOL, cond_cap: float = COND_CAP) -> JNInversion:
    """Invert ``A(z) = A0 + z A1(z)`` through the projection ``S``.

    Requires (i) A0 + S invertible, (ii) S (A0+S)^{-1} S = S.  Returns the
    uniformly bounded pencil

        B(z) = sum_{j>=0} (-z)^j S {A1(z) (A0+S)^{-1}}^{j+1} S

    together with

        A(z)^{-1} = (A(z)+S)^{-1}
                    + (1/z) (A(z)+S)^{-1} S B(z)^{-1} S (A(z)+S)^{-1}

    and the residual of A(z) A(z)^{-1} = 1.
    """
    a0 = np.asarray(a0, dtype=complex)
    s_proj = np.asarray(s_proj, dtype=complex)
    a1_mat = np.asarray(a1(z) if callable(a1) else a1, dtype=complex)
    z = complex(z)
    if z == 0:
        raise CascadeDomainError("jn_invert needs z != 0")

    inv_a0s = checked_inverse(a0 + s_proj, cond_cap, "A0 + S")
    compat = operator_norm(s_proj @ inv_a0s @ s_proj - s_proj)
    if compat > 1e-10 * max(1.0, operator_norm(s_proj)):
        raise CascadeDomainError(
            f"S (A0+S)^{{-1}} S = S fails (residual {compat:.3e})")

    b, terms = _series(s_proj, a1_mat @ inv_a0s, z, tol=tol)

    a_z = a0 + z * a1_mat
    inv_azs = checked_inverse(a_z + s_proj, cond_cap, "A(z) + S")
    s_basis = range_and_kernel(s_proj)[0] if np.any(s_proj) else \
        np.zeros((a0.shape[0], 0), dtype=complex)
    b_inv = subspace_inverse(b, s_basis, cond_cap, "B(z) on ran S")
    a_inv = inv_azs + (1.0 / z) * (inv_azs @ s_proj @ b_inv @ s_proj @ inv_azs)
    residual = operator_norm(a_z @ a_inv - np.eye(a0.shape[0]))
    return JNInversion(b=b, a_inv=a_inv, residual=residual, terms_used=terms)


# ---------------------------------------------------------------------------
# Threshold cascade
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CascadeData:
    """Frozen data of the three-level expansion at a threshold."""
    fiber: FiberContext
    lam: float
    cutoff: int
    threshold_modes: tuple[int, ...]          # modes opening exactly at lam
    mode_proj: np.ndarray                     # P = sum of their projections
    s_projs: tuple[np.ndarray, np.ndarray, np.ndarray]   # S0, S1, S2
    ranks: tuple[int, int, int]               # dim ran S_j
    bases: tuple[np.ndarray, np.ndarray, np.ndarray]     # orthonormal bases
    i0_0: np.ndarray                          # v P v
    m1_0: np.ndarray
    i1_0: np.ndarray
    m2_0: np.ndarray
    i2_0: np.ndarray
    i3_0: np.ndarray | None
    inv0: np.ndarray                          # (I0(0) + S0)^{-1}
    inv1: np.ndarray                          # (I1(0) + S1)^{-1} on ran S0
    inv2: np.ndarray | None                   # (I2(0) + S2)^{-1} on ran S1
    commutator_slopes: dict
    identity_residuals: dict
    rank_gaps: dict
    # channel data for pencil evaluation at kappa != 0
    _w_other: np.ndarray = field(repr=False, default=None)
    _lam_other: np.ndarray = field(repr=False, default=None)
    _u_mat: np.ndarray = field(repr=False, default=None)

    @property
    def s0(self) -> np.ndarray:
        return self.s_projs[0]

    @property
    def s1(self) -> np.ndarray:
        return self.s_projs[1]

    @property
    def s2(self) -> np.ndarray:
        return self.s_projs[2]

    # -- pencil pieces ------------------------------------------------------

    def m1(self, kappa: complex) -> np.ndarray:
        """u + i sum_{n not at lam} v P_n v / sqrt(lam - kappa^2 - lam_n)."""
        roots = _sqrt_upper_array(self.lam - self._lam_other - kappa * kappa)
        return self._u_mat + (self._w_other * (1j / roots)) @ \
            self._w_other.conj().T

    def _inv_sqrt_diff(self, kappa: complex) -> np.ndarray:
        """1/sqrt(b - kappa^2) - 1/sqrt(b) for b = lam - lam_n, stably.

        Uses the exact rewrite kappa^2 / (sqrt(a) sqrt(b) (sqrt(a)+sqrt(b)))
        with a = b - kappa^2, immune to cancellation for small kappa.
        """
        b = self.lam - self._lam_other
        ra = _sqrt_upper_array(b - kappa * kappa)
        rb = _sqrt_upper_array(b + 0j)
        return kappa * kappa / (ra * rb * (ra + rb))

    def m2(self, kappa: complex) -> np.ndarray:
        """First-order pencil at level 1 (kappa != 0)."""
        kappa = complex(kappa)
        s0 = self.s0
        diff = self._inv_sqrt_diff(kappa) / kappa
        drift = (self._w_other * (1j * diff)) @ self._w_other.conj().T
        tail, _ = _series(s0, self.m1(kappa) @ self.inv0, kappa, start_power=2)
        return s0 @ drift @ s0 - tail

    def i1(self, kappa: complex) -> tuple[np.ndarray, int]:
        return _series(self.s0, self.m1(kappa) @ self.inv0, kappa)

    def i2(self, kappa: complex) -> tuple[np.ndarray, int]:
        return _series(self.s1, self.m2(kappa) @ self.inv1, kappa)

    def i3(self, kappa: complex) -> np.ndarray:
        """One-step closed form (1/kappa)(S2 - S2 (I2(kappa)+S2)^{-1} S2)."""
        i2k, _ = self.i2(kappa)
        j2 = subspace_inverse(i2k + self.s2, self.bases[1],
                              what="I2(kappa) + S2 on ran S1")
        return (self.s2 - self.s2 @ j2 @ self.s2) / kappa


def _commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def build_threshold_cascade(pm: PotentialModel, fiber: FiberContext,
                            lam: float, m: int = None, n_inner: int = None,
                            eps_rank: float = EPS_RANK,
                            gap: float = RANK_GAP) -> CascadeData:
    """Construct all frozen operators, kernel projections and derivatives
    of the expansion at the threshold ``lam``.

    Kernels are detected by singular values below ``eps_rank`` relative,
    with a mandatory factor-``gap`` separation from the kept ones.
    """
    if pm.is_zero:
        raise CascadeDomainError(
            "V == 0: the boundary operator is the identity, no expansion "
            "is needed")
    m = pm.v_cutoff // 2 if m is None else m
    n_inner = max_channel(pm, m) if n_inner is None else n_inner

    modes = np.arange(-n_inner, n_inner + 1)
    lams = fiber.threshold(modes)
    at_lam = np.abs(lams - lam) <= 1e-9 * max(1.0, abs(lam))
    if not np.any(at_lam):
        raise CascadeDomainError(
            f"lambda={lam} is not a channel threshold of fiber k={fiber.k}")
    thr_modes = tuple(int(n) for n in modes[at_lam])
    lam = float(np.mean(lams[at_lam]))      # snap to the exact threshold

    dim = 2 * m + 1
    w_all = np.stack([channel_column(pm, int(n), m) for n in modes], axis=1)
    w_thr = w_all[:, at_lam]
    w_other = w_all[:, ~at_lam]
    lam_other = lams[~at_lam]
    u_mat = u_operator(pm, m).mat

    mode_proj = np.zeros((dim, dim), dtype=complex)
    for n in thr_modes:
        if abs(n) <= m:
            mode_proj[n + m, n + m] = 1.0

    rank_gaps: dict = {}

    # Level 0: I0(0) = v P v = sum of the rank-one columns at the threshold.
    i0_0 = w_thr @ w_thr.conj().T
    sv0 = np.linalg.svd(w_thr, compute_uv=False)
    rank_gaps["level0"] = [float(s / sv0[0]) for s in sv0] if sv0.size else []
    ran0, q0 = range_and_kernel(w_thr, eps_rank, gap)
    s0 = q0 @ q0.conj().T
    del ran0

    stub = CascadeData(
        fiber=fiber, lam=lam, cutoff=m, threshold_modes=thr_modes,
        mode_proj=mode_proj, s_projs=(s0, np.zeros_like(s0), np.zeros_like(s0)),
        ranks=(q0.shape[1], 0, 0), bases=(q0, None, None),
        i0_0=i0_0, m1_0=None, i1_0=None, m2_0=None, i2_0=None, i3_0=None,
        inv0=None, inv1=None, inv2=None, commutator_slopes={},
        identity_residuals={}, rank_gaps={},
        _w_other=w_other, _lam_other=lam_other, _u_mat=u_mat)

    m1_0 = stub.m1(0.0)
    inv0 = checked_inverse(i0_0 + s0, what="I0(0) + S0")
    i1_0 = s0 @ m1_0 @ s0

    # Level 1 kernel, inside ran S0.
    a1_sub = q0.conj().T @ i1_0 @ q0
    sv1 = np.linalg.svd(a1_sub, compute_uv=False)
    rank_gaps["level1"] = [float(s / sv1[0]) for s in sv1[-4:]] if sv1.size else []
    k1 = kernel_basis(a1_sub, eps_rank, gap)
    q1 = q0 @ k1
    s1 = q1 @ q1.conj().T
    inv1 = subspace_inverse(i1_0 + s1, q0, what="I1(0) + S1 on ran S0")

    m2_0 = -s0 @ m1_0 @ inv0 @ m1_0 @ s0
    i2_0 = s1 @ m2_0 @ s1

    # Level 2 kernel, inside ran S1.
    if q1.shape[1] > 0:
        a2_sub = q1.conj().T @ i2_0 @ q1
        sv2 = np.linalg.svd(a2_sub, compute_uv=False)
        rank_gaps["level2"] = [float(s / sv2[0]) for s in sv2] if sv2.size and sv2[0] > 0 else []
        k2 = kernel_basis(a2_sub, eps_rank, gap) if sv2.size and sv2[0] > 0 \
            else np.eye(q1.shape[1], dtype=complex)
        q2 = q1 @ k2
    else:
        q2 = np.zeros((dim, 0), dtype=complex)
        rank_gaps["level2"] = []
    s2 = q2 @ q2.conj().T
    inv2 = subspace_inverse(i2_0 + s2, q1, what="I2(0) + S2 on ran S1") \
        if q1.shape[1] > 0 else None

    data = CascadeData(
        fiber=fiber, lam=lam, cutoff=m, threshold_modes=thr_modes,
        mode_proj=mode_proj, s_projs=(s0, s1, s2),
        ranks=(q0.shape[1], q1.shape[1], q2.shape[1]),
        bases=(q0, q1, q2),
        i0_0=i0_0, m1_0=m1_0, i1_0=i1_0, m2_0=m2_0, i2_0=i2_0, i3_0=None,
        inv0=inv0, inv1=inv1, inv2=inv2,
        commutator_slopes={}, identity_residuals={}, rank_gaps=rank_gaps,
        _w_other=w_other, _lam_other=lam_other, _u_mat=u_mat)

    # I3(0): only a nontrivial object when the level-2 kernel is nonzero.
    i3_0 = None
    if q2.shape[1] > 0:
        hs = np.array([4e-4, 2e-4, 1e-4])
        vals = np.stack([data.i3(h) for h in hs])
        i3_0 = richardson(hs, vals, order=2)
        data = replace(data, i3_0=i3_0)

    slopes = _commutator_slopes(data)
    residuals = _identity_residuals(data, w_all, lams)
    return replace(data, commutator_slopes=slopes,
                   identity_residuals=residuals)


def level_inverse(data: CascadeData, level: int, kappa: complex) -> np.ndarray:
    """(I_level(kappa) + S_level)^{-1} within its ambient space."""
    if level == 0:
        i0k = data.i0_0 + kappa * data.m1(kappa)
        return checked_inverse(i0k + data.s0, what="I0(kappa) + S0")
    if level == 1:
        i1k, _ = data.i1(kappa)
        return subspace_inverse(i1k + data.s1, data.bases[0],
                                what="I1(kappa) + S1 on ran S0")
    if level == 2:
        i2k, _ = data.i2(kappa)
        return subspace_inverse(i2k + data.s2, data.bases[1],
                                what="I2(kappa) + S2 on ran S1")
    raise ValueError("level must be 0, 1 or 2")


def commutator(data: CascadeData, ell: int, em: int,
               kappa: complex) -> np.ndarray:
    """C_{lm}(kappa) = [S_l, (I_m(kappa) + S_m)^{-1}], for 2 >= l >= m >= 0."""
    if not 2 >= ell >= em >= 0:
        raise ValueError("need 2 >= l >= m >= 0")
    return _commutator(data.s_projs[ell], level_inverse(data, em, kappa))


def _commutator_slopes(data: CascadeData) -> dict:
    """C'_{lm}(0) = lim C_{lm}(kappa)/kappa for all 2 >= l >= m >= 0.

    For m = 0, 1 the frozen first-order term gives
    C'_{lm}(0) = -[S_l, (I_m(0)+S_m)^{-1} M_{m+1}(0) (I_m(0)+S_m)^{-1}],
    cross-checked against finite differences of C_{lm}(kappa)/kappa.
    For m = 2 there is no closed first-order term; finite differences only.
    """
    dim = data.i0_0.shape[0]
    zero = np.zeros((dim, dim), dtype=complex)
    slopes: dict = {}
    d_inv = {0: -data.inv0 @ data.m1_0 @ data.inv0,
             1: -data.inv1 @ data.m2_0 @ data.inv1}
    for ell in range(3):
        for em in range(ell + 1):
            s_l = data.s_projs[ell]
            if not np.any(np.abs(s_l) > 0):
                slopes[(ell, em)] = zero
                continue
            if em < 2:
                analytic = _commutator(s_l, d_inv[em])
                hs = np.array([FD_STEP, FD_STEP / 2, FD_STEP / 4])
                fd = richardson(hs, np.stack(
                    [commutator(data, ell, em, h) / h for h in hs]), order=2)
                mismatch = operator_norm(analytic - fd)
                if mismatch > FD_MISMATCH_TOL * max(1.0, operator_norm(analytic)):
                    raise CascadeDomainError(
                        f"commutator derivative C'({ell},{em}) analytic/FD "
                        f"mismatch {mismatch:.3e}")
                slopes[(ell, em)] = analytic
            else:
                hs = np.array([4e-4, 2e-4, 1e-4])
                vals = np.stack([commutator(data, ell, em, h) / h for h in hs])
                slopes[(ell, em)] = richardson(hs, vals, order=2)
    return slopes


def _identity_residuals(data: CascadeData, w_all: np.ndarray,
                        lams: np.ndarray) -> dict:
    """Numerical residuals of the structural identities of the cascade."""
    s0, s1, s2 = data.s_projs
    res: dict = {}
    for j, s in enumerate((s0, s1, s2)):
        res[f"S{j} idempotent"] = operator_norm(s @ s - s)
        res[f"S{j} selfadjoint"] = operator_norm(s - s.conj().T)
    res["S1 S0 = S1"] = operator_norm(s1 @ s0 - s1)
    res["S0 S1 = S1"] = operator_norm(s0 @ s1 - s1)
    res["S2 S1 = S2"] = operator_norm(s2 @ s1 - s2)
    res["S0 (I0+S0)^-1 S0 = S0"] = operator_norm(s0 @ data.inv0 @ s0 - s0)
    res["S1 (I1+S1)^-1 S1 = S1"] = operator_norm(s1 @ data.inv1 @ s1 - s1)
    if data.inv2 is not None:
        res["S2 (I2+S2)^-1 S2 = S2"] = operator_norm(s2 @ data.inv2 @ s2 - s2)

    # P_n v S_j = 0 relations: columns of v e_n annihilated by the kernels.
    at_lam = np.abs(lams - data.lam) <= 1e-9 * max(1.0, abs(data.lam))
    thr = [np.linalg.norm(s0 @ w_all[:, i]) for i in np.nonzero(at_lam)[0]]
    res["Pn v S0 = 0 (n at lam)"] = max(thr) if thr else 0.0
    opened = [np.linalg.norm(s1 @ w_all[:, i])
              for i in range(w_all.shape[1]) if lams[i] <= data.lam]
    res["Pn v S1 = 0 (n open)"] = max(opened) if opened else 0.0

    y = 0.5 * (data.m1_0 + data.m1_0.conj().T)
    res["Y S2 = 0"] = operator_norm(y @ s2)
    res["S2 Y = 0"] = operator_norm(s2 @ y)
    res["M1(0) S2 = 0"] = operator_norm(data.m1_0 @ s2)
    res["S2 M1(0) = 0"] = operator_norm(s2 @ data.m1_0)

    # -I2(0) is positive on ran S1, and equals S1 Y (I0+S0)^{-1} Y S1 there.
    q1 = data.bases[1]
    if q1.shape[1] > 0:
        neg = -(q1.conj().T @ data.i2_0 @ q1)
        res["-I2(0) min eigenvalue on ran S1"] = float(
            np.min(np.linalg.eigvalsh(0.5 * (neg + neg.conj().T))))
        res["I2(0) = -S1 Y inv0 Y S1"] = operator_norm(
            data.i2_0 + s1 @ y @ data.inv0 @ y @ s1)
    if data.i3_0 is not None:
        q2 = data.bases[2]
        sub = q2.conj().T @ data.i3_0 @ q2
        sv = np.linalg.svd(sub, compute_uv=False)
        res["I3(0) smallest singular value on ran S2"] = float(sv[-1])
    return res


# ---------------------------------------------------------------------------
# The boundary-operator inverse near a threshold
# ---------------------------------------------------------------------------

def m_threshold(pm: PotentialModel, fiber: FiberContext, lam: float,
                kappa: complex, cascade: CascadeData = None,
                m: int = None) -> FourierOperator:
    """M_k(lam, kappa): the pencil inverse at threshold lam.

    For kappa != 0 in the closed quarter-disk this evaluates the four-term
    expansion; inside the open quarter it agrees with the direct inverse of
    u + G R0_k(lam - kappa^2) G^*.  At kappa = 0 the 1/kappa terms must be
    annihilated (S1 = 0), otherwise the limit does not exist and
    CascadeDomainError is raised.
    """
    if pm.is_zero:
        mm = (pm.v_cutoff // 2 if m is None else m)
        return FourierOperator(mm, np.eye(2 * mm + 1, dtype=complex))
    if cascade is None:
        cascade = build_threshold_cascade(pm, fiber, lam, m=m)
    kappa = validate_kappa(kappa, allow_zero=True)
    s0, s1, s2 = cascade.s_projs

    if kappa == 0:
        if cascade.ranks[1] > 0:
            raise CascadeDomainError(
                "kappa = 0 with a nonzero level-1 kernel (threshold "
                "resonance): the boundary inverse diverges; evaluate at "
                "kappa != 0 instead")
        mat = s0 @ cascade.inv1 @ s0
        return FourierOperator(cascade.cutoff, mat)

    a = level_inverse(cascade, 0, kappa)
    mat = kappa * a
    j1 = level_inverse(cascade, 1, kappa)
    mat = mat + a @ s0 @ j1 @ s0 @ a
    if cascade.ranks[1] > 0:
        j2 = level_inverse(cascade, 2, kappa)
        wing = a @ s0 @ j1 @ s1 @ j2
        mat = mat + (wing @ s1 @ j1 @ s0 @ a) / kappa
        if cascade.ranks[2] > 0:
            i3k = cascade.i3(kappa)
            j3 = subspace_inverse(i3k, cascade.bases[2],
                                  what="I3(kappa) on ran S2")
            core = wing @ s2 @ j3 @ s2 @ j2 @ s1 @ j1 @ s0 @ a
            mat = mat + core / (kappa * kappa)
    return FourierOperator(cascade.cutoff, mat)


# ---------------------------------------------------------------------------
# Embedded-eigenvalue expansion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EigExpansion:
    """Frozen data of the quadratic pencil at an embedded eigenvalue."""
    fiber: FiberContext
    lam: float
    cutoff: int
    t0: np.ndarray                 # full boundary operator at lam + i0
    s_proj: np.ndarray             # kernel projection of T0
    basis: np.ndarray
    rank: int
    inv_t0s: np.ndarray            # (T0 + S)^{-1}
    _w_all: np.ndarray = field(repr=False, default=None)
    _lam_all: np.ndarray = field(repr=False, default=None)

    def t1(self, kappa: complex) -> np.ndarray:
        """(i/kappa^2) sum_n (1/sqrt(lam-kappa^2-lam_n) - 1/sqrt(lam-lam_n))
        v P_n v, evaluated in the cancellation-free form; finite at 0."""
        b = self.lam - self._lam_all
        rb = _sqrt_upper_array(b + 0j)
        ra = _sqrt_upper_array(b - kappa * kappa)
        weights = 1j / (ra * rb * (ra + rb))
        return (self._w_all * weights) @ self._w_all.conj().T

    def j1(self, kappa: complex) -> tuple[np.ndarray, int]:
        return _series(self.s_proj, self.t1(kappa) @ self.inv_t0s,
                       kappa * kappa)


def build_eig_expansion(pm: PotentialModel, fiber: FiberContext, lam: float,
                        m: int = None, n_inner: int = None,
                        eps_rank: float = EPS_RANK,
                        gap: float = RANK_GAP) -> EigExpansion:
    """Expansion data at a candidate embedded eigenvalue off the thresholds.

    rank == 0 means lam carries no kernel at this truncation (not an
    eigenvalue); the expansion then degenerates to the plain inverse.
    """
    if pm.is_zero:
        raise CascadeDomainError("V == 0 has no eigenvalues to expand at")
    m = pm.v_cutoff // 2 if m is None else m
    n_inner = max_channel(pm, m) if n_inner is None else n_inner
    bs = boundary_bs(pm, fiber, lam, m=m, n_inner=n_inner)
    t0 = u_operator(pm, m).mat + bs.matrix.mat
    basis = kernel_basis(t0, eps_rank, gap)
    s_proj = basis @ basis.conj().T
    inv_t0s = checked_inverse(t0 + s_proj, what="T0 + S")

    modes = np.arange(-n_inner, n_inner + 1)
    w_all = np.stack([channel_column(pm, int(n), m) for n in modes], axis=1)
    return EigExpansion(fiber=fiber, lam=float(lam), cutoff=m, t0=t0,
                        s_proj=s_proj, basis=basis, rank=basis.shape[1],
                        inv_t0s=inv_t0s, _w_all=w_all,
                        _lam_all=fiber.threshold(modes))


def m_eig(pm: PotentialModel, fiber: FiberContext, lam: float,
          kappa: complex, expansion: EigExpansion = None,
          m: int = None) -> FourierOperator:
    """M_k(lam, kappa) at an embedded eigenvalue:

        (J0(kappa)+S)^{-1}
        + kappa^{-2} (J0(kappa)+S)^{-1} S J1(kappa)^{-1} S (J0(kappa)+S)^{-1}.

    kappa = 0 returns the finite part (J0(0)+S)^{-1} = (T0+S)^{-1}, the
    operator entering the scattering-matrix limit (the 1/kappa^2 term is
    killed there by the P_n v S = 0 relations).
    """
    if pm.is_zero:
        mm = (pm.v_cutoff // 2 if m is None else m)
        return FourierOperator(mm, np.eye(2 * mm + 1, dtype=complex))
    if expansion is None:
        expansion = build_eig_expansion(pm, fiber, lam, m=m)
    kappa = validate_kappa(kappa, allow_zero=True)
    if kappa == 0 or expansion.rank == 0:
        if kappa == 0:
            return FourierOperator(expansion.cutoff, expansion.inv_t0s)
        j0k = expansion.t0 + kappa * kappa * expansion.t1(kappa)
        return FourierOperator(expansion.cutoff,
                               checked_inverse(j0k, what="J0(kappa)"))
    s = expansion.s_proj
    j0k = expansion.t0 + kappa * kappa * expansion.t1(kappa)
    inv_j0s = checked_inverse(j0k + s, what="J0(kappa) + S")
    j1k, _ = expansion.j1(kappa)
    j1_inv = subspace_inverse(j1k, expansion.basis, what="J1(kappa) on ran S")
    mat = inv_j0s + (inv_j0s @ s @ j1_inv @ s @ inv_j0s) / (kappa * kappa)
    return FourierOperator(expansion.cutoff, mat)


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------

def cascade_report(data: CascadeData) -> dict:
    """JSON-ready report: ranks, rank gaps and identity residuals."""
    return {
        "lambda": data.lam,
        "k": data.fiber.k,
        "threshold_modes": list(data.threshold_modes),
        "ranks": {"S0": data.ranks[0], "S1": data.ranks[1],
                  "S2": data.ranks[2]},
        "rank_gaps": {key: [float(x) for x in val]
                      for key, val in data.rank_gaps.items()},
        "identity_residuals": {key: float(val)
                               for key, val in data.identity_residuals.items()},
    }
