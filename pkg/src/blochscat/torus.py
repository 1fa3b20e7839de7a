"""Boundary data on the circle and operators on the truncated Fourier basis.

The 2pi-periodic boundary potential V is split into the factors
``v = |V|^{1/2}`` and ``u = sign(V)`` (with ``u = 1`` where ``V >= 0``).
Multiplication operators act on L^2(T) and become Toeplitz matrices on the
truncated basis ``e_m(theta) = exp(i m theta)/sqrt(2 pi)``, |m| <= M:

    <e_m, f e_{m'}> = fhat(m - m'),
    fhat(j) = (1/2pi) int_T f(theta) exp(-i j theta) dtheta.

The rank-one building blocks ``v P_n v`` (P_n the projection onto e_n) are
outer products ``w w^*`` with ``w_m = vhat(m - n)``.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

# Default cutoffs: M Fourier modes for operators, v_cutoff coefficients for
# the factor v, and the sampling resolution used to compute them.
DEFAULT_M = 32
DEFAULT_V_CUTOFF = 64
DEFAULT_SAMPLES = 4096


# ---------------------------------------------------------------------------
# Fourier coefficient sequences
# ---------------------------------------------------------------------------

def _coeff_array(pairs: dict[int, complex], cutoff: int) -> np.ndarray:
    out = np.zeros(2 * cutoff + 1, dtype=complex)
    for j, val in pairs.items():
        if abs(j) <= cutoff:
            out[j + cutoff] = val
    return out


def coeff_at(coeffs: np.ndarray, j: int | np.ndarray) -> np.ndarray:
    """Coefficient(s) at index j of a center-indexed sequence; 0 outside."""
    cutoff = (len(coeffs) - 1) // 2
    j = np.asarray(j)
    inside = np.abs(j) <= cutoff
    idx = np.where(inside, j + cutoff, 0)
    vals = np.where(inside, coeffs[idx], 0.0)
    return vals if vals.ndim else vals[()]


def synthesize(coeffs: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Evaluate ``sum_j coeffs[j] exp(i j theta)`` pointwise."""
    cutoff = (len(coeffs) - 1) // 2
    js = np.arange(-cutoff, cutoff + 1)
    return np.exp(1j * np.outer(theta, js)) @ coeffs


def analyze(samples: np.ndarray, cutoff: int) -> tuple[np.ndarray, float]:
    """Fourier coefficients of a sampled function, plus the dropped tail.

    Returns ``(coeffs, tail)`` where coeffs holds fhat(j) for |j| <= cutoff
    and ``tail = sum_{|j| > cutoff} |fhat(j)|`` over the resolved DFT range,
    a sup-norm bound on the truncation error.
    """
    n = len(samples)
    fhat = np.fft.fft(samples) / n
    half = n // 2
    js = np.concatenate([np.arange(0, half), np.arange(half - n, 0)])
    coeffs = np.zeros(2 * cutoff + 1, dtype=complex)
    tail = 0.0
    for pos, j in enumerate(js):
        if abs(j) <= cutoff:
            coeffs[j + cutoff] = fhat[pos]
        else:
            tail += abs(fhat[pos])
    return coeffs, float(tail)


def _require_conjugate_symmetric(coeffs: np.ndarray, label: str,
                                 tol: float = 1e-10) -> None:
    defect = np.max(np.abs(coeffs - coeffs[::-1].conj()))
    if defect > tol:
        raise ConfigError(
            f"{label} coefficients are not conjugate-symmetric "
            f"(defect {defect:.3e}); the function must be real")


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PotentialModel:
    """The boundary potential V with its factorization v = |V|^{1/2}, u = sign V.

    Attributes
    ----------
    kind : str
        One of ``constant``, ``trig_poly``, ``sampled``.
    samples_per_period : int
        Resolution of the theta-grid used to compute v and u.
    v_hat, u_hat : ndarray
        Center-indexed Fourier coefficients of v and u (same cutoff).
    v_decay_report : float
        Sum of the neglected |vhat| magnitudes (sup-norm truncation bound).
    u_decay_report : float
        Same for u; zero when V is sign-definite.
    sup_norm : float
        ||V||_oo on the sample grid.
    sign_definite : bool
        True when V does not change sign on the grid.
    """
    kind: str
    samples_per_period: int
    v_hat: np.ndarray
    u_hat: np.ndarray
    v_decay_report: float
    u_decay_report: float
    sup_norm: float
    sign_definite: bool
    description: str = ""
    # Sampled values kept for reconstruction checks.
    theta: np.ndarray = field(repr=False, default=None)
    values: np.ndarray = field(repr=False, default=None)

    @property
    def v_cutoff(self) -> int:
        return (len(self.v_hat) - 1) // 2

    @property
    def is_zero(self) -> bool:
        return self.sup_norm == 0.0

    def reconstruction_error(self) -> tuple[float, float]:
        """Max pointwise errors of (v_hat synthesis)^2 vs |V| and u v^2 vs V."""
        v = synthesize(self.v_hat, self.theta).real
        u = synthesize(self.u_hat, self.theta).real
        err_v = float(np.max(np.abs(v ** 2 - np.abs(self.values))))
        err_uv = float(np.max(np.abs(u * v ** 2 - self.values)))
        return err_v, err_uv


@dataclass(frozen=True)
class FourierOperator:
    """Complex matrix on the truncated Fourier basis, modes m in [-M, M]."""
    cutoff: int
    entries: np.ndarray

    def __post_init__(self):
        n = 2 * self.cutoff + 1
        if self.entries.shape != (n, n):
            raise ValueError("entries must be (2M+1) x (2M+1)")

    @property
    def mat(self) -> np.ndarray:
        return self.entries

    def entry(self, m: int, mp: int) -> complex:
        return complex(self.entries[m + self.cutoff, mp + self.cutoff])

    def adjoint(self) -> "FourierOperator":
        return FourierOperator(self.cutoff, self.entries.conj().T)

    def __matmul__(self, other: "FourierOperator") -> "FourierOperator":
        if self.cutoff != other.cutoff:
            raise ValueError("cutoff mismatch")
        return FourierOperator(self.cutoff, self.entries @ other.entries)

    def norm(self) -> float:
        return float(np.linalg.norm(self.entries, 2))

    def is_selfadjoint(self, tol: float = 1e-12) -> bool:
        return bool(np.max(np.abs(self.entries - self.entries.conj().T)) <= tol
                    * max(1.0, self.norm()))


@dataclass(frozen=True)
class FiberContext:
    """Bloch parameter k with its channel thresholds lambda_{k,n} = (n+k)^2."""
    k: float
    n_channels: int = 64

    def __post_init__(self):
        if not -0.5 <= self.k <= 0.5:
            raise ConfigError(f"Bloch parameter k={self.k} outside [-1/2, 1/2]")
        if self.n_channels < 1:
            raise ConfigError("n_channels must be positive")

    def threshold(self, n: int | np.ndarray) -> float | np.ndarray:
        lam = (np.asarray(n) + self.k) ** 2
        return lam if lam.ndim else float(lam)

    @property
    def thresholds(self) -> dict[int, float]:
        return {n: self.threshold(n)
                for n in range(-self.n_channels, self.n_channels + 1)}

    def sorted_thresholds(self) -> list[tuple[float, tuple[int, ...]]]:
        """Distinct threshold values with the modes that share them, sorted."""
        groups: dict[float, list[int]] = {}
        for n in range(-self.n_channels, self.n_channels + 1):
            lam = self.threshold(n)
            key = next((g for g in groups if abs(g - lam) < 1e-12), lam)
            groups.setdefault(key, []).append(n)
        return sorted((lam, tuple(sorted(ns))) for lam, ns in groups.items())

    def thresholds_in(self, lo: float, hi: float) -> list[tuple[float, tuple[int, ...]]]:
        return [(lam, ns) for lam, ns in self.sorted_thresholds() if lo <= lam <= hi]

    def modes_at(self, lam: float, tol: float = 1e-9) -> tuple[int, ...]:
        """Modes n with lambda_{k,n} = lam (empty if lam is not a threshold)."""
        return tuple(n for n in range(-self.n_channels, self.n_channels + 1)
                     if abs(self.threshold(n) - lam) <= tol * max(1.0, abs(lam)))


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def build_potential(spec, samples_per_period: int = DEFAULT_SAMPLES,
                    v_cutoff: int = DEFAULT_V_CUTOFF) -> PotentialModel:
    """Build the factorized boundary data from a potential description.

    ``spec`` is one of
      * a real number (constant potential),
      * ``("constant", c)``,
      * ``("trig_poly", coeffs)`` with coeffs a center-indexed complex array
        or ``{j: value}`` dict obeying conjugate symmetry,
      * ``("sampled", values)`` with values on a uniform theta-grid over one
        period.

    v and u are obtained by discrete Fourier analysis of the sampled
    |V|^{1/2} and sign(V); the neglected coefficient tails are recorded.
    """
    if isinstance(spec, (int, float)):
        spec = ("constant", float(spec))
    kind, payload = spec
    if samples_per_period < 8 * (v_cutoff + 1):
        raise ConfigError(
            f"samples_per_period={samples_per_period} too small for "
            f"v_cutoff={v_cutoff}; need at least {8 * (v_cutoff + 1)}")

    theta = 2.0 * np.pi * np.arange(samples_per_period) / samples_per_period

    if kind == "constant":
        c = float(payload)
        values = np.full(samples_per_period, c)
        v0 = np.sqrt(abs(c))
        u0 = 1.0 if c >= 0 else -1.0
        v_hat = _coeff_array({0: v0}, v_cutoff)
        u_hat = _coeff_array({0: u0}, v_cutoff)
        return PotentialModel(
            kind="constant", samples_per_period=samples_per_period,
            v_hat=v_hat, u_hat=u_hat, v_decay_report=0.0, u_decay_report=0.0,
            sup_norm=abs(c), sign_definite=True,
            description=f"V = {c}", theta=theta, values=values)

    if kind == "trig_poly":
        if isinstance(payload, dict):
            pairs = dict(payload)
            for j, val in list(pairs.items()):
                if -j not in pairs:
                    pairs[-j] = complex(val).conjugate()
            d = max((abs(j) for j in pairs), default=0)
            coeffs = _coeff_array(pairs, d)
        else:
            coeffs = np.asarray(payload, dtype=complex)
            if len(coeffs) % 2 == 0:
                raise ConfigError("trig_poly coefficient list must have odd "
                                  "length (indices -d..d)")
        if coeffs.size == 0:
            raise ConfigError("empty coefficient list")
        _require_conjugate_symmetric(coeffs, "trig_poly")
        values = synthesize(coeffs, theta).real
        desc = "trig poly, degree %d" % ((len(coeffs) - 1) // 2)
    elif kind == "sampled":
        raw = np.asarray(payload, dtype=float)
        if raw.size == 0:
            raise ConfigError("empty sample list")
        if not np.all(np.isfinite(raw)):
            raise ConfigError("sampled potential contains non-finite values")
        # Resample onto the working grid by trigonometric interpolation.
        cut = min((raw.size - 1) // 2, v_cutoff)
        coeffs, _ = analyze(raw, cut)
        values = synthesize(coeffs, theta).real
        desc = "sampled, %d points" % raw.size
    else:
        raise ConfigError(f"unknown potential kind {kind!r}")

    v_samples = np.sqrt(np.abs(values))
    u_samples = np.where(values >= 0.0, 1.0, -1.0)
    v_hat, v_tail = analyze(v_samples, v_cutoff)
    u_hat, u_tail = analyze(u_samples, v_cutoff)
    sign_definite = bool(np.all(values >= 0.0) or np.all(values <= 0.0))
    if sign_definite:
        # sign(V) is exactly constant; drop the FFT rounding noise.
        u_hat = _coeff_array({0: 1.0 if np.all(values >= 0.0) else -1.0},
                             v_cutoff)
        u_tail = 0.0
    return PotentialModel(
        kind=kind, samples_per_period=samples_per_period,
        v_hat=v_hat, u_hat=u_hat,
        v_decay_report=v_tail, u_decay_report=u_tail,
        sup_norm=float(np.max(np.abs(values))), sign_definite=sign_definite,
        description=desc, theta=theta, values=values)


def mult_operator(coeffs: np.ndarray, m: int,
                  allow_zero_pad: bool = False) -> FourierOperator:
    """Toeplitz matrix of multiplication by the function with coefficients.

    entry(m, m') = fhat(m - m').  Differences reach |j| <= 2M, so the
    coefficient range must extend that far unless ``allow_zero_pad``.
    """
    coeffs = np.asarray(coeffs, dtype=complex)
    cutoff = (len(coeffs) - 1) // 2
    if cutoff < 2 * m and not allow_zero_pad:
        raise ConfigError(
            f"coefficients reach |j| <= {cutoff} but the Toeplitz matrix "
            f"needs |j| <= {2 * m}; pass allow_zero_pad=True to pad")
    _require_conjugate_symmetric(coeffs, "multiplication operator")
    modes = np.arange(-m, m + 1)
    diff = modes[:, None] - modes[None, :]
    return FourierOperator(m, coeff_at(coeffs, diff))


def channel_column(pm: PotentialModel, n: int, m: int) -> np.ndarray:
    """Vector w with w_m = vhat(m - n): the coefficients of v * e_n."""
    modes = np.arange(-m, m + 1)
    return coeff_at(pm.v_hat, modes - n)


def max_channel(pm: PotentialModel, m: int) -> int:
    """Largest |n| whose column v*e_n is representable: M + v_cutoff."""
    return m + pm.v_cutoff


def rank_one_vpv(pm: PotentialModel, n: int, m: int) -> FourierOperator:
    """The rank-one operator v P_n v as a matrix: w (x) w^*.

    Exactly equals mult(v) P_n mult(v) when |n| <= M, and extends it for
    M < |n| <= M + v_cutoff where the projection itself leaves the
    truncated basis.
    """
    if abs(n) > max_channel(pm, m):
        raise ConfigError(
            f"channel n={n} beyond representable range |n| <= {max_channel(pm, m)}")
    w = channel_column(pm, n, m)
    return FourierOperator(m, np.outer(w, w.conj()))


def u_operator(pm: PotentialModel, m: int) -> FourierOperator:
    return mult_operator(pm.u_hat, m, allow_zero_pad=True)


def v_operator(pm: PotentialModel, m: int) -> FourierOperator:
    return mult_operator(pm.v_hat, m, allow_zero_pad=True)


def u_involution_defect(pm: PotentialModel, m: int) -> float:
    """|| mult(u)^2 - 1 || on the truncated basis.

    Exactly zero for sign-definite V; for sign-changing V the truncation of
    the jump function u breaks the involution and the defect is reported
    rather than hidden.
    """
    u = u_operator(pm, m).mat
    return float(np.linalg.norm(u @ u - np.eye(2 * m + 1), 2))


# ---------------------------------------------------------------------------
# Plain-text interfaces
# ---------------------------------------------------------------------------

def coefficients_csv(pm: PotentialModel) -> str:
    """CSV dump ``j, re, im`` of the v and u coefficient sequences."""
    buf = io.StringIO()
    buf.write("series,j,re,im\n")
    cut = pm.v_cutoff
    for name, coeffs in (("v", pm.v_hat), ("u", pm.u_hat)):
        for j in range(-cut, cut + 1):
            c = coeffs[j + cut]
            buf.write(f"{name},{j},{c.real:.17g},{c.imag:.17g}\n")
    return buf.getvalue()


def parse_potential_spec(section: dict) -> tuple:
    """Potential description from a key-value config section."""
    kind = section.get("kind", "").strip()
    if kind == "constant":
        if "constant" not in section:
            raise ConfigError("potential kind 'constant' needs field 'constant'")
        return ("constant", float(section["constant"]))
    if kind == "trig_poly":
        if "coeffs" not in section:
            raise ConfigError("potential kind 'trig_poly' needs field 'coeffs'")
        pairs: dict[int, complex] = {}
        for item in section["coeffs"].split(","):
            item = item.strip()
            if not item:
                continue
            try:
                j_str, val_str = item.split(":")
                j = int(j_str)
                val = complex(val_str.replace(" ", ""))
            except ValueError as exc:
                raise ConfigError(f"bad coeffs item {item!r}: {exc}") from exc
            pairs[j] = val
            if j > 0 and -j not in pairs:
                pairs[-j] = val.conjugate()
        return ("trig_poly", pairs)
    if kind == "sampled":
        if "values" not in section:
            raise ConfigError("potential kind 'sampled' needs field 'values'")
        try:
            values = [float(x) for x in section["values"].split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad sampled values: {exc}") from exc
        return ("sampled", values)
    raise ConfigError(f"unknown potential kind {kind!r}")
