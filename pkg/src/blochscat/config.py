"""Run configuration: plain-text key-value file with sections.

Example::

    [potential]
    kind = constant
    constant = -1.0

    [fiber]
    k = 0.0
    n_channels = 64

    [cutoffs]
    fourier_m = 32
    v_cutoff = 64
    samples_per_period = 4096

    [tolerances]
    eps_rank = 1e-8
    eps_eig = 1e-7
    eps_threshold = 1e-6
    tol_unitarity = 1e-8

    [scan]
    lambda_min = 2.0
    lambda_max = 10.0
    lambda_points = 200

``k`` may also be a grid: ``k_grid = -0.5:0.5:5`` (start:stop:count) or an
explicit comma list.  Validation failures carry section/field diagnostics.
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .torus import parse_potential_spec


@dataclass(frozen=True)
class RunConfig:
    potential: tuple
    k_values: tuple[float, ...]
    n_channels: int
    fourier_m: int
    v_cutoff: int
    samples_per_period: int
    eps_rank: float
    eps_eig: float
    eps_threshold: float
    tol_unitarity: float
    lambda_min: float
    lambda_max: float
    lambda_points: int
    options: dict = field(default_factory=dict)
    config_hash: str = ""

    def meta(self) -> dict:
        """Provenance block embedded in every output file."""
        return {
            "config_sha256": self.config_hash,
            "fourier_m": self.fourier_m,
            "v_cutoff": self.v_cutoff,
            "samples_per_period": self.samples_per_period,
            "n_channels": self.n_channels,
            "eps_rank": self.eps_rank,
            "eps_eig": self.eps_eig,
            "eps_threshold": self.eps_threshold,
            "tol_unitarity": self.tol_unitarity,
        }


def _get(parser, section: str, key: str, cast, default=None):
    if not parser.has_section(section):
        if default is not None:
            return default
        raise ConfigError(f"missing section [{section}]")
    if not parser.has_option(section, key):
        if default is not None:
            return default
        raise ConfigError(f"missing field '{key}' in section [{section}]")
    raw = parser.get(section, key)
    try:
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(
            f"bad value for [{section}] {key} = {raw!r}: {exc}") from exc


def _parse_k(parser) -> tuple[float, ...]:
    if parser.has_option("fiber", "k_grid"):
        raw = parser.get("fiber", "k_grid").strip()
        if ":" in raw:
            parts = raw.split(":")
            if len(parts) != 3:
                raise ConfigError("k_grid must be start:stop:count")
            try:
                lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
            except ValueError as exc:
                raise ConfigError(f"bad k_grid: {exc}") from exc
            if count < 1:
                raise ConfigError("k_grid count must be >= 1")
            ks = tuple(np.linspace(lo, hi, count))
        else:
            try:
                ks = tuple(float(x) for x in raw.split(","))
            except ValueError as exc:
                raise ConfigError(f"bad k_grid list: {exc}") from exc
    else:
        ks = (_get(parser, "fiber", "k", float),)
    for k in ks:
        if not -0.5 <= k <= 0.5:
            raise ConfigError(f"k = {k} outside [-1/2, 1/2]")
    if len(ks) == 0:
        raise ConfigError("empty k grid")
    return ks


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc

    if not parser.has_section("potential"):
        raise ConfigError("missing section [potential]")
    potential = parse_potential_spec(dict(parser.items("potential")))

    k_values = _parse_k(parser)
    n_channels = _get(parser, "fiber", "n_channels", int, default=64)

    fourier_m = _get(parser, "cutoffs", "fourier_m", int, default=32)
    v_cutoff = _get(parser, "cutoffs", "v_cutoff", int, default=64)
    samples = _get(parser, "cutoffs", "samples_per_period", int, default=4096)
    if fourier_m < 1 or v_cutoff < 2 * fourier_m:
        raise ConfigError("need fourier_m >= 1 and v_cutoff >= 2*fourier_m")

    eps_rank = _get(parser, "tolerances", "eps_rank", float, default=1e-8)
    eps_eig = _get(parser, "tolerances", "eps_eig", float, default=1e-7)
    eps_thr = _get(parser, "tolerances", "eps_threshold", float, default=1e-6)
    tol_unit = _get(parser, "tolerances", "tol_unitarity", float, default=1e-8)
    for name, val in (("eps_rank", eps_rank), ("eps_eig", eps_eig),
                      ("eps_threshold", eps_thr),
                      ("tol_unitarity", tol_unit)):
        if val <= 0:
            raise ConfigError(f"tolerance {name} must be positive")

    lam_lo = _get(parser, "scan", "lambda_min", float, default=0.0)
    lam_hi = _get(parser, "scan", "lambda_max", float, default=10.0)
    lam_n = _get(parser, "scan", "lambda_points", int, default=200)
    if lam_hi <= lam_lo:
        raise ConfigError("[scan] needs lambda_max > lambda_min")
    if lam_n < 1:
        raise ConfigError("[scan] lambda_points must be >= 1 (non-empty grid)")

    options = dict(parser.items("options")) if parser.has_section("options") \
        else {}

    digest = hashlib.sha256(text.encode()).hexdigest()
    return RunConfig(
        potential=potential, k_values=k_values, n_channels=n_channels,
        fourier_m=fourier_m, v_cutoff=v_cutoff, samples_per_period=samples,
        eps_rank=eps_rank, eps_eig=eps_eig, eps_threshold=eps_thr,
        tol_unitarity=tol_unit, lambda_min=lam_lo, lambda_max=lam_hi,
        lambda_points=lam_n, options=options, config_hash=digest)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
