"""Spectral and scattering data of the half-space Laplacian with a
2pi-periodic boundary condition, computed per Bloch fiber.

The library assembles boundary Birman-Schwinger operators on the truncated
Fourier basis of the circle, expands them at thresholds and embedded
eigenvalues by an iterated projection-inversion scheme, evaluates the
channel scattering matrices with their one-sided limits, and verifies the
wave-operator decomposition into a dilation-calculus leading term plus a
Hilbert-Schmidt remainder.
"""

from .birman import (BSOperator, ChannelSplit, assemble_bs, boundary_bs,
                     channel_split, gv_resolvent, m_operator, sqrt_upper)
from .cascade import (CascadeData, EigExpansion, build_eig_expansion,
                      build_threshold_cascade, cascade_report, jn_invert,
                      m_eig, m_threshold)
from .config import RunConfig, load_config, parse_config
from .errors import (BlochscatError, BranchCutError, CascadeDomainError,
                     ConfigError, GridResolutionError, NearSingularError,
                     RankDetectionError, SeriesDivergenceError,
                     ThresholdProximityError)
from .halfline import (HalfLineGrid, appendix_limit_check, cosine_transform,
                       dilation_calculus, neumann_evolution, r_function,
                       spectral_packet, theta_identity_check, u_transform)
from .smatrix import (SMatrix, ThresholdLimit, eig_limit,
                      limit_consistency_scan, smatrix, smatrix_at_kappa,
                      threshold_limit)
from .spectrum import (EigenReport, find_eigenvalues, kernel_indicator,
                       localization_windows)
from .torus import (FiberContext, FourierOperator, PotentialModel,
                    build_potential, mult_operator, rank_one_vpv)
from .waveop import (TestState, apply_qk, b_kernel, b_kernel_endpoint,
                     bump_profile, c_hs_norm, leading_term_identity_check,
                     wave_decomposition_report)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
