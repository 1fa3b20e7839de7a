import math

import numpy as np
import pytest

from blochscat.birman import assemble_bs, sqrt_upper
from blochscat.cascade import (build_eig_expansion, build_threshold_cascade,
                               cascade_report, commutator, jn_invert, m_eig,
                               m_threshold, validate_kappa)
from blochscat.errors import CascadeDomainError, SeriesDivergenceError
from blochscat.linalg import operator_norm
from blochscat.torus import FiberContext, u_operator


def direct_inverse(pm, fiber, lam, kappa, m=None):
    """Independent oracle: invert u + G R0(lam - kappa^2) G* directly."""
    z = complex(lam) - kappa * kappa
    assert z.imag != 0
    bs = assemble_bs(pm, fiber, z, m=m)
    u = u_operator(pm, bs.matrix.cutoff).mat
    return np.linalg.inv(u + bs.matrix.mat)


class TestJnInvert:
    def test_scalar(self):
        a0 = np.zeros((1, 1), dtype=complex)
        a1 = np.eye(1, dtype=complex)
        s = np.eye(1, dtype=complex)
        for z in (0.05, 0.2, 0.05j - 0.02):
            res = jn_invert(a0, a1, s, z)
            assert abs(res.a_inv[0, 0] - 1.0 / z) < 1e-14 / abs(z)
            assert abs(res.b[0, 0] - 1.0 / (1.0 + z)) < 1e-13

    def test_two_by_two_diag(self):
        a0 = np.diag([1.0, 0.0]).astype(complex)
        a1 = np.eye(2, dtype=complex)
        s = np.diag([0.0, 1.0]).astype(complex)
        res = jn_invert(a0, a1, s, 0.1)
        oracle = np.linalg.inv(np.diag([1.1, 0.1]))
        assert np.max(np.abs(res.a_inv - oracle)) < 1e-12

    def test_random_with_kernel(self):
        rng = np.random.default_rng(23)
        for trial in range(4):
            q, _ = np.linalg.qr(rng.normal(size=(6, 6))
                                + 1j * rng.normal(size=(6, 6)))
            diag = np.concatenate([rng.uniform(0.5, 2.0, 4), [0.0, 0.0]])
            a0 = q @ np.diag(diag) @ q.conj().T     # Hermitian, 2-dim kernel
            s = q[:, 4:] @ q[:, 4:].conj().T
            b0 = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
            b1 = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
            a1 = lambda z, b0=b0, b1=b1: b0 + z * b1
            for kap in (1e-2, 1e-4):
                res = jn_invert(a0, a1, s, kap)
                oracle = np.linalg.inv(a0 + kap * a1(kap))
                rel = np.linalg.norm(res.a_inv - oracle, 2) / \
                    np.linalg.norm(oracle, 2)
                assert rel < 1e-8
                assert res.residual < 1e-10 * np.linalg.norm(oracle, 2)

    def test_compatibility_violation(self):
        a0 = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
        s = np.diag([0.0, 1.0]).astype(complex)
        with pytest.raises(CascadeDomainError):
            jn_invert(a0, np.eye(2, dtype=complex), s, 0.1)

    def test_series_divergence(self):
        a0 = np.diag([1.0, 0.0]).astype(complex)
        s = np.diag([0.0, 1.0]).astype(complex)
        with pytest.raises(SeriesDivergenceError):
            jn_invert(a0, 50.0 * np.eye(2, dtype=complex), s, 1.0)

    def test_zero_z_rejected(self):
        with pytest.raises(CascadeDomainError):
            jn_invert(np.eye(1, dtype=complex), np.eye(1, dtype=complex),
                      np.zeros((1, 1), dtype=complex), 0.0)


class TestKappaDomain:
    def test_sector(self):
        validate_kappa(1e-3)
        validate_kappa(-1e-3j)
        validate_kappa((1 - 1j) * 1e-2)
        with pytest.raises(CascadeDomainError):
            validate_kappa(-1e-3)
        with pytest.raises(CascadeDomainError):
            validate_kappa(1e-3j)
        with pytest.raises(CascadeDomainError):
            validate_kappa(0.0)


class TestThresholdCascade:
    def test_constant_structure(self, pm_const2, fib25):
        lam = fib25.threshold(0)
        cas = build_threshold_cascade(pm_const2, fib25, lam)
        assert cas.threshold_modes == (0,)
        # S0 = 1 - P0
        dim = 2 * cas.cutoff + 1
        expect = np.eye(dim)
        expect[cas.cutoff, cas.cutoff] = 0.0
        assert np.max(np.abs(cas.s0 - expect)) < 1e-12
        assert cas.ranks[1] == 0 and cas.ranks[2] == 0
        # I1(0) diagonal entries on the S0 block
        c = 2.0
        for n in (1, -1, 2):   # closed at lam
            beta2 = math.sqrt(abs(lam - fib25.threshold(n)))
            i, j = n + cas.cutoff, n + cas.cutoff
            assert abs(cas.i1_0[i, j] - (1 + c / beta2)) < 1e-12

    def test_zero_potential_rejected(self, pm_zero, fib25):
        with pytest.raises(CascadeDomainError):
            build_threshold_cascade(pm_zero, fib25, fib25.threshold(0))

    def test_double_threshold_rank(self, pm_trig, fib0):
        cas = build_threshold_cascade(pm_trig, fib0, 1.0)
        assert cas.threshold_modes == (-1, 1)
        assert 2 * cas.cutoff + 1 - cas.ranks[0] == 2   # rank(1 - S0) = 2

    def test_not_a_threshold(self, pm_trig, fib0):
        with pytest.raises(CascadeDomainError):
            build_threshold_cascade(pm_trig, fib0, 1.37)

    def test_identity_residuals(self, pm_trig, fib01):
        cas = build_threshold_cascade(pm_trig, fib01, fib01.threshold(1))
        for key, val in cas.identity_residuals.items():
            if "min eigenvalue" in key:
                assert val > -1e-10
            elif "singular" not in key:
                assert val < 1e-10, key

    def test_report_payload(self, pm_trig, fib01):
        cas = build_threshold_cascade(pm_trig, fib01, fib01.threshold(1))
        rep = cascade_report(cas)
        assert rep["ranks"]["S0"] == cas.ranks[0]
        assert "identity_residuals" in rep

    def test_commutator_smallness(self, pm_trig, fib01):
        cas = build_threshold_cascade(pm_trig, fib01, fib01.threshold(1))
        slope = operator_norm(cas.commutator_slopes[(0, 0)])
        assert slope > 0
        for kap in (1e-2, 1e-3, 1e-4):
            ratio = operator_norm(commutator(cas, 0, 0, kap)) / kap
            assert abs(ratio - slope) < 0.3 * slope + 1e-8

    def test_eq23_scalar_expansion(self):
        # 1/sqrt(b - kappa^2) = (1/sqrt b)(1 + kappa^2/(2b) + O(kappa^4))
        b = 2.7
        errs = []
        for kap in (1e-1, 1e-2):
            exact = 1.0 / np.sqrt(b - kap ** 2)
            approx = (1.0 / np.sqrt(b)) * (1 + kap ** 2 / (2 * b))
            errs.append(abs(exact - approx))
        assert errs[1] < errs[0] * 1e-3 * 1.5      # O(kappa^4) ratio test


class TestMThreshold:
    def test_direct_inversion_oracle(self, pm_trig, fib01):
        lam = fib01.threshold(1)
        cas = build_threshold_cascade(pm_trig, fib01, lam)
        for h in (1e-2, 1e-3, 1e-4):
            kap = complex(h, -h)
            mth = m_threshold(pm_trig, fib01, lam, kap, cascade=cas)
            oracle = direct_inverse(pm_trig, fib01, cas.lam, kap)
            rel = np.linalg.norm(mth.mat - oracle, 2) / \
                np.linalg.norm(oracle, 2)
            assert rel < 1e-6

    def test_constant_kappa_zero(self, pm_const2, fib25):
        lam = fib25.threshold(1)     # opening mode 1; modes 0, -1 open below
        cas = build_threshold_cascade(pm_const2, fib25, lam)
        mth = m_threshold(pm_const2, fib25, lam, 0.0, cascade=cas)
        assert abs(mth.entry(1, 1)) < 1e-12      # opening mode annihilated
        c = 2.0
        for n in (0, -1):
            beta2 = math.sqrt(lam - fib25.threshold(n))
            assert abs(mth.entry(n, n) - beta2 / (beta2 + 1j * c)) < 1e-12

    def test_zero_potential_identity(self, pm_zero, fib25):
        mth = m_threshold(pm_zero, fib25, fib25.threshold(0), 1e-3)
        assert np.allclose(mth.mat, np.eye(mth.mat.shape[0]))
        mth0 = m_threshold(pm_zero, fib25, fib25.threshold(0), 0.0)
        assert np.allclose(mth0.mat, np.eye(mth0.mat.shape[0]))

    def test_boundary_rays_match_scalar(self, pm_const2, fib25):
        # on the rays the direct oracle is unavailable (real z); constant V
        # reduces every channel to scalar algebra
        lam = fib25.threshold(1)
        cas = build_threshold_cascade(pm_const2, fib25, lam)
        c = 2.0
        for kap in (1e-2, 1e-3, -1e-2j, -1e-3j):
            kap = complex(kap)
            mth = m_threshold(pm_const2, fib25, lam, kap, cascade=cas)
            for n in (0, 1, -1, 2):
                z = lam - kap * kap - fib25.threshold(n)
                z = complex(z)
                if z.imag == 0.0 and z.real >= 0:
                    root = sqrt_upper(z, boundary=True)
                else:
                    root = sqrt_upper(z)
                oracle = 1.0 / (1.0 + 1j * c / root)
                assert abs(mth.entry(n, n) - oracle) < 1e-9 * abs(oracle)


class TestResonantThreshold:
    """V = -sqrt(3), k = 0: the threshold lambda = 1 has a rank-2 level-1
    kernel (modes +-2), driving the deep terms of the expansion."""

    def test_ranks(self, pm_resonant, fib0):
        cas = build_threshold_cascade(pm_resonant, fib0, 1.0)
        assert cas.ranks[1] == 2
        assert cas.ranks[2] == 2
        assert cas.i3_0 is not None

    def test_kappa_zero_diverges(self, pm_resonant, fib0):
        cas = build_threshold_cascade(pm_resonant, fib0, 1.0)
        with pytest.raises(CascadeDomainError):
            m_threshold(pm_resonant, fib0, 1.0, 0.0, cascade=cas)

    def test_scalar_oracle_all_sectors(self, pm_resonant, fib0):
        cas = build_threshold_cascade(pm_resonant, fib0, 1.0)
        c = math.sqrt(3.0)
        for kap in ((1 - 1j) * 1e-2, (1 - 1j) * 1e-3, 1e-3, -1e-3j):
            kap = complex(kap)
            mth = m_threshold(pm_resonant, fib0, 1.0, kap, cascade=cas)
            for n in (0, 1, 2, -2, 3):
                z = complex(1.0 - kap * kap - fib0.threshold(n))
                if z.imag == 0.0 and z.real >= 0:
                    root = sqrt_upper(z, boundary=True)
                else:
                    root = sqrt_upper(z)
                oracle = 1.0 / (-1.0 + 1j * c / root)
                assert abs(mth.entry(n, n) - oracle) < 1e-8 * abs(oracle)

    def test_deep_identities(self, pm_resonant, fib0):
        cas = build_threshold_cascade(pm_resonant, fib0, 1.0)
        res = cas.identity_residuals
        assert res["M1(0) S2 = 0"] < 1e-10
        assert res["-I2(0) min eigenvalue on ran S1"] > -1e-10
        assert res["I3(0) smallest singular value on ran S2"] > 1e-3


class TestEigExpansion:
    def test_constant_rank_two(self, pm_const_neg1, fib0):
        exp = build_eig_expansion(pm_const_neg1, fib0, 3.0)
        assert exp.rank == 2
        # kernel spanned by the modes +-2
        span = np.abs(exp.basis).sum(axis=1)
        hot = np.argsort(span)[-2:]
        assert set(hot - exp.cutoff) == {-2, 2}

    def test_not_an_eigenvalue(self, pm_const_neg1, fib0):
        exp = build_eig_expansion(pm_const_neg1, fib0, 2.5)
        assert exp.rank == 0

    def test_direct_inversion_oracle(self, pm_const_neg1, fib0):
        exp = build_eig_expansion(pm_const_neg1, fib0, 3.0)
        for h in (1e-2, 1e-3, 1e-4):
            kap = complex(h, -h)
            me = m_eig(pm_const_neg1, fib0, 3.0, kap, expansion=exp)
            oracle = direct_inverse(pm_const_neg1, fib0, 3.0, kap)
            rel = np.linalg.norm(me.mat - oracle, 2) / \
                np.linalg.norm(oracle, 2)
            assert rel < 1e-6

    def test_kappa_zero_finite_part(self, pm_const_neg1, fib0):
        exp = build_eig_expansion(pm_const_neg1, fib0, 3.0)
        me0 = m_eig(pm_const_neg1, fib0, 3.0, 0.0, expansion=exp)
        assert np.max(np.abs(me0.mat - exp.inv_t0s)) == 0.0

    def test_regular_point_matches_direct(self, pm_trig, fib01):
        exp = build_eig_expansion(pm_trig, fib01, 2.3)
        assert exp.rank == 0
        kap = complex(1e-3, -1e-3)
        me = m_eig(pm_trig, fib01, 2.3, kap, expansion=exp)
        oracle = direct_inverse(pm_trig, fib01, 2.3, kap)
        assert np.linalg.norm(me.mat - oracle, 2) < \
            1e-9 * np.linalg.norm(oracle, 2)

    def test_zero_potential_rejected(self, pm_zero, fib0):
        with pytest.raises(CascadeDomainError):
            build_eig_expansion(pm_zero, fib0, 2.5)
