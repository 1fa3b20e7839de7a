import numpy as np
import pytest

from blochscat.birman import (assemble_bs, boundary_bs, channel_split,
                              gv_resolvent, m_operator, scan_csv_rows,
                              sqrt_upper)
from blochscat.errors import (BranchCutError, NearSingularError,
                              ThresholdProximityError)
from blochscat.torus import FiberContext, u_operator


class TestSqrtUpper:
    def test_forced_values(self):
        assert sqrt_upper(-1) == 1j
        assert abs(sqrt_upper(2j) - (1 + 1j)) < 1e-15

    def test_upper_half_plane_everywhere(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            z = complex(rng.normal(), rng.normal())
            if z.imag == 0:
                continue
            w = sqrt_upper(z)
            assert w.imag > 0
            assert abs(w * w - z) < 1e-12 * max(1.0, abs(z))

    def test_continuity_off_the_cut(self):
        # walk a circle that avoids [0, oo); values must vary continuously
        phis = np.linspace(0.05, 2 * np.pi - 0.05, 400)
        vals = np.array([sqrt_upper(5 * np.exp(1j * p)) for p in phis])
        steps = np.abs(np.diff(vals))
        assert steps.max() < 0.1
        # endpoints approach opposite signs across the cut
        assert abs(vals[0] - np.sqrt(5)) < 0.1
        assert abs(vals[-1] + np.sqrt(5)) < 0.1

    def test_cut_requires_flag(self):
        with pytest.raises(BranchCutError):
            sqrt_upper(4.0)
        assert sqrt_upper(4.0, boundary=True) == 2.0
        assert sqrt_upper(0.0, boundary=True) == 0.0


class TestAssembleBS:
    def test_constant_diagonal_formula(self, pm_const4, fib0):
        bs = assemble_bs(pm_const4, fib0, 1j)
        for n in (-3, 0, 2, 5):
            expect = 1j * 4.0 / sqrt_upper(1j - n ** 2)
            assert abs(bs.matrix.entry(n, n) - expect) < 1e-14
        off = bs.matrix.mat - np.diag(np.diag(bs.matrix.mat))
        assert np.max(np.abs(off)) == 0.0

    def test_zero_potential(self, pm_zero, fib0):
        bs = assemble_bs(pm_zero, fib0, 2 + 1j)
        assert np.max(np.abs(bs.matrix.mat)) == 0.0

    def test_herglotz_quadratic_form(self, pm_trig, fib01):
        rng = np.random.default_rng(7)
        for lam in (0.5, 2.3, 6.1):
            bs = assemble_bs(pm_trig, fib01, complex(lam, 1e-3))
            dim = bs.matrix.mat.shape[0]
            for _ in range(5):
                q = rng.normal(size=dim) + 1j * rng.normal(size=dim)
                form = np.vdot(q, bs.matrix.mat @ q)
                assert form.imag >= -1e-12 * np.vdot(q, q).real

    def test_herglotz_operator_part(self, pm_trig, fib01):
        bs = assemble_bs(pm_trig, fib01, complex(3.0, 1e-4))
        anti = (bs.matrix.mat - bs.matrix.mat.conj().T) / 2j
        assert np.linalg.eigvalsh(anti).min() >= -1e-10

    def test_real_axis_rejected(self, pm_trig, fib01):
        with pytest.raises(BranchCutError):
            assemble_bs(pm_trig, fib01, complex(2.0, 0.0))


class TestBoundaryBS:
    def test_below_bottom_selfadjoint(self, pm_trig, fib25):
        bs = boundary_bs(pm_trig, fib25, -1.0)
        assert np.max(np.abs(bs.matrix.mat - bs.matrix.mat.conj().T)) < 1e-13

    def test_constant_entries(self, pm_const4, fib0):
        bs = boundary_bs(pm_const4, fib0, 0.5)
        assert abs(bs.matrix.entry(0, 0) - 4j / np.sqrt(0.5)) < 1e-13
        assert abs(bs.matrix.entry(1, 1) - 4 / np.sqrt(0.5)) < 1e-13
        assert abs(bs.matrix.entry(-1, -1) - 4 / np.sqrt(0.5)) < 1e-13

    def test_limit_consistency_with_assemble(self, pm_trig, fib01):
        lam = 2.3
        bval = boundary_bs(pm_trig, fib01, lam).matrix.mat
        prev = None
        for eps in (1e-3, 1e-5, 1e-7):
            diff = np.linalg.norm(
                assemble_bs(pm_trig, fib01, complex(lam, eps)).matrix.mat
                - bval, 2)
            if prev is not None:
                assert diff < prev
            prev = diff
        assert prev < 1e-5

    def test_threshold_guard(self, pm_trig, fib0):
        with pytest.raises(ThresholdProximityError):
            boundary_bs(pm_trig, fib0, 1.0 + 1e-8)

    def test_channel_tail_bound(self, pm_trig, fib01):
        # adding 8 more channels changes the matrix by less than the bound
        lam = 2.3
        small = boundary_bs(pm_trig, fib01, lam, m=8, n_inner=12)
        big = boundary_bs(pm_trig, fib01, lam, m=8, n_inner=20)
        change = np.linalg.norm(big.matrix.mat - small.matrix.mat, 2)
        assert change < small.truncation_bound

    def test_constant_all_diagonal(self, pm_const2, fib25):
        for lam in (0.3, 1.9, 4.7):
            bs = boundary_bs(pm_const2, fib25, lam)
            off = bs.matrix.mat - np.diag(np.diag(bs.matrix.mat))
            assert np.max(np.abs(off)) == 0.0


class TestChannelSplit:
    def test_partition_and_beta(self, fib25):
        split = channel_split(fib25, 1.0, 8)
        assert set(split.open_modes) | set(split.closed_modes) == \
            set(range(-8, 9))
        assert not set(split.open_modes) & set(split.closed_modes)
        for n, b in split.beta.items():
            assert b >= 0
            assert abs(b ** 4 - abs(1.0 - fib25.threshold(n))) < 1e-12
        assert 0 in split.open_modes
        assert 5 in split.closed_modes


class TestMOperator:
    def test_zero_potential_gives_u(self, pm_zero, fib0):
        mop = m_operator(pm_zero, fib0, 2.5)
        assert np.allclose(mop.mat, np.eye(mop.mat.shape[0]))

    def test_constant_closed_form(self, pm_const2, fib0):
        lam = 2.5
        mop = m_operator(pm_const2, fib0, lam)
        for n in (-1, 0, 1):   # open
            beta2 = np.sqrt(lam - n ** 2)
            assert abs(mop.entry(n, n) - beta2 / (beta2 + 2j)) < 1e-13
        for n in (2, -2, 3):   # closed
            beta2 = np.sqrt(n ** 2 - lam)
            assert abs(mop.entry(n, n) - 1 / (1 + 2 / beta2)) < 1e-13

    def test_residual(self, pm_trig, fib01):
        lam = 2.3
        mop = m_operator(pm_trig, fib01, lam)
        u = u_operator(pm_trig, mop.cutoff).mat
        bs = boundary_bs(pm_trig, fib01, lam).matrix.mat
        res = np.linalg.norm(mop.mat @ (u + bs) - np.eye(u.shape[0]), 2)
        assert res < 1e-10

    def test_near_singular_at_eigenvalue(self, pm_const_neg1, fib0):
        # lambda = 3 is an embedded eigenvalue for V = -1
        with pytest.raises(NearSingularError) as info:
            m_operator(pm_const_neg1, fib0, 3.0 + 1e-13)
        assert info.value.smallest_singular_value is not None


class TestGvResolvent:
    def test_zero_potential(self, pm_zero, fib0):
        gv = gv_resolvent(pm_zero, fib0, 2.5)
        assert np.max(np.abs(gv.mat)) == 0.0

    def test_constant_scalar_algebra(self, pm_const2, fib0):
        lam = 2.5
        gv = gv_resolvent(pm_const2, fib0, lam)
        for n in (-1, 0, 1):
            beta2 = np.sqrt(lam - n ** 2)
            m_n = beta2 / (beta2 + 2j)      # scalar M with u = 1
            assert abs(gv.entry(n, n) - (1 - m_n)) < 1e-13

    def test_dual_formula_consistency(self, pm_trig, fib01):
        lam = 2.3
        mop = m_operator(pm_trig, fib01, lam).mat
        bs = boundary_bs(pm_trig, fib01, lam).matrix.mat
        u = u_operator(pm_trig, 32).mat
        via_link = u - u @ mop @ u
        via_sandwich = bs - bs @ mop @ bs
        assert np.linalg.norm(via_link - via_sandwich, 2) < 1e-10

    def test_scan_rows(self, pm_trig, fib01):
        rows = scan_csv_rows(pm_trig, fib01, np.linspace(1.5, 2.5, 7))
        assert len(rows) == 7
        for lam, cond, smin in rows:
            assert cond >= 1.0
            assert smin > 0
