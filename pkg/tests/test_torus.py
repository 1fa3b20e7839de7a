import numpy as np
import pytest

from blochscat.errors import ConfigError
from blochscat.torus import (FiberContext, build_potential, channel_column,
                             coefficients_csv, mult_operator,
                             parse_potential_spec, rank_one_vpv, synthesize,
                             u_involution_defect, u_operator, v_operator)


def quadrature_matrix_entry(f_samples, theta, m, mp):
    """Brute-force <e_m, f e_m'> = (1/2pi) int f exp(i(m'-m)theta)."""
    return np.mean(f_samples * np.exp(1j * (mp - m) * theta))


class TestBuildPotential:
    def test_constant_positive(self, pm_const4):
        cut = pm_const4.v_cutoff
        assert pm_const4.v_hat[cut] == 2.0
        assert np.all(pm_const4.v_hat[np.arange(2 * cut + 1) != cut] == 0)
        assert pm_const4.u_hat[cut] == 1.0
        assert pm_const4.sup_norm == 4.0
        assert pm_const4.sign_definite

    def test_constant_negative(self, pm_const_neg1):
        cut = pm_const_neg1.v_cutoff
        assert pm_const_neg1.v_hat[cut] == 1.0
        assert pm_const_neg1.u_hat[cut] == -1.0

    def test_shifted_cos_reconstruction(self, pm_shifted_cos):
        err_v, err_uv = pm_shifted_cos.reconstruction_error()
        assert err_v < 1e-10
        assert err_uv < 1e-10

    def test_sampled_matches_trig(self):
        theta = 2 * np.pi * np.arange(256) / 256
        values = 2.0 + np.cos(theta)
        pm = build_potential(("sampled", values))
        pm2 = build_potential(("trig_poly", {0: 2.0, 1: 0.5}))
        assert np.max(np.abs(pm.v_hat - pm2.v_hat)) < 1e-12

    def test_sampled_nonfinite_rejected(self):
        with pytest.raises(ConfigError):
            build_potential(("sampled", [1.0, np.nan, 2.0]))

    def test_empty_coeffs_rejected(self):
        with pytest.raises(ConfigError):
            build_potential(("trig_poly", np.array([])))

    def test_sampling_resolution_guard(self):
        with pytest.raises(ConfigError):
            build_potential(4.0, samples_per_period=64, v_cutoff=64)

    def test_conjugate_symmetry_enforced(self):
        coeffs = np.array([0.3j, 1.0, 0.2], dtype=complex)  # not symmetric
        with pytest.raises(ConfigError):
            build_potential(("trig_poly", coeffs))

    def test_sign_changing_tail_reported(self):
        pm = build_potential(("trig_poly", {0: 0.2, 1: 0.5}))
        assert not pm.sign_definite
        assert pm.v_decay_report > 0
        assert pm.u_decay_report > 0


class TestMultOperator:
    def test_identity(self):
        coeffs = np.zeros(9, dtype=complex)
        coeffs[4] = 1.0
        op = mult_operator(coeffs, 2)
        assert np.allclose(op.mat, np.eye(5))

    def test_cosine(self):
        # f = cos(theta): fhat(+-1) = 1/2
        coeffs = np.zeros(5, dtype=complex)
        coeffs[1] = coeffs[3] = 0.5
        op = mult_operator(coeffs, 1)
        expect = np.array([[0, .5, 0], [.5, 0, .5], [0, .5, 0]])
        assert np.allclose(op.mat, expect)

    def test_random_against_quadrature(self):
        rng = np.random.default_rng(11)
        coeffs = np.zeros(2 * 40 + 1, dtype=complex)
        for j in range(1, 6):
            val = rng.normal() + 1j * rng.normal()
            coeffs[40 + j] = val
            coeffs[40 - j] = val.conjugate()
        coeffs[40] = rng.normal()
        op = mult_operator(coeffs, 16)
        theta = 2 * np.pi * np.arange(4096) / 4096
        f = synthesize(coeffs, theta).real
        assert op.is_selfadjoint()
        for m, mp in [(-16, -16), (-3, 5), (0, 0), (16, -2), (7, 7)]:
            oracle = quadrature_matrix_entry(f, theta, m, mp)
            assert abs(op.entry(m, mp) - oracle) < 1e-12

    def test_toeplitz_shifts(self, pm_trig):
        op = v_operator(pm_trig, 8)
        for m in range(-8, 8):
            for mp in range(-8, 8):
                assert op.entry(m, mp) == op.entry(m + 0, mp)  # identity
                if m + 1 <= 8 and mp + 1 <= 8:
                    assert abs(op.entry(m, mp) - op.entry(m + 1, mp + 1)) == 0

    def test_cutoff_guard(self):
        coeffs = np.zeros(5, dtype=complex)
        coeffs[2] = 1.0
        with pytest.raises(ConfigError):
            mult_operator(coeffs, 8)
        op = mult_operator(coeffs, 8, allow_zero_pad=True)
        assert np.allclose(op.mat, np.eye(17))


class TestRankOneVpv:
    def test_constant_positive(self, pm_const4):
        op = rank_one_vpv(pm_const4, 3, 8)
        expect = np.zeros((17, 17))
        expect[3 + 8, 3 + 8] = 4.0
        assert np.allclose(op.mat, expect)

    def test_constant_neg_one(self, pm_const_neg1):
        op = rank_one_vpv(pm_const_neg1, -2, 6)
        expect = np.zeros((13, 13))
        expect[-2 + 6, -2 + 6] = 1.0
        assert np.allclose(op.mat, expect)

    def test_matches_matrix_product(self, pm_shifted_cos):
        m = 4
        op = rank_one_vpv(pm_shifted_cos, 0, m)
        vmat = v_operator(pm_shifted_cos, m).mat
        proj = np.zeros((2 * m + 1, 2 * m + 1))
        proj[m, m] = 1.0
        assert np.max(np.abs(op.mat - vmat @ proj @ vmat)) < 1e-12

    def test_psd_rank_one(self, pm_trig):
        rng = np.random.default_rng(3)
        for n in rng.integers(-20, 20, size=6):
            op = rank_one_vpv(pm_trig, int(n), 16)
            eigs = np.linalg.eigvalsh(op.mat)
            assert eigs.min() > -1e-14
            assert np.sum(eigs > 1e-12 * max(eigs.max(), 1e-30)) <= 1

    def test_out_of_range(self, pm_trig):
        with pytest.raises(ConfigError):
            rank_one_vpv(pm_trig, 16 + pm_trig.v_cutoff + 1, 16)


class TestInvariants:
    def test_u_involution_exact_sign_definite(self, pm_trig, pm_const_neg1):
        assert u_involution_defect(pm_trig, 16) < 1e-13
        assert u_involution_defect(pm_const_neg1, 16) < 1e-14

    def test_u_involution_reported_sign_changing(self):
        pm = build_potential(("trig_poly", {0: 0.2, 1: 0.5}))
        defect = u_involution_defect(pm, 16)
        assert defect > 1e-6  # truncation genuinely breaks the involution

    def test_v_squared_close_to_abs_v(self, pm_shifted_cos, pm_const4):
        # |V| = 2 + cos(theta); the finite-section defect of mult(v)^2
        # is controlled by the coefficient tail beyond the cutoff and
        # shrinks rapidly with M (v is analytic here)
        cut = pm_shifted_cos.v_cutoff
        coeffs = np.zeros(2 * cut + 1, dtype=complex)
        coeffs[cut] = 2.0
        coeffs[cut - 1] = coeffs[cut + 1] = 0.5
        errs = []
        for m in (4, 16):
            vmat = v_operator(pm_shifted_cos, m).mat
            absv = mult_operator(coeffs, m, allow_zero_pad=True).mat
            errs.append(np.linalg.norm(vmat @ vmat - absv, 2))
        assert errs[1] < 1e-3 * errs[0]
        assert errs[1] < 1e-7
        # exact for constant V
        vmat = v_operator(pm_const4, 8).mat
        assert np.max(np.abs(vmat @ vmat - 4.0 * np.eye(17))) == 0.0


class TestFiberContext:
    def test_threshold_values(self, fib25):
        assert fib25.threshold(0) == 0.0625
        assert fib25.threshold(-1) == 0.5625
        assert min(fib25.thresholds.values()) == fib25.k ** 2

    def test_multiplicity_structure(self):
        for lam, modes in FiberContext(0.0).sorted_thresholds():
            assert len(modes) <= 2
        for lam, modes in FiberContext(0.3).sorted_thresholds():
            assert len(modes) == 1
        half = FiberContext(0.5)
        for lam, modes in half.sorted_thresholds():
            assert len(modes) <= 2

    def test_modes_at(self, fib0):
        assert fib0.modes_at(1.0) == (-1, 1)
        assert fib0.modes_at(0.5) == ()

    def test_domain_guard(self):
        with pytest.raises(ConfigError):
            FiberContext(0.75)


class TestPlainTextInterfaces:
    def test_csv_round_trip(self, pm_shifted_cos):
        text = coefficients_csv(pm_shifted_cos)
        lines = text.strip().splitlines()
        assert lines[0] == "series,j,re,im"
        rows = [ln.split(",") for ln in lines[1:]]
        v_rows = {int(r[1]): complex(float(r[2]), float(r[3]))
                  for r in rows if r[0] == "v"}
        cut = pm_shifted_cos.v_cutoff
        assert abs(v_rows[0] - pm_shifted_cos.v_hat[cut]) < 1e-15

    def test_parse_potential_spec(self):
        spec = parse_potential_spec({"kind": "constant", "constant": "-2.5"})
        assert spec == ("constant", -2.5)
        spec = parse_potential_spec({"kind": "trig_poly",
                                     "coeffs": "0:2.0, 1:0.5+0.1j"})
        pm = build_potential(spec)
        assert pm.sup_norm > 0
        with pytest.raises(ConfigError):
            parse_potential_spec({"kind": "nope"})
        with pytest.raises(ConfigError):
            parse_potential_spec({"kind": "trig_poly", "coeffs": "0:x"})
