"""Tests for the end-to-end precoders and their dominance relations."""

import numpy as np
import pytest

from onebit.services.bb_engine import exhaustive_oracle, make_split, maxmin_cost
from onebit.services.ci_geometry import build_M, mse_objective
from onebit.services.constellations import parse_modulation
from onebit.services.precoders import (
    PRECODERS,
    ChannelRankError,
    UnknownPrecoderError,
    alt_opt_pbb_qam,
    ci_onebit_psk,
    ci_onebit_qam,
    compute_beta,
    compute_beta_real,
    fbb_psk_precode,
    get_precoder,
    opsu_psk,
    opsu_qam,
    pbb_psk_precode,
    zf_precode,
)
from onebit.services.real_expansion import DacAlphabet, expand_channel, expand_vector

TOL = 1e-12


def assert_one_bit(x, nt: int) -> None:
    scale = DacAlphabet(nt).scale
    np.testing.assert_allclose(np.abs(x.real), scale, rtol=0, atol=1e-15)
    np.testing.assert_allclose(np.abs(x.imag), scale, rtol=0, atol=1e-15)
    assert np.vdot(x, x).real == pytest.approx(1.0, abs=1e-12)


class TestZeroForcing:
    def test_identity_channel(self, qpsk) -> None:
        s = qpsk.points[[0, 1, 3]]
        result = zf_precode(np.eye(3), s)
        np.testing.assert_allclose(result.x, s / np.linalg.norm(s), atol=1e-12)

    def test_no_interference(self, qpsk, instance) -> None:
        H, s = instance(qpsk, 3, 8, 1)
        x = zf_precode(H, s).x
        received = H @ x
        ratio = received / s
        np.testing.assert_allclose(ratio, ratio[0], atol=1e-10)
        assert np.linalg.norm(x) == pytest.approx(1.0)

    def test_quantized_reintroduces_interference(self, qpsk, instance) -> None:
        H, s = instance(qpsk, 2, 8, 3)
        result = zf_precode(H, s, quantized=True, constellation=qpsk)
        assert_one_bit(result.x, 8)
        lam = build_M(H, s, qpsk).M @ expand_vector(result.x)
        assert np.ptp(lam) > 1e-6
        assert result.objective == pytest.approx(lam.min())

    def test_rank_deficient_channel(self, qpsk) -> None:
        H = np.array([[1.0, 1j], [2.0, 2j]])
        with pytest.raises(ChannelRankError):
            zf_precode(H, qpsk.points[:2])


class TestPrecodingFactor:
    def test_exact_delivery_with_unit_noise(self, qpsk) -> None:
        s = qpsk.points[[0, 2]]
        assert compute_beta(s, np.eye(2), s, 1.0) == pytest.approx(0.5)

    def test_noiseless_exact_delivery(self, qam16) -> None:
        s = qam16.points[[3, 9]]
        assert compute_beta(s, np.eye(2), s, 0.0) == pytest.approx(1.0)

    def test_degenerate(self) -> None:
        assert compute_beta(np.zeros(2), np.eye(2), np.ones(2), 0.0) == 0.0

    def test_real_form_agrees(self, qam16, instance, rng) -> None:
        for seed in range(20):
            H, s = instance(qam16, 3, 6, seed)
            x = rng.standard_normal(6) + 1j * rng.standard_normal(6)
            sigma2 = rng.uniform(0.0, 1.0)
            complex_form = compute_beta(x, H, s, sigma2)
            real_form = compute_beta_real(expand_vector(x), expand_channel(H), expand_vector(s), 3, sigma2)
            assert real_form == pytest.approx(complex_form, abs=1e-12)

    def test_beta_minimises_mse(self, qam16, instance, rng) -> None:
        for seed in range(10):
            H, s = instance(qam16, 2, 6, seed)
            P = build_M(H, s, qam16)
            x_E = rng.choice([-1.0, 1.0], size=12) * P.dac.scale
            beta = compute_beta_real(x_E, P.H_E, P.s_E, 2, 0.3)
            best = mse_objective(x_E, beta, P, 0.3)
            assert mse_objective(x_E, beta + 1e-3, P, 0.3) > best
            assert mse_objective(x_E, beta - 1e-3, P, 0.3) > best


class TestPSK:
    @pytest.mark.parametrize("name", ["qpsk", "8psk", "16psk"])
    def test_dominance_chain(self, name: str, instance) -> None:
        """CI 1-bit <= OPSU <= P-BB <= F-BB in the max-min sense."""
        c = parse_modulation(name)
        for seed in range(15):
            H, s = instance(c, 2, 4, seed)
            ci = ci_onebit_psk(H, s, c).objective
            opsu = opsu_psk(H, s, c).objective
            pbb = pbb_psk_precode(H, s, c).objective
            full = fbb_psk_precode(H, s, c).objective
            assert ci <= opsu + TOL
            assert opsu <= pbb + TOL
            assert pbb <= full + TOL

    def test_fbb_is_global_optimum(self, qpsk, instance) -> None:
        for seed in range(10):
            H, s = instance(qpsk, 1, 2, seed)
            P = build_M(H, s, qpsk)
            _, best = exhaustive_oracle(maxmin_cost(P), np.zeros(4), range(4), P.dac)
            assert fbb_psk_precode(H, s, qpsk).objective == pytest.approx(-best, abs=TOL)

    def test_single_antenna_single_user(self, qpsk, instance) -> None:
        for seed in range(10):
            H, s = instance(qpsk, 1, 1, seed)
            P = build_M(H, s, qpsk)
            _, best = exhaustive_oracle(maxmin_cost(P), np.zeros(2), range(2), P.dac)
            assert fbb_psk_precode(H, s, qpsk).objective == pytest.approx(-best, abs=TOL)
            assert pbb_psk_precode(H, s, qpsk).objective <= -best + TOL
            assert ci_onebit_psk(H, s, qpsk).objective <= -best + TOL

    def test_quantization_cannot_beat_relaxation(self, psk8, instance) -> None:
        for seed in range(10):
            H, s = instance(psk8, 2, 8, seed)
            result = ci_onebit_psk(H, s, psk8)
            assert result.objective <= result.lp.t + TOL

    def test_opsu_equals_pbb_with_one_residual(self, qpsk, instance) -> None:
        checked = 0
        for seed in range(30):
            H, s = instance(qpsk, 1, 4, seed)
            ci = ci_onebit_psk(H, s, qpsk)
            if len(make_split(ci.relaxed, DacAlphabet(4)).residual_idx) != 1:
                continue
            checked += 1
            assert opsu_psk(H, s, qpsk).objective == pytest.approx(pbb_psk_precode(H, s, qpsk).objective, abs=TOL)
        assert checked > 0

    def test_outputs_are_one_bit(self, psk8, instance) -> None:
        H, s = instance(psk8, 3, 8, 9)
        for precode in (ci_onebit_psk, opsu_psk, pbb_psk_precode):
            assert_one_bit(precode(H, s, psk8).x, 8)
            assert precode(H, s, psk8).beta == 1.0


class TestQAM:
    SIGMA2 = 0.1

    @pytest.mark.parametrize("name", ["16qam", "64qam"])
    def test_dominance(self, name: str, instance) -> None:
        c = parse_modulation(name)
        for seed in range(10):
            H, s = instance(c, 2, 8, seed)
            ci = ci_onebit_qam(H, s, c, self.SIGMA2).objective
            assert opsu_qam(H, s, c, self.SIGMA2).objective <= ci + TOL
            assert alt_opt_pbb_qam(H, s, c, self.SIGMA2, 1e-3).objective <= ci + TOL

    def test_all_corner_symbols_have_no_equalities(self, qam16, instance) -> None:
        H, _ = instance(qam16, 2, 4, 0)
        corners = np.array([3 + 3j, -3 + 3j]) / np.sqrt(10)
        result = ci_onebit_qam(H, corners, qam16, self.SIGMA2)
        assert build_M(H, corners, qam16).eq_rows == ()
        assert_one_bit(result.x, 4)

    def test_relaxed_solution_boundary_count(self, qam16, instance) -> None:
        for seed in range(10):
            H, s = instance(qam16, 2, 8, seed)
            result = ci_onebit_qam(H, s, qam16, self.SIGMA2)
            assert len(make_split(result.relaxed, DacAlphabet(8)).residual_idx) <= 3

    def test_alternating_trace(self, qam16, instance) -> None:
        for seed in range(10):
            H, s = instance(qam16, 2, 8, seed)
            result = alt_opt_pbb_qam(H, s, qam16, self.SIGMA2, 1e-3)
            trace = np.array(result.mse_trace)
            assert np.all(np.diff(trace) <= 1e-12)
            assert 1 <= result.alt_rounds <= 100
            assert not result.capped
            assert result.objective <= trace[-1] + TOL
            assert_one_bit(result.x, 8)

    def test_fbb_inner_search(self, qam16, instance) -> None:
        H, s = instance(qam16, 2, 4, 5)
        pbb = alt_opt_pbb_qam(H, s, qam16, self.SIGMA2, 1e-3)
        full = alt_opt_pbb_qam(H, s, qam16, self.SIGMA2, 1e-3, inner="fbb")
        assert np.all(np.diff(full.mse_trace) <= 1e-12)
        assert full.mse_trace[0] == pytest.approx(pbb.mse_trace[0])

    def test_round_cap_is_flagged(self, qam16, instance) -> None:
        H, s = instance(qam16, 2, 8, 1)
        result = alt_opt_pbb_qam(H, s, qam16, self.SIGMA2, epsilon0=1e-300, max_rounds=1)
        assert result.alt_rounds == 1
        moved = abs(result.mse_trace[1] - result.mse_trace[0]) > 1e-300
        assert result.capped is moved

    def test_argument_checks(self, qam16, instance) -> None:
        H, s = instance(qam16, 1, 2, 0)
        with pytest.raises(ValueError):
            alt_opt_pbb_qam(H, s, qam16, self.SIGMA2, epsilon0=0.0)
        with pytest.raises(ValueError):
            alt_opt_pbb_qam(H, s, qam16, self.SIGMA2, inner="dfs")

    def test_opsu_single_residual_brute_force(self, qam16, instance) -> None:
        """With one residual entry OPSU is the best of {incumbent, -scale, +scale} at per-candidate beta."""
        checked = 0
        for seed in range(30):
            H, s = instance(qam16, 1, 4, seed)
            ci = ci_onebit_qam(H, s, qam16, self.SIGMA2)
            split = make_split(ci.relaxed, DacAlphabet(4))
            if len(split.residual_idx) != 1:
                continue
            checked += 1
            P = build_M(H, s, qam16)
            x_E = expand_vector(ci.x)
            j = split.residual_idx[0]
            candidates = [ci.objective]
            for value in (-P.dac.scale, P.dac.scale):
                trial = x_E.copy()
                trial[j] = value
                beta = compute_beta_real(trial, P.H_E, P.s_E, P.k, self.SIGMA2)
                candidates.append(mse_objective(trial, beta, P, self.SIGMA2))
            assert opsu_qam(H, s, qam16, self.SIGMA2).objective == pytest.approx(min(candidates), abs=TOL)
        assert checked > 0


class TestRegistry:
    def test_names(self) -> None:
        assert set(PRECODERS) == {"zf-inf", "zf-1bit", "ci-1bit", "opsu", "pbb", "fbb"}
        assert get_precoder(" PBB ") is PRECODERS["pbb"]

    def test_unknown(self) -> None:
        with pytest.raises(UnknownPrecoderError):
            get_precoder("mmse")

    @pytest.mark.parametrize("name", ["zf-1bit", "ci-1bit", "opsu", "pbb", "fbb"])
    @pytest.mark.parametrize("modulation", ["qpsk", "16qam"])
    def test_dispatch_on_modulation(self, name: str, modulation: str, instance) -> None:
        c = parse_modulation(modulation)
        H, s = instance(c, 2, 4, 3)
        result = get_precoder(name)(H, s, c, 0.1, 1e-3)
        assert_one_bit(np.asarray(result.x), 4)
        assert np.isfinite(result.objective)
