"""Tests for the scaling matrix, objectives and structural audits."""

import math

import numpy as np
import pytest

from onebit.services.ci_geometry import (
    BoxViolationError,
    DimensionMismatchError,
    audit_boundary,
    audit_rank,
    build_M,
    kkt_residuals,
    mse_objective,
    psk_objective,
    reconstruct_received,
    scaling_vector,
)
from onebit.services.constellations import ConstellationError, parse_modulation
from onebit.services.precoders import relax_ci_problem
from onebit.services.real_expansion import DacAlphabet, expand_vector, quantize_1bit

MODULATIONS = ["qpsk", "8psk", "16psk", "16qam", "64qam"]


class TestScalingMatrix:
    def test_qpsk_first_quadrant_rows(self, qpsk, rng) -> None:
        """For the 45 degree point alpha^A = sqrt2 Re(h^T x), alpha^B = sqrt2 Im(h^T x)."""
        h = rng.standard_normal((1, 3)) + 1j * rng.standard_normal((1, 3))
        x = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        P = build_M(h, qpsk.points[:1], qpsk)
        lam = scaling_vector(P, expand_vector(x))
        received = (h @ x)[0]
        np.testing.assert_allclose(lam, [math.sqrt(2) * received.real, math.sqrt(2) * received.imag], atol=1e-12)

    def test_exact_delivery_gives_unit_scaling(self, qpsk) -> None:
        s = qpsk.points[2:3]
        P = build_M([[1.0]], s, qpsk)
        np.testing.assert_allclose(scaling_vector(P, expand_vector(s)), [1.0, 1.0], atol=1e-12)

    @pytest.mark.parametrize("name", MODULATIONS)
    def test_reconstruction(self, name: str, instance, rng) -> None:
        """h_k^T x is rebuilt from Lambda through the symbol basis."""
        c = parse_modulation(name)
        for seed in range(20):
            H, s = instance(c, 3, 5, seed)
            x = rng.standard_normal(5) + 1j * rng.standard_normal(5)
            P = build_M(H, s, c)
            lam = scaling_vector(P, expand_vector(x))
            np.testing.assert_allclose(reconstruct_received(P, lam), H @ x, atol=1e-9)

    def test_zero_and_linearity(self, psk8, instance, rng) -> None:
        H, s = instance(psk8, 2, 4, 7)
        P = build_M(H, s, psk8)
        np.testing.assert_array_equal(scaling_vector(P, np.zeros(8)), np.zeros(4))
        x, y = rng.standard_normal(8), rng.standard_normal(8)
        np.testing.assert_allclose(
            scaling_vector(P, x + y), scaling_vector(P, x) + scaling_vector(P, y), atol=1e-12
        )

    def test_dimension_checks(self, qpsk) -> None:
        with pytest.raises(DimensionMismatchError):
            build_M(np.ones((2, 3)), qpsk.points[:1], qpsk)
        P = build_M(np.ones((1, 3)), qpsk.points[:1], qpsk)
        with pytest.raises(DimensionMismatchError):
            scaling_vector(P, np.zeros(4))

    def test_off_alphabet_symbol(self, qpsk) -> None:
        with pytest.raises(ConstellationError):
            build_M(np.ones((1, 2)), [0.3 + 0.1j], qpsk)

    def test_qam_problem_carries_inner_rows(self, qam16) -> None:
        inner = (1 - 1j) / math.sqrt(10)
        P = build_M(np.ones((1, 2)), [inner], qam16)
        assert P.eq_rows == (0, 1)
        assert build_M(np.ones((1, 2)), [(3 + 3j) / math.sqrt(10)], qam16).eq_rows == ()


class TestObjectives:
    def test_psk_objective(self) -> None:
        assert psk_objective([1, 1, 1, 1]) == 1
        assert psk_objective([0.5, -0.2, 1, 3]) == pytest.approx(-0.2)

    def test_mse_at_zero_beta(self, qam16, instance) -> None:
        H, s = instance(qam16, 2, 4, 3)
        P = build_M(H, s, qam16)
        assert mse_objective(np.ones(8), 0.0, P, 0.7) == pytest.approx(float(P.s_E @ P.s_E))

    def test_mse_exact_delivery(self, qam16) -> None:
        s = qam16.points[[0, 6]]
        P = build_M(np.eye(2), s, qam16)
        assert mse_objective(expand_vector(s), 1.0, P, 0.0) == pytest.approx(0.0, abs=1e-24)

    def test_mse_matches_complex_form(self, qam16, instance, rng) -> None:
        for seed in range(10):
            H, s = instance(qam16, 3, 6, seed)
            P = build_M(H, s, qam16)
            x = rng.standard_normal(6) + 1j * rng.standard_normal(6)
            beta, sigma2 = rng.uniform(0.1, 2.0), rng.uniform(0.0, 1.0)
            r = s - beta * (H @ x)
            expected = float(np.vdot(r, r).real) + beta * beta * 3 * sigma2
            assert mse_objective(expand_vector(x), beta, P, sigma2) == pytest.approx(expected, rel=1e-12)


class TestAudits:
    def test_rank_generic(self, qpsk, instance) -> None:
        H, s = instance(qpsk, 4, 16, 11)
        assert audit_rank(build_M(H, s, qpsk).M) == 8

    def test_rank_single_user(self, psk8, instance) -> None:
        H, s = instance(psk8, 1, 4, 2)
        assert audit_rank(build_M(H, s, psk8).M) == 2

    def test_rank_duplicated_user(self, qpsk, instance) -> None:
        H, s = instance(qpsk, 3, 8, 5)
        H[1], s[1] = H[0], s[0]
        assert audit_rank(build_M(H, s, qpsk).M) < 6

    def test_boundary_of_quantized_vector(self, rng) -> None:
        dac = DacAlphabet(4)
        x = quantize_1bit(rng.standard_normal(8), dac)
        assert audit_boundary(x, dac) == ((), 0)

    def test_boundary_indices(self) -> None:
        dac = DacAlphabet(2)
        audit = audit_boundary([0.5, 0.2, -0.5 + 1e-9, -0.49], dac)
        assert audit.indices == (1, 3)
        assert audit.count == 2

    def test_boundary_rejects_box_violation(self) -> None:
        with pytest.raises(BoxViolationError):
            audit_boundary([0.6, 0.0], DacAlphabet(2))

    @pytest.mark.parametrize("name", MODULATIONS)
    def test_relaxed_solution_boundary_bound(self, name: str, instance) -> None:
        """At most 2K - 1 relaxed entries lie strictly inside the box."""
        c = parse_modulation(name)
        for seed in range(10):
            H, s = instance(c, 2, 8, seed)
            P = build_M(H, s, c)
            lp = relax_ci_problem(P, None)
            assert audit_boundary(lp.x, P.dac).count <= 3


class TestKKT:
    M_TOY = np.array([[2.0, 1.0], [1.0, 2.0]])

    def test_hand_built_optimum(self) -> None:
        report = kkt_residuals([0.5, 0.5], 1.5, [0.5, 0.5], [1.5, 1.5], [0.0, 0.0], self.M_TOY, 0.5)
        assert report.max_residual == pytest.approx(0.0, abs=1e-15)

    def test_perturbed_point_is_flagged(self) -> None:
        report = kkt_residuals([0.49, 0.5], 1.5, [0.5, 0.5], [1.5, 1.5], [0.0, 0.0], self.M_TOY, 0.5)
        assert report.complementary == pytest.approx(0.015)
        assert report.complementary > 1e-3
        assert report.primal_feasibility == pytest.approx(0.02)

    def test_wrong_duals_fail_stationarity(self) -> None:
        report = kkt_residuals([0.5, 0.5], 1.5, [1.0, 0.0], [1.5, 1.5], [0.0, 0.0], self.M_TOY, 0.5)
        assert report.stationarity == pytest.approx(0.5)

    @pytest.mark.parametrize("name", MODULATIONS)
    def test_solver_duals_certify_optimality(self, name: str, instance) -> None:
        c = parse_modulation(name)
        for seed in range(10):
            H, s = instance(c, 3, 8, seed)
            P = build_M(H, s, c)
            lp = relax_ci_problem(P, None)
            report = kkt_residuals(lp.x, lp.t, lp.beta, lp.mu, lp.nu, P.M, P.dac.scale, eq_rows=P.eq_rows)
            assert report.max_residual <= 1e-6, report
