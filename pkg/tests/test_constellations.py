"""Tests for alphabets, symbol decomposition, QAM partition and (de)modulation."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from onebit.models import ModulationKind
from onebit.services.constellations import (
    ConstellationError,
    bits_of,
    count_bit_errors,
    decompose,
    decompose_psk,
    decompose_qam,
    demodulate,
    demodulate_many,
    gray,
    make_constellation,
    modulate,
    parse_modulation,
    partition_qam,
)

ALL_NAMES = ["qpsk", "8psk", "16psk", "16qam", "64qam"]


class TestAlphabet:
    @pytest.mark.parametrize("name", ALL_NAMES)
    def test_unit_average_energy(self, name: str) -> None:
        c = parse_modulation(name)
        assert np.mean(np.abs(c.points) ** 2) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("name", ALL_NAMES)
    def test_labels_are_a_permutation(self, name: str) -> None:
        c = parse_modulation(name)
        assert sorted(c.labels.tolist()) == list(range(c.order))
        assert c.name == name

    @pytest.mark.parametrize("name", ALL_NAMES)
    def test_gray_neighbours_differ_by_one_bit(self, name: str) -> None:
        """Nearest neighbours differ in exactly one bit."""
        c = parse_modulation(name)
        dist = np.abs(c.points[:, None] - c.points[None, :])
        np.fill_diagonal(dist, np.inf)
        d_min = dist.min()
        for i, j in zip(*np.nonzero(dist < d_min + 1e-9)):
            assert bin(int(c.labels[i]) ^ int(c.labels[j])).count("1") == 1

    def test_16qam_grid(self) -> None:
        c = parse_modulation("16qam")
        grid = np.sort(np.unique(np.round(c.points.real * math.sqrt(10), 9)))
        np.testing.assert_allclose(grid, [-3, -1, 1, 3])

    def test_gray(self) -> None:
        assert [gray(k) for k in range(8)] == [0, 1, 3, 2, 6, 7, 5, 4]

    @pytest.mark.parametrize("name", ["bpsk", "psk", "32qam", "3psk", "qam"])
    def test_unknown_modulation(self, name: str) -> None:
        with pytest.raises(ConstellationError):
            parse_modulation(name)

    def test_tables_are_cached_and_read_only(self) -> None:
        c = make_constellation(ModulationKind.PSK, 8)
        assert c is parse_modulation("8PSK")
        with pytest.raises(ValueError):
            c.points[0] = 0

    def test_index_of_rejects_off_alphabet(self, qpsk) -> None:
        with pytest.raises(ConstellationError):
            qpsk.index_of([1.0 + 0j])


class TestDecomposition:
    def test_qpsk_first_quadrant(self) -> None:
        s = (1 + 1j) / math.sqrt(2)
        d = decompose_psk(s, 4)
        assert d.sA == pytest.approx(1 / math.sqrt(2))
        assert d.sB == pytest.approx(1j / math.sqrt(2))

    def test_8psk_closed_form(self) -> None:
        s = complex(np.exp(1j * np.pi / 8))
        d = decompose_psk(s, 8)
        weight = math.sin(math.pi / 8) / math.sin(math.pi / 4)
        assert weight == pytest.approx(0.5412, abs=1e-4)
        assert d.sA == pytest.approx(weight)
        assert d.sB == pytest.approx(weight * np.exp(1j * np.pi / 4))

    @pytest.mark.parametrize("name", ["qpsk", "8psk", "16psk"])
    def test_psk_components_reconstruct(self, name: str) -> None:
        c = parse_modulation(name)
        for s in c.points:
            d = decompose(s, c)
            assert d.sA + d.sB == pytest.approx(s, abs=1e-12)
            assert abs(d.sA) > 0 and abs(d.sB) > 0

    def test_psk_rejects_non_unit_symbol(self) -> None:
        with pytest.raises(ConstellationError):
            decompose_psk(2.0, 4)

    def test_qam_split(self) -> None:
        assert decompose_qam(3 + 1j) == (3, 1j)
        assert decompose_qam(-1 - 1j) == (-1, -1j)


class TestPartition:
    def test_corner_edge_inner(self, qam16) -> None:
        n = math.sqrt(10)
        corner, edge, inner = (3 + 3j) / n, (3 + 1j) / n, (1 - 1j) / n
        part = partition_qam([corner, edge, inner], qam16)
        # alpha^A of user k sits at k, alpha^B at K + k
        assert part.outer_indices == (0, 1, 3)
        assert part.inner_indices == (2, 4, 5)

    def test_rejects_psk(self, qpsk) -> None:
        with pytest.raises(ConstellationError):
            partition_qam(qpsk.points[:1], qpsk)

    @pytest.mark.parametrize("name", ["16qam", "64qam"])
    def test_covers_every_coefficient(self, name: str, rng) -> None:
        c = parse_modulation(name)
        symbols = c.points[rng.integers(0, c.order, size=7)]
        part = partition_qam(symbols, c)
        assert sorted(part.outer_indices + part.inner_indices) == list(range(14))


class TestModulation:
    def test_qpsk_nearest_phase(self, qpsk) -> None:
        index, _ = demodulate(2 + 0.1j, qpsk)
        assert np.angle(qpsk.points[index]) == pytest.approx(np.pi / 4)

    def test_qam_exact_point(self, qam16) -> None:
        for i, p in enumerate(qam16.points):
            assert demodulate(p / 0.5, qam16, beta=0.5)[0] == i

    def test_qam_needs_positive_beta(self, qam16) -> None:
        with pytest.raises(ConstellationError):
            demodulate_many([0.1], qam16, beta=0.0)

    def test_ties_go_to_lowest_index(self, qam16) -> None:
        assert demodulate(0j, qam16)[0] == 5

    @pytest.mark.parametrize("name", ALL_NAMES)
    @given(seed=st.integers(min_value=0, max_value=2**32 - 1))
    def test_noiseless_round_trip(self, name: str, seed: int) -> None:
        c = parse_modulation(name)
        bits = np.random.default_rng(seed).integers(0, 2, size=c.bits_per_symbol * 20)
        symbols, indices = modulate(bits, c)
        decided = demodulate_many(symbols, c)
        np.testing.assert_array_equal(decided, indices)
        assert count_bit_errors(bits, bits_of(decided, c)) == 0

    def test_modulate_rejects_partial_symbol(self, psk8) -> None:
        with pytest.raises(ConstellationError):
            modulate([0, 1], psk8)

    def test_count_bit_errors(self) -> None:
        assert count_bit_errors([0, 1, 1, 0], [1, 1, 0, 0]) == 2
        with pytest.raises(ConstellationError):
            count_bit_errors([0, 1], [0])
