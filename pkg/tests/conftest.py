"""Shared fixtures. The run store is pointed at a throwaway SQLite file before any app import."""

import logging
import os
import tempfile

_TMP = tempfile.mkdtemp(prefix="onebit-tests-")
os.environ.setdefault("DATABASE_URL", f"sqlite+aiosqlite:///{_TMP}/runs.db")
os.environ.setdefault("DEBUG", "false")

import numpy as np
import pytest

from onebit.services.constellations import Constellation, parse_modulation
from onebit.services.simulation import frame_rng, gen_channel


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(2024)


@pytest.fixture
def qpsk() -> Constellation:
    return parse_modulation("qpsk")


@pytest.fixture
def psk8() -> Constellation:
    return parse_modulation("8psk")


@pytest.fixture
def qam16() -> Constellation:
    return parse_modulation("16qam")


def random_instance(constellation: Constellation, k: int, nt: int, seed: int):
    """(H, symbols) drawn from a seeded generator."""
    rng = frame_rng(seed, k, nt)
    H = gen_channel(k, nt, rng).H
    symbols = constellation.points[rng.integers(0, constellation.order, size=k)]
    return H, symbols


@pytest.fixture
def instance():
    return random_instance


@pytest.fixture(autouse=True)
def _detach_log_handlers():
    """CLI and app startup attach a stream handler; drop it so it never outlives a captured stream."""
    yield
    logger = logging.getLogger("onebit")
    for handler in list(logger.handlers):
        if getattr(handler, "_onebit_handler", False):
            logger.removeHandler(handler)
    logger.setLevel(logging.NOTSET)
