"""
Configuration module for the 1-bit CI precoding toolkit.

Uses pydantic-settings to load numerical tolerances, search guards and the
run-store location from environment variables or a .env file. Simulation
parameters are not settings; they travel in SimConfig (see models.py).
"""

from functools import lru_cache

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Application settings loaded from environment variables.

    SEARCH GUARDS:
    - fbb_max_dimension: F-BB refuses problems with more real entries than this
    - exhaustive_max_dimension: the enumeration oracle refuses larger residual sets
    """

    # Simplex (max-min LP)
    lp_tolerance: float = 1e-9
    lp_max_iterations: int = 50_000

    # Active-set box least squares
    box_ls_tolerance: float = 1e-8
    box_ls_max_iterations: int = 500

    # Entries closer than ratio * scale to the box edge count as quantized
    boundary_epsilon_ratio: float = 1e-6

    # Branch-and-bound
    bb_prune_tolerance: float = 1e-9  # prune only if LB >= UB0 + tolerance
    fbb_max_dimension: int = 24
    exhaustive_max_dimension: int = 20

    # Alternating optimisation (QAM)
    alt_opt_max_rounds: int = 100
    alt_opt_epsilon: float = 1e-3

    # Run store
    database_url: str = "sqlite+aiosqlite:///./onebit_runs.db"

    # Application
    log_level: str = "INFO"
    debug: bool = False

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
    )


@lru_cache
def get_settings() -> Settings:
    """
    Get cached settings instance.

    Uses lru_cache so solvers deep inside a Monte Carlo loop do not re-read .env.
    """
    return Settings()
