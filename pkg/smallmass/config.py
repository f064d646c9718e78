"""Process-wide settings for the smallmass simulator."""

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Numerical defaults and runtime knobs, overridable through SMALLMASS_* env vars or .env."""

    PROJECT_NAME: str = "smallmass"
    VERSION: str = "1.0.0"
    DESCRIPTION: str = "Spectral-Galerkin simulator for the small-mass damped stochastic wave equation"

    # Environment Configuration
    DEBUG: bool = False
    LOG_LEVEL: str = "WARNING"
    OUTPUT_DIR: str = "./out"
    DEFAULT_WORKERS: int = 1

    # =====================================
    # NOISE STREAMS
    # =====================================

    # Steps drawn per counter block of a trajectory stream
    NOISE_CHUNK_STEPS: int = 32

    # =====================================
    # VALIDATION GRIDS
    # =====================================

    VALIDATION_GRID_POINTS: int = 10000
    VALIDATION_GRID_MIN: float = 1e-6
    VALIDATION_GRID_MAX: float = 1e6
    A3_FLOOR: float = 1e-6

    # =====================================
    # PROPAGATORS
    # =====================================

    LYAPUNOV_RTOL: float = 1e-10

    # =====================================
    # METRICS & TRANSPORT
    # =====================================

    QUADRATURE_NODES: int = 16
    LOG_OVERFLOW_CAP: float = 600.0
    MAX_ASSIGNMENT_SIZE: int = 1024

    # =====================================
    # ENSEMBLES & PROBES
    # =====================================

    TRAJECTORY_BATCH: int = 256
    CONFIDENCE_Z: float = 1.96
    UNIFORMITY_SPREAD: float = 0.5

    class Config:
        env_file = ".env"
        env_prefix = "SMALLMASS_"
        case_sensitive = True


# Global settings instance
settings = Settings()
