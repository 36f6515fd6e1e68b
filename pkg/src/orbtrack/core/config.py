import os

from dotenv import load_dotenv

load_dotenv()


class Settings:
    """Centralized runtime settings with validation and defaults."""

    def __init__(self) -> None:
        self.LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
        self.LOG_FILE: str = os.getenv("LOG_FILE", "orbtrack.log")

        self.OUTPUT_DIR: str = os.getenv("OUTPUT_DIR", "runs")
        self.MAX_WORKERS: int = int(os.getenv("MAX_WORKERS", "1"))
        self.DEFAULT_SEED: int = int(os.getenv("DEFAULT_SEED", "2024"))
        self.DEPLETION_SAMPLES: int = int(os.getenv("DEPLETION_SAMPLES", "10000"))

        self.API_HOST: str = os.getenv("API_HOST", "0.0.0.0")
        self.API_PORT: int = int(os.getenv("API_PORT", "8000"))

        self.validate()

    def validate(self) -> None:
        if self.LOG_LEVEL.upper() not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"Unsupported LOG_LEVEL: '{self.LOG_LEVEL}'.")

        if self.MAX_WORKERS == 0 or self.MAX_WORKERS < -1:
            raise ValueError("MAX_WORKERS must be a positive worker count or -1 for all cores.")

        if self.DEFAULT_SEED < 0:
            raise ValueError("DEFAULT_SEED must be a non-negative integer.")

        if self.DEPLETION_SAMPLES < 1000:
            raise ValueError("DEPLETION_SAMPLES must be at least 1000.")

        if not 0 < self.API_PORT < 65536:
            raise ValueError(f"API_PORT out of range: {self.API_PORT}.")
