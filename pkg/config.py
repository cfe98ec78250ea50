import logging
import os

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


class Config:
    """Base configuration."""

    # Where `seer run`, `train`, `sweep` and `compare` write when no --output
    # is given and the run config has no output_dir.
    OUTPUT_DIR = os.environ.get("SEER_OUTPUT_DIR", "output")

    LOG_LEVEL = os.environ.get("SEER_LOG_LEVEL", "INFO").upper()
    if not isinstance(logging.getLevelName(LOG_LEVEL), int):
        raise ValueError(
            f"SEER_LOG_LEVEL must be one of DEBUG, INFO, WARNING, ERROR, CRITICAL; got {LOG_LEVEL!r}"
        )

    # Run the next cycle's pre-scheduling on a worker thread. Setting this to
    # false forces the synchronous handoff everywhere, which is handy when
    # profiling a single thread.
    OVERLAP = os.environ.get("SEER_OVERLAP", "True").lower() == "true"


class TestConfig(Config):
    """Configuration for testing."""

    TESTING = True
    OUTPUT_DIR = "test-output"
    LOG_LEVEL = "WARNING"
    # Keep test runs single-threaded and deterministic in timing
    OVERLAP = False
