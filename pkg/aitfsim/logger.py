"""Logging system for aitfsim."""

import logging
import logging.handlers
import os
from contextlib import contextmanager
from typing import Iterator, Optional

IDLE_RUN = "-"


class RunFilter(logging.Filter):
    """Stamps every record with the scenario run it belongs to."""

    def __init__(self):
        super().__init__()
        self.run = IDLE_RUN

    def filter(self, record: logging.LogRecord) -> bool:
        record.run = self.run
        return True


class Logger:
    """Centralized logging system for aitfsim."""

    _instance = None
    _logger: Optional[logging.Logger] = None
    _run_filter: Optional[RunFilter] = None

    def __new__(cls):
        """Singleton pattern."""
        if cls._instance is None:
            cls._instance = super(Logger, cls).__new__(cls)
        return cls._instance

    def __init__(self):
        if self._logger is None:
            self._setup_logger()

    def _setup_logger(self, config: Optional[object] = None):
        """Setup the logger with configuration.

        Args:
            config: Settings object (aitfsim.config.Config)
        """
        if config is None:
            # config.py never imports this module
            from .config import Config
            config = Config()

        logger = logging.getLogger('aitfsim')
        level = str(config.log_level or 'WARNING').upper()
        logger.setLevel(getattr(logging, level, logging.WARNING))
        logger.propagate = False

        if Logger._run_filter is None:
            Logger._run_filter = RunFilter()
        logger.removeFilter(Logger._run_filter)
        logger.addFilter(Logger._run_filter)

        for handler in list(logger.handlers):
            logger.removeHandler(handler)
            handler.close()

        formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - [%(run)s] %(message)s'
        )

        # stderr only: reports own stdout
        console_handler = logging.StreamHandler()
        console_handler.setFormatter(formatter)
        logger.addHandler(console_handler)

        log_file = config.log_file
        if log_file:
            try:
                os.makedirs(os.path.dirname(log_file) or '.', exist_ok=True)
                file_handler = logging.handlers.RotatingFileHandler(
                    log_file,
                    maxBytes=config.log_max_size,
                    backupCount=config.log_backup_count
                )
                file_handler.setFormatter(formatter)
                logger.addHandler(file_handler)
            except OSError as e:
                logger.warning(f"Failed to open log file {log_file}: {e}")

        Logger._logger = logger

    def configure(self, config: object) -> None:
        """Re-read level and handlers from a settings object."""
        self._setup_logger(config)

    @property
    def run(self) -> str:
        """Tag of the run being simulated, or '-' between runs."""
        return self._run_filter.run if self._run_filter else IDLE_RUN

    @contextmanager
    def run_context(self, scenario: str, seed: int) -> Iterator[str]:
        """Tag records logged inside the block with ``<scenario> seed=<seed>``."""
        previous = self._run_filter.run
        self._run_filter.run = f"{scenario} seed={seed}"
        try:
            yield self._run_filter.run
        finally:
            self._run_filter.run = previous

    def debug(self, message: str, *args, **kwargs):
        """Log debug message."""
        self._logger.debug(message, *args, **kwargs)

    def info(self, message: str, *args, **kwargs):
        """Log info message."""
        self._logger.info(message, *args, **kwargs)

    def warning(self, message: str, *args, **kwargs):
        """Log warning message."""
        self._logger.warning(message, *args, **kwargs)

    def error(self, message: str, *args, **kwargs):
        """Log error message."""
        self._logger.error(message, *args, **kwargs)


# Global logger instance
logger = Logger()
