"""Logging configuration for the lab."""
import logging
import logging.handlers
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional

from prometheus_client import REGISTRY, Counter, Histogram, write_to_textfile

PACKAGE_LOGGER = "src"


class LabLogger:
    """Configure and manage logging for lab runs."""

    # Prometheus metrics
    log_entries = Counter('lab_log_entries_total',
                          'Total number of log entries',
                          ['level', 'component'])
    stage_seconds = Histogram('lab_stage_seconds',
                              'Wall time of numerical stages',
                              ['stage'],
                              buckets=[0.01, 0.1, 1.0, 10.0, 60.0, 600.0])

    def __init__(self, log_dir: str = "logs", level: str = "INFO",
                 console: bool = True):
        """Initialize the package logger with file and console handlers.

        Args:
            log_dir: Directory to store log files
            level: Console level name
            console: Whether to attach a console handler
        """
        self.log_dir = Path(log_dir)
        self.log_dir.mkdir(parents=True, exist_ok=True)

        self.logger = logging.getLogger(PACKAGE_LOGGER)
        self.logger.setLevel(logging.DEBUG)
        self.logger.propagate = False

        for handler in self.logger.handlers[:]:
            self.logger.removeHandler(handler)
            handler.close()

        file_formatter = logging.Formatter(
            '%(asctime)s | %(levelname)-8s | %(name)s | %(message)s'
        )
        console_formatter = logging.Formatter(
            '%(asctime)s | %(levelname)-8s | %(message)s'
        )

        main_handler = logging.handlers.RotatingFileHandler(
            self.log_dir / "lab.log",
            maxBytes=10*1024*1024,  # 10MB
            backupCount=5
        )
        main_handler.setLevel(logging.DEBUG)
        main_handler.setFormatter(file_formatter)

        error_handler = logging.handlers.RotatingFileHandler(
            self.log_dir / "errors.log",
            maxBytes=10*1024*1024,  # 10MB
            backupCount=5
        )
        error_handler.setLevel(logging.ERROR)
        error_handler.setFormatter(file_formatter)

        self.logger.addHandler(main_handler)
        self.logger.addHandler(error_handler)

        if console:
            console_handler = logging.StreamHandler()
            console_handler.setLevel(getattr(logging, level.upper(), logging.INFO))
            console_handler.setFormatter(console_formatter)
            self.logger.addHandler(console_handler)

    def get_logger(self) -> logging.Logger:
        """Get the configured package logger."""
        return self.logger

    def close(self) -> None:
        for handler in self.logger.handlers[:]:
            self.logger.removeHandler(handler)
            handler.close()

    def export_metrics(self) -> Path:
        """Write the process metrics in the Prometheus text format next to the logs."""
        path = self.log_dir / "metrics.prom"
        write_to_textfile(str(path), REGISTRY)
        return path

    def log_with_metrics(self, level: int, msg: str,
                         component: str = "general", **kwargs) -> None:
        """Log a message and update metrics.

        Args:
            level: Logging level (e.g., logging.INFO)
            msg: Message to log
            component: Component name for metrics
            **kwargs: Additional fields, appended as key=value pairs
        """
        self.log_entries.labels(
            level=logging.getLevelName(level),
            component=component
        ).inc()

        if kwargs:
            fields = " ".join(f"{k}={v}" for k, v in sorted(kwargs.items()))
            msg = f"{msg} | {fields}"
        self.logger.log(level, msg)


@contextmanager
def stage_timer(stage: str, logger: Optional[logging.Logger] = None) -> Iterator[None]:
    """Time a numerical stage into the stage histogram."""
    start = time.perf_counter()
    try:
        yield
    finally:
        elapsed = time.perf_counter() - start
        LabLogger.stage_seconds.labels(stage=stage).observe(elapsed)
        if logger is not None:
            logger.debug(f"{stage} took {elapsed:.3f}s")


_lab_logger: Optional[LabLogger] = None


def configure_logging(settings) -> LabLogger:
    """Attach handlers to the package logger from process settings."""
    global _lab_logger
    if _lab_logger is not None:
        _lab_logger.close()
    _lab_logger = LabLogger(log_dir=settings.LAB_LOG_DIR, level=settings.LAB_LOG_LEVEL)
    return _lab_logger


def get_lab_logger() -> Optional[LabLogger]:
    return _lab_logger
