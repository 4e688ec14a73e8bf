"""
Process-wide metrics for maicfeas

Every library module calls `metrics.init()` at import and logs through the
same MetricsLogger, so one CLI invocation has one session id and one sink.
The command line reconfigures the logger per invocation with `configure`
and wraps the command in `command`, which times it, counts it and flushes
the sink once the command is done.
"""

import threading
from contextlib import contextmanager
from typing import Optional

from libs.maic import __version__
from libs.metrics.run_metrics import LogLevel, MetricsLogger, create_metrics_logger

SERVICE_NAME = "maicfeas"


class SharedMetrics:
    """Lazily created MetricsLogger shared by the library and the CLI."""
    _instance = None
    _lock = threading.Lock()
    _logger: Optional[MetricsLogger] = None

    def __new__(cls):
        if cls._instance is None:
            with cls._lock:
                if cls._instance is None:
                    cls._instance = super().__new__(cls)
        return cls._instance

    def init(self, **kwargs) -> MetricsLogger:
        """Create the logger on first call; later calls return it unchanged."""
        if self._logger is None:
            with self._lock:
                if self._logger is None:
                    kwargs.setdefault("version", __version__)
                    self._logger = create_metrics_logger(SERVICE_NAME, **kwargs)
        return self._logger

    @property
    def initialized(self) -> bool:
        return self._logger is not None

    def configure(self, log_level=None, sink_path: Optional[str] = None) -> MetricsLogger:
        """
        Apply one invocation's settings.

        The sink is always replaced, so a run without a sink never writes
        into the previous run's file.
        """
        logger = self.init()
        if log_level is not None:
            logger.set_level(log_level)
        logger.set_sink(sink_path)
        return logger

    @contextmanager
    def command(self, name: str):
        """
        Time a CLI command and flush the sink when it ends.

        The caller stores the command's exit code in the yielded dict. An
        exception is logged with its context before the flush and re-raised.
        """
        logger = self.init()
        result = {"exit_code": None}
        try:
            with logger.time_operation(f"command_{name}"):
                yield result
        except Exception as e:
            context = e.context() if callable(getattr(e, "context", None)) else {}
            logger.log_error(e, context, operation=name)
            result["error_type"] = type(e).__name__
            raise
        finally:
            logger.log_event("command_finished", {"command": name, **result}, LogLevel.DEBUG)
            logger.flush()

    def shutdown(self):
        """Flush and drop the logger; the next init() starts a new session."""
        if self._logger is not None:
            self._logger.shutdown()
            self._logger = None

    def __getattr__(self, name):
        if self._logger is None:
            raise RuntimeError("metrics.init() has not been called")
        return getattr(self._logger, name)


metrics = SharedMetrics()
