"""
Structured logging and run metrics for maicfeas

Two outputs, both JSON:

- standard error gets one JSON object per line for every event at or above
  the configured level (MAICFEAS_LOG_LEVEL, default INFO);
- a JSON-lines sink (MAICFEAS_METRICS_PATH or --metrics-out) receives the
  buffered events, stage timings and counters of one run when the run is
  flushed. Records are appended, so one file can collect many runs; each
  record carries the session id of the run that wrote it.

Without a sink nothing is buffered and events below the level are dropped
before they are built. A sink that cannot be written is reported on
standard error and never fails the run.

Environment variables:
    - MAICFEAS_LOG_LEVEL: DEBUG/INFO/WARN/ERROR (default INFO)
    - MAICFEAS_METRICS_PATH: JSON-lines sink (optional)
    - ENVIRONMENT: label copied into every record (default local)

Usage:
    from libs.metrics.run_metrics import create_metrics_logger

    metrics = create_metrics_logger("maicfeas", sink_path="metrics.jsonl")
    metrics.log_event("feasibility", {"status": "Interior"})
    with metrics.time_operation("stage_fit", dimensions={"n": 200}):
        ...
    metrics.flush()
"""

import json
import time
import logging
import threading
from datetime import datetime, timezone
from contextlib import contextmanager
from typing import Dict, Any, Optional, Union
from enum import Enum
import uuid
import os


class MetricType(Enum):
    """Metric kinds; the value is the unit written to the sink"""
    COUNTER = "Count"
    GAUGE = "None"
    TIMER = "Seconds"


class LogLevel(Enum):
    """Standard error thresholds"""
    INFO = "INFO"
    WARN = "WARN"
    ERROR = "ERROR"
    DEBUG = "DEBUG"


_PY_LEVELS = {
    LogLevel.DEBUG: logging.DEBUG,
    LogLevel.INFO: logging.INFO,
    LogLevel.WARN: logging.WARNING,
    LogLevel.ERROR: logging.ERROR,
}


def level_from_name(name: Optional[str]) -> LogLevel:
    """Map a level name (case-insensitive, WARNING accepted) to LogLevel"""
    if not name:
        return LogLevel.INFO
    name = name.strip().upper()
    if name == "WARNING":
        name = "WARN"
    try:
        return LogLevel(name)
    except ValueError:
        return LogLevel.INFO


class MetricsLogger:
    """
    JSON event logger with an optional per-run sink.

    The buffer is shared by the alternative-weights worker threads, so every
    append and the swap in flush() hold the lock.
    """

    def __init__(self,
                 service_name: str,
                 version: str = "0.1.0",
                 environment: str = None,
                 sink_path: str = None,
                 log_level: Union[LogLevel, str] = None):
        """
        Args:
            service_name: logger name and `service` field of every record
            version: maicfeas version copied into records
            environment: label, ENVIRONMENT or "local" when omitted
            sink_path: JSON-lines sink, MAICFEAS_METRICS_PATH when omitted
            log_level: standard error threshold, MAICFEAS_LOG_LEVEL when omitted
        """

        self.service_name = service_name
        self.version = version
        self.environment = environment or os.environ.get('ENVIRONMENT', 'local')
        self.session_id = str(uuid.uuid4())[:8]

        # MAICFEAS_* environment fallbacks
        self.sink_path = sink_path or os.environ.get('MAICFEAS_METRICS_PATH')
        if isinstance(log_level, LogLevel):
            self.log_level = log_level
        else:
            self.log_level = level_from_name(log_level or os.environ.get('MAICFEAS_LOG_LEVEL'))

        self._setup_logging()

        self._lock = threading.Lock()

        # Records waiting for the sink
        self._metrics_buffer = []

        self.log_event("metrics_logger_initialized", {
            "service": self.service_name,
            "version": self.version,
            "environment": self.environment,
            "session_id": self.session_id
        }, level=LogLevel.DEBUG)

    @property
    def buffering(self) -> bool:
        return self.sink_path is not None

    def _setup_logging(self):
        """Raw JSON lines on stderr, not propagated to the root logger"""
        self.logger = logging.getLogger(f"{self.service_name}.metrics")
        self.logger.setLevel(_PY_LEVELS[self.log_level])

        # one handler per logger name, also across repeated init()
        if not self.logger.handlers:
            handler = logging.StreamHandler()
            formatter = logging.Formatter('%(message)s')
            handler.setFormatter(formatter)
            self.logger.addHandler(handler)
            self.logger.propagate = False

    def set_level(self, level: Union[LogLevel, str]):
        """Change the minimum level written to standard error"""
        self.log_level = level if isinstance(level, LogLevel) else level_from_name(level)
        self.logger.setLevel(_PY_LEVELS[self.log_level])

    def set_sink(self, sink_path: Optional[str]):
        """Point buffered records at a JSON-lines file (None disables buffering)"""
        with self._lock:
            self.sink_path = sink_path
            if sink_path is None:
                self._metrics_buffer.clear()

    def log_event(self,
                  event_type: str,
                  data: Dict[str, Any] = None,
                  level: LogLevel = LogLevel.INFO,
                  include_in_sink: bool = True):
        """
        Write an event line to standard error and buffer it for the sink.

        The sink gets the event whatever the level, so a run at ERROR still
        leaves a complete record in the metrics file.
        """
        if not self.logger.isEnabledFor(_PY_LEVELS[level]) and not self.buffering:
            return

        timestamp = datetime.now(timezone.utc).isoformat()

        log_entry = {
            "timestamp": timestamp,
            "service": self.service_name,
            "version": self.version,
            "environment": self.environment,
            "session_id": self.session_id,
            "event_type": event_type,
            "level": level.value,
            "data": data or {}
        }

        log_message = json.dumps(log_entry, default=str)

        if level == LogLevel.ERROR:
            self.logger.error(log_message)
        elif level == LogLevel.WARN:
            self.logger.warning(log_message)
        elif level == LogLevel.DEBUG:
            self.logger.debug(log_message)
        else:
            self.logger.info(log_message)

        if include_in_sink and self.buffering:
            with self._lock:
                self._metrics_buffer.append({
                    "type": "event",
                    "timestamp": timestamp,
                    "event_type": event_type,
                    "data": data or {},
                    "level": level.value
                })

    def record_metric(self,
                      metric_name: str,
                      value: Union[int, float],
                      metric_type: MetricType = MetricType.GAUGE,
                      unit: str = None,
                      dimensions: Dict[str, str] = None):
        """
        Buffer one metric record; shown on standard error only at DEBUG.

        Args:
            metric_name: e.g. stage_fit_duration, errors_total
            value: the number
            metric_type: COUNTER, GAUGE or TIMER; the unit follows from it
            unit: overrides the type's unit
            dimensions: merged over Service/Environment/Version
        """
        unit = unit or metric_type.value

        default_dimensions = {
            "Service": self.service_name,
            "Environment": self.environment,
            "Version": self.version
        }
        if dimensions:
            default_dimensions.update(dimensions)

        self.log_event("metric_recorded", {
            "metric_name": metric_name,
            "value": value,
            "type": metric_type.name,
            "unit": unit,
            "dimensions": default_dimensions
        }, level=LogLevel.DEBUG, include_in_sink=False)

        if self.buffering:
            with self._lock:
                self._metrics_buffer.append({
                    "type": "metric",
                    "timestamp": datetime.now(timezone.utc).isoformat(),
                    "metric_name": metric_name,
                    "value": value,
                    "metric_type": metric_type.name,
                    "unit": unit,
                    "dimensions": default_dimensions
                })

    @contextmanager
    def time_operation(self,
                       operation_name: str,
                       record_metric: bool = True,
                       dimensions: Dict[str, str] = None):
        """
        Time a block as `<operation_name>_duration` with Status Success or Failed.

        A failure also bumps operation_failures and re-raises; the caller
        decides whether the error ends the run.

        Usage:
            with metrics.time_operation("hull_check", dimensions={"p": ipd.p}):
                verdict = check_in_hull(ipd, ad)
        """
        start_time = time.perf_counter()

        self.log_event("operation_started", {"operation": operation_name},
                       level=LogLevel.DEBUG)

        try:
            yield

        except Exception as e:
            duration = time.perf_counter() - start_time

            self.log_event("operation_failed", {
                "operation": operation_name,
                "duration": duration,
                "error": str(e),
                "error_type": type(e).__name__
            }, level=LogLevel.WARN)

            if record_metric:
                failure_dimensions = {"Operation": operation_name, "Status": "Failed"}
                if dimensions:
                    failure_dimensions.update(dimensions)
                self.record_timing(f"{operation_name}_duration", duration, failure_dimensions)
                self.increment_counter("operation_failures", dimensions=failure_dimensions)

            raise

        duration = time.perf_counter() - start_time

        self.log_event("operation_completed", {
            "operation": operation_name,
            "duration": duration
        }, level=LogLevel.DEBUG)

        if record_metric:
            success_dimensions = {"Operation": operation_name, "Status": "Success"}
            if dimensions:
                success_dimensions.update(dimensions)
            self.record_timing(f"{operation_name}_duration", duration, success_dimensions)
            self.increment_counter("operation_successes", dimensions=success_dimensions)

    def log_error(self,
                  error: Exception,
                  context: Dict[str, Any] = None,
                  operation: str = None):
        """Log an ERROR event with the exception's context and count it in errors_total."""
        error_data = {
            "error_type": type(error).__name__,
            "error_message": str(error),
            "operation": operation,
            "context": context or {}
        }

        self.log_event("error_occurred", error_data, level=LogLevel.ERROR)

        self.increment_counter("errors_total", dimensions={
            "ErrorType": type(error).__name__,
            "Operation": operation or "unknown"
        })

    def flush(self) -> int:
        """Append the buffered records to the sink and return how many were written (0 on failure)."""
        if not self.buffering:
            return 0

        with self._lock:
            if not self._metrics_buffer:
                return 0
            records = self._metrics_buffer.copy()
            self._metrics_buffer.clear()
            sink_path = self.sink_path

        try:
            with open(sink_path, "a", encoding="utf-8") as f:
                for record in records:
                    record = dict(record, session_id=self.session_id, service=self.service_name)
                    f.write(json.dumps(record, default=str) + "\n")
        except OSError as e:
            # a bad sink is reported, the run goes on
            self.log_event("metrics_sink_error", {
                "error": str(e),
                "metrics_count": len(records)
            }, level=LogLevel.ERROR, include_in_sink=False)
            return 0

        self.log_event("metrics_flushed", {
            "metrics_count": len(records),
            "sink_path": sink_path
        }, level=LogLevel.DEBUG, include_in_sink=False)
        return len(records)

    def increment_counter(self,
                          counter_name: str,
                          value: int = 1,
                          dimensions: Dict[str, str] = None):
        """Counter record, e.g. operation_successes."""
        self.record_metric(counter_name, value, MetricType.COUNTER, dimensions=dimensions)

    def set_gauge(self,
                  gauge_name: str,
                  value: Union[int, float],
                  dimensions: Dict[str, str] = None):
        self.record_metric(gauge_name, value, MetricType.GAUGE, dimensions=dimensions)

    def record_timing(self,
                      timing_name: str,
                      duration: float,
                      dimensions: Dict[str, str] = None):
        """Timer record in seconds."""
        self.record_metric(timing_name, duration, MetricType.TIMER, dimensions=dimensions)

    def shutdown(self):
        """Log the shutdown and flush what is left."""
        self.log_event("metrics_logger_shutdown", {
            "session_id": self.session_id,
            "buffered_metrics": len(self._metrics_buffer)
        }, level=LogLevel.DEBUG)
        self.flush()


def create_metrics_logger(service_name: str, **kwargs) -> MetricsLogger:
    return MetricsLogger(service_name, **kwargs)
