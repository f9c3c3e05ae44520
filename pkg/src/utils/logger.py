"""
Logging utilities for SpectraLink
Provides structured logging with console and rotating file output
"""

import logging
import logging.handlers
import sys
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional
import structlog

DEFAULT_LOGGING = {
    'level': 'INFO',
    'format': 'console',
    'file': 'logs/spectralink.log',
    'max_file_size': '20MB',
    'backup_count': 3
}

_STANDARD_RECORD_KEYS = {
    'name', 'msg', 'args', 'levelname', 'levelno', 'pathname', 'filename',
    'module', 'exc_info', 'exc_text', 'stack_info', 'lineno', 'funcName',
    'created', 'msecs', 'relativeCreated', 'thread', 'threadName',
    'processName', 'process', 'taskName'
}


def setup_logging(config: Optional[dict] = None, console_level: Optional[str] = None):
    """Setup structured logging for SpectraLink runs"""
    config = {**DEFAULT_LOGGING, **(config or {})}

    log_file = Path(config['file'])
    log_file.parent.mkdir(parents=True, exist_ok=True)

    renderer = (structlog.processors.JSONRenderer() if config['format'] == 'json'
                else structlog.dev.ConsoleRenderer(colors=False))
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.UnicodeDecoder(),
            renderer
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=False,
    )

    level = getattr(logging, config['level'].upper())
    root = logging.getLogger()
    root.setLevel(level)
    # Repeated runs in one process (tests, compare) must not stack handlers
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(getattr(logging, (console_level or config['level']).upper()))
    file_handler = logging.handlers.RotatingFileHandler(
        config['file'],
        maxBytes=_parse_size(config['max_file_size']),
        backupCount=config['backup_count']
    )

    for handler in (console_handler, file_handler):
        if config['format'] == 'json':
            handler.setFormatter(JSONFormatter())
        else:
            handler.setFormatter(logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s'))
        root.addHandler(handler)


def _parse_size(size_str: str) -> int:
    """Parse size string like '20MB' to bytes"""
    units = {'KB': 1024, 'MB': 1024**2, 'GB': 1024**3, 'B': 1}

    size_str = str(size_str).upper().strip()
    for unit, multiplier in units.items():
        if size_str.endswith(unit):
            try:
                return int(size_str[:-len(unit)].strip()) * multiplier
            except ValueError:
                return 10 * 1024 * 1024

    try:
        return int(size_str)
    except ValueError:
        return 10 * 1024 * 1024


class JSONFormatter(logging.Formatter):
    """JSON formatter for log records"""

    def format(self, record):
        log_entry = {
            'timestamp': datetime.fromtimestamp(record.created, tz=timezone.utc).isoformat(),
            'level': record.levelname,
            'logger': record.name,
            'message': record.getMessage(),
            'module': record.module,
            'function': record.funcName,
            'line': record.lineno
        }

        if record.exc_info:
            log_entry['exception'] = self.formatException(record.exc_info)

        for key, value in record.__dict__.items():
            if key not in _STANDARD_RECORD_KEYS:
                log_entry[key] = value

        return json.dumps(log_entry, default=str)


def get_logger(name: str):
    """Get a structured logger instance"""
    return structlog.get_logger(name)
