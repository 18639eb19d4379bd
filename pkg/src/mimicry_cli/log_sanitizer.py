"""Log Value Sanitizer for Structlog.

Converts numerical values into JSON-safe forms before rendering, so that
numpy scalars, arrays, paths and non-finite floats never break the JSON run log.
"""

import math
from pathlib import Path
from typing import Any

import numpy as np
from structlog.types import EventDict, WrappedLogger


class LogValueProcessor:
    """Structlog processor that makes event values JSON-serializable."""

    # Arrays larger than this are summarized instead of listed
    MAX_INLINE_ELEMENTS = 8

    def __call__(
        self, logger: WrappedLogger, method_name: str, event_dict: EventDict
    ) -> EventDict:
        """Sanitize every value of the event dictionary.

        Args:
            logger: Wrapped logger instance
            method_name: Logging method name
            event_dict: Event dictionary to sanitize

        Returns:
            Event dictionary with JSON-safe values
        """
        for key, value in list(event_dict.items()):
            event_dict[key] = self._sanitize(value)
        return event_dict

    def _sanitize(self, value: Any) -> Any:
        if isinstance(value, np.ndarray):
            return self._sanitize_array(value)
        if isinstance(value, np.generic):
            value = value.item()
        if isinstance(value, float):
            return value if math.isfinite(value) else str(value)
        if isinstance(value, Path):
            return str(value)
        if isinstance(value, dict):
            return {str(k): self._sanitize(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [self._sanitize(v) for v in value]
        return value

    def _sanitize_array(self, array: np.ndarray) -> Any:
        if array.size <= self.MAX_INLINE_ELEMENTS:
            return [self._sanitize(v) for v in array.ravel().tolist()]
        summary: dict[str, Any] = {"shape": list(array.shape), "dtype": str(array.dtype)}
        if np.issubdtype(array.dtype, np.number):
            summary["min"] = self._sanitize(float(np.min(array)))
            summary["max"] = self._sanitize(float(np.max(array)))
        return summary


def get_sanitizer() -> LogValueProcessor:
    """Get log value processor instance.

    Returns:
        LogValueProcessor instance
    """
    return LogValueProcessor()
