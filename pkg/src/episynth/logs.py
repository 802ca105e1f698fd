"""Line-oriented ``key=value`` logging; verbosity from the ``EPISYNTH_LOG`` variable."""

from __future__ import annotations

import logging
import os

_CONFIGURED = False


def get_logger(name: str) -> logging.Logger:
    global _CONFIGURED
    if not _CONFIGURED:
        level = os.environ.get("EPISYNTH_LOG", "WARNING").upper()
        root = logging.getLogger("episynth")
        if not root.handlers:
            handler = logging.StreamHandler()
            handler.setFormatter(logging.Formatter("level=%(levelname)s logger=%(name)s %(message)s"))
            root.addHandler(handler)
        root.setLevel(getattr(logging, level, logging.WARNING))
        _CONFIGURED = True
    return logging.getLogger(name)


def kv(event: str, **fields) -> str:
    """Format ``event=<event> k=v ...`` with floats to 6 significant digits."""
    parts = [f"event={event}"]
    for k, v in fields.items():
        if isinstance(v, float):
            v = f"{v:.6g}"
        parts.append(f"{k}={v}")
    return " ".join(parts)
