"""
Local artifact layout: run-log directory and JSON run logs.

Run logs carry wall-clock timestamps, so they are written only where a log directory
was configured explicitly (io.output_dir, --log-dir or SYLVAN_OUTPUT_BASE).
"""
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional, Union

from config import settings

logger = logging.getLogger(__name__)


def output_base(override: Optional[Union[str, Path]] = None) -> Optional[Path]:
    """Configured base directory for run logs, or None when nothing is configured."""
    if override:
        return Path(override)
    base = getattr(settings, "sylvan_output_base", None)
    if base:
        return Path(base)
    return None


def ensure_dirs(base: Path) -> None:
    """Create the base directory and its logs/ subdirectory."""
    (base / "logs").mkdir(parents=True, exist_ok=True)


def write_json_log(kind: str, payload: Dict[str, Any], base: Optional[Union[str, Path]] = None) -> Optional[str]:
    """Write a JSON summary of one run under <base>/logs/; return its path (None if no base is configured)."""
    resolved = output_base(base)
    if resolved is None:
        logger.debug("No log directory configured; %s run log not written", kind)
        return None
    ensure_dirs(resolved)
    now = datetime.now(timezone.utc)
    path = resolved / "logs" / f"{kind}_{now.strftime('%Y%m%d_%H%M%S')}.json"
    with open(path, "w") as f:
        json.dump({"timestamp": now.isoformat(), "kind": kind, **payload}, f, indent=2, default=str)
    return str(path)
