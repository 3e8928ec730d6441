"""
File helpers shared by the CLI.

Outputs are written once: to a temporary file in the destination
directory, then renamed over the target.
"""

import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Optional, Union

from vinecc.errors import FormatError

logger = logging.getLogger(__name__)


def read_bytes(path: Union[str, Path]) -> bytes:
    """
    Read an input file.

    Raises:
        FormatError: If the file cannot be read
    """
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"Cannot read {path}: {e.strerror or e}")


def atomic_write(path: Union[str, Path], content: Union[str, bytes]) -> None:
    """
    Write content to path via a temp file and rename.

    Args:
        path: Destination
        content: Text (written as UTF-8) or bytes
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = content.encode("utf-8") if isinstance(content, str) else content

    with tempfile.NamedTemporaryFile(
        mode="wb",
        dir=path.parent,
        prefix=f".{path.name}.",
        suffix=".tmp",
        delete=False,
    ) as f:
        temp_path = f.name
        f.write(data)
    try:
        os.replace(temp_path, path)
    except OSError:
        os.unlink(temp_path)
        raise
    logger.debug(f"Wrote {len(data)} bytes to {path}")


def dumps_json(obj: Any) -> str:
    """Deterministic JSON text (sorted keys, two-space indent, newline)."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def emit(content: Union[str, bytes], output: Optional[Union[str, Path]], stream: Any) -> None:
    """Write to output atomically, or to stream when no output is given."""
    if output is None:
        stream.write(content if isinstance(content, str) else content.decode("utf-8"))
        stream.flush()
    else:
        atomic_write(output, content)


def read_json(path: Union[str, Path]) -> Any:
    """
    Read and decode a JSON file.

    Raises:
        FormatError: If the file is unreadable or not valid UTF-8 JSON
    """
    data = read_bytes(path)
    try:
        text = data.decode("utf-8-sig")
    except UnicodeDecodeError as e:
        raise FormatError(f"{path} is not valid UTF-8", offset=e.start)
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"Malformed JSON in {path}: {e.msg}", offset=len(text[:e.pos].encode("utf-8")))


def read_text(path: Union[str, Path]) -> str:
    """Read a UTF-8 text file, raising FormatError on bad encoding."""
    data = read_bytes(path)
    try:
        return data.decode("utf-8-sig")
    except UnicodeDecodeError as e:
        raise FormatError(f"{path} is not valid UTF-8", offset=e.start)
