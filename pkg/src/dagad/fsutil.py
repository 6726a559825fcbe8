"""Atomic file writes (write-temp-then-rename)."""
import os
from pathlib import Path


def atomic_write(path, data):
    path = Path(path)
    if isinstance(data, str):
        data = data.encode()
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
