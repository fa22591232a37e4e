"""Small shared helpers: seeded RNG splitting and atomic file writes."""

import hashlib
import os
import tempfile
from pathlib import Path

import numpy as np


def subseed(seed: int, component: str) -> int:
    """Derive a per-component sub-seed from a global seed.

    Splitting rule: the first 8 bytes (little-endian) of
    sha256(f"{seed}:{component}").  Adding a new component never perturbs
    the streams of existing ones.
    """
    digest = hashlib.sha256(f"{seed}:{component}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(seed: int, component: str) -> np.random.Generator:
    """Seeded generator for one named component (see :func:`subseed`)."""
    return np.random.default_rng(subseed(seed, component))


def atomic_write_bytes(path, data: bytes) -> None:
    """Write-temp-then-rename so readers never observe a partial file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
