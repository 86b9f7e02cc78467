"""Content-addressed on-disk cache of computed arrays (versioned .npz files)."""

from __future__ import annotations

import hashlib
import logging
import os
import tempfile
import zipfile
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger(__name__)

FORMAT = 1


def cache_dir():
    env = os.environ.get("FRF_CACHE_DIR")
    if env:
        return Path(env)
    base = os.environ.get("XDG_CACHE_HOME") or Path.home() / ".cache"
    return Path(base) / "frf"


def cache_key(kind, fdef, weights=None, level=None):
    """Hash of the canonical definition, the weights and the level."""
    h = hashlib.sha256()
    h.update(f"{FORMAT}|{kind}|{fdef.digest()}|".encode())
    if weights is not None:
        h.update(np.asarray(weights, dtype=float).tobytes())
    h.update(f"|{level}".encode())
    return h.hexdigest()[:32]


class Cache:
    def __init__(self, root=None, enabled=True):
        self.root = Path(root) if root is not None else cache_dir()
        self.enabled = enabled
        self.hits = 0
        self.misses = 0

    def _path(self, key):
        return self.root / f"{key}.npz"

    def load(self, key):
        if not self.enabled:
            return None
        path = self._path(key)
        if not path.exists():
            self.misses += 1
            return None
        try:
            with np.load(path, allow_pickle=False) as data:
                if int(data["__format__"]) != FORMAT:
                    self.misses += 1
                    return None
                out = {k: data[k] for k in data.files if not k.startswith("__")}
        except (OSError, ValueError, KeyError, zipfile.BadZipFile) as exc:
            log.warning("ignoring corrupt cache entry %s (%s)", path, exc)
            self.misses += 1
            return None
        self.hits += 1
        return out

    def store(self, key, **arrays):
        if not self.enabled:
            return
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".tmp")
            with os.fdopen(fd, "wb") as fh:
                np.savez(fh, __format__=np.array(FORMAT), __version__=np.array(__version__), **arrays)
            os.replace(tmp, self._path(key))
        except OSError as exc:
            log.warning("cache write failed: %s", exc)

    def get(self, key, compute):
        """Cached dict of arrays, computing and storing on a miss."""
        hit = self.load(key)
        if hit is not None:
            return hit
        arrays = compute()
        self.store(key, **arrays)
        return arrays
