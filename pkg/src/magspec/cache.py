"""Content-addressed file cache for operator matrices and spectra.

Entries live at ``<root>/<kind>/<hash>.bin`` in the binary layout of
:func:`magspec.psido.encode_matrix`.  Writers take a per-entry lock file and
publish through a temporary file plus :func:`os.replace`, so readers never
observe a partial entry.  An entry that fails the header or size check is
treated as a miss and overwritten.
"""
from __future__ import annotations

import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from filelock import FileLock

log = logging.getLogger(__name__)

ENV_VAR = "MAGSPEC_CACHE_DIR"


def default_cache_dir() -> Path:
    env = os.environ.get(ENV_VAR)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "magspec"


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write ``data`` to ``path`` through a temporary sibling and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0
    corrupt: int = 0
    events: list = field(default_factory=list)


class ArtifactCache:
    """get-or-compute over byte-encoded artifacts keyed by content hash.

    Parameters
    ----------
    root : path-like
        Cache directory.
    enabled : bool
        When False every call computes and nothing is stored.
    """

    def __init__(self, root=None, enabled: bool = True, lock_timeout: float = 600.0):
        self.root = Path(root) if root is not None else default_cache_dir()
        self.enabled = enabled
        self.lock_timeout = lock_timeout
        self.stats = CacheStats()

    def path(self, kind: str, key: str) -> Path:
        return self.root / kind / f"{key}.bin"

    def get_or_compute(self, kind: str, key: str, producer: Callable[[], object],
                       encode: Callable[[object], bytes], decode: Callable[[bytes], object]):
        """Return the cached artifact for ``key`` or build, store and return it.

        ``decode`` must raise ValueError on a malformed entry.
        """
        if not self.enabled:
            self.stats.misses += 1
            self.stats.events.append((kind, key, "disabled"))
            return producer()
        path = self.path(kind, key)
        path.parent.mkdir(parents=True, exist_ok=True)
        hit, bad = self._read(path, decode)
        if hit is not None:
            self.stats.hits += 1
            self.stats.events.append((kind, key, "hit"))
            return hit
        with FileLock(str(path) + ".lock", timeout=self.lock_timeout):
            hit, bad_again = self._read(path, decode)  # another writer may have finished meanwhile
            if bad or bad_again:
                self.stats.corrupt += 1
            if hit is not None:
                self.stats.hits += 1
                self.stats.events.append((kind, key, "hit"))
                return hit
            value = producer()
            atomic_write_bytes(path, encode(value))
        self.stats.misses += 1
        self.stats.events.append((kind, key, "miss"))
        return value

    @staticmethod
    def _read(path: Path, decode):
        """(artifact or None, whether a corrupt entry was seen)."""
        try:
            raw = path.read_bytes()
        except FileNotFoundError:
            return None, False
        try:
            return decode(raw), False
        except (ValueError, KeyError, TypeError) as exc:
            log.warning("discarding corrupt cache entry %s: %s", path, exc)
            return None, True
