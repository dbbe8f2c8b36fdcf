"""Content-addressed on-disk cache for kernel tables.

Files are .npz archives named by a digest of (kernel config, dt, format
version).  A stored table satisfies any request for the same config with a
shorter horizon by slicing, so a cache populated at the longest horizon of
a sweep serves every grid point.  Writes are atomic (tmp + replace).
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import time
from pathlib import Path

import numpy as np

from .kernels import KernelConfig, KernelTable

FORMAT_VERSION = 1

ENV_CACHE_DIR = "QFGP_CACHE_DIR"


def resolve_cache_dir(configured: str | None, outdir: str | None = None):
    """Cache directory precedence: explicit config > environment > outdir
    default.  Returns None when caching is disabled ("" configured)."""
    if configured == "":
        return None
    if configured is not None:
        return Path(configured)
    env = os.environ.get(ENV_CACHE_DIR)
    if env:
        return Path(env)
    if outdir is not None:
        return Path(outdir) / ".kernel-cache"
    return None


def _entry_key(cfg: KernelConfig, dt: float) -> str:
    blob = json.dumps({"config": cfg.canonical_dict(), "dt": dt,
                       "format": FORMAT_VERSION}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:24]


def _entry_path(cache_dir, cfg: KernelConfig, dt: float) -> Path:
    return Path(cache_dir) / f"{_entry_key(cfg, dt)}.npz"


def load_table(cache_dir, cfg: KernelConfig, dt: float) -> KernelTable | None:
    """Return the stored table for (cfg, dt), or None on miss/mismatch."""
    path = _entry_path(cache_dir, cfg, dt)
    if not path.exists():
        return None
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("format") != FORMAT_VERSION:
                return None
            if meta.get("config_hash") != cfg.digest():
                return None
            return KernelTable(dt=float(meta["dt"]), t=z["t"].copy(),
                               nu=z["nu"].copy(), eta=z["eta"].copy(),
                               config_hash=meta["config_hash"],
                               tail_estimate=float(meta["tail_estimate"]))
    except (OSError, KeyError, ValueError):
        return None  # unreadable entries behave as misses


def store_table(cache_dir, cfg: KernelConfig, table: KernelTable) -> Path:
    """Persist a table unless an equal-or-longer entry already exists."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = _entry_path(cache_dir, cfg, table.dt)
    existing = load_table(cache_dir, cfg, table.dt)
    if existing is not None and len(existing.t) >= len(table.t):
        return path
    meta = json.dumps({
        "format": FORMAT_VERSION,
        "config_hash": table.config_hash,
        "config": cfg.canonical_dict(),
        "dt": table.dt,
        "t_max": table.t_max,
        "tail_estimate": table.tail_estimate,
        "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }, sort_keys=True)
    fd, tmp = tempfile.mkstemp(dir=cache_dir, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, t=table.t, nu=table.nu, eta=table.eta,
                     meta=np.array(meta))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path
