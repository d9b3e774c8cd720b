import os

# Keep BLAS single-threaded before numpy loads anywhere: the matrices in
# this suite are small enough that thread fan-out only adds overhead and
# it keeps results bit-reproducible regardless of the host's core count.
for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, os.environ.get("BOXCL_THREADS", "1"))

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest


def fd_grad(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn(x)
        flat[i] = orig - h
        down = fn(x)
        flat[i] = orig
        gf[i] = (up - down) / (2 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


@pytest.fixture
def fd():
    return fd_grad


@pytest.fixture
def relerr():
    return rel_err


def cache_root() -> Path:
    """Disk cache for expensive seeded fixtures (pretrained checkpoints).

    Content is a pure function of (config, seed), so caching only avoids
    recomputation; determinism itself is asserted by dedicated tests
    that never touch this cache.
    """
    root = Path(os.environ.get("BOXCL_TEST_CACHE", Path(__file__).resolve().parent.parent / ".cache"))
    root.mkdir(parents=True, exist_ok=True)
    return root


def config_key(payload) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:24]
