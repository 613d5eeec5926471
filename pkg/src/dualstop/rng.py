"""Keyed counter-based random streams.

Every variate is a pure function of ``(seed, stream, path, slot)``: the
Philox key is derived from ``(seed, stream)`` and the counter from the path
index, so any chunk of paths can be generated independently and in any
order with bit-identical results.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

STREAMS = {
    "drivers": 0,
    "xi": 1,
    "derive": 2,
}

_TWO_M53 = 2.0 ** -53


def _key(seed: int, stream: str) -> np.ndarray:
    if stream not in STREAMS:
        raise KeyError(f"unknown random stream {stream!r}")
    seed = int(seed)
    if not 0 <= seed < 2 ** 64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(STREAMS[stream],))
    return ss.generate_state(2, np.uint64)


def uniforms(seed: int, stream: str, n_paths: int, width: int, start: int = 0) -> np.ndarray:
    """Open-interval uniforms of shape ``(n_paths, width)`` for paths ``start..start+n_paths-1``."""
    if n_paths < 0 or width < 1:
        raise ValueError("n_paths must be >= 0 and width >= 1")
    steps = -(-width // 4)  # one Philox block yields 4 words
    bg = np.random.Philox(
        key=_key(seed, stream),
        counter=np.array([start * steps, 0, 0, 0], dtype=np.uint64),
    )
    raw = bg.random_raw(4 * steps * n_paths).reshape(n_paths, 4 * steps)[:, :width]
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53


def normals(seed: int, stream: str, n_paths: int, width: int, start: int = 0) -> np.ndarray:
    """Standard normals by inverse-CDF transform of :func:`uniforms`."""
    return ndtri(uniforms(seed, stream, n_paths, width, start))


def derive_seed(seed: int, tag: int) -> int:
    """Deterministic, statistically independent child seed (e.g. for test bundles)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(STREAMS["derive"], int(tag)))
    return int(ss.generate_state(1, np.uint64)[0])
