"""Counter-based random number streams.

Every Monte Carlo routine in the package draws from a Philox generator keyed
by ``(seed, stream)``.  Streams are statistically independent for distinct
keys, so workers can own disjoint streams and a reduction over chunks is
reproducible regardless of scheduling.
"""
from __future__ import annotations

import numpy as np

__all__ = ["stream", "chunk_streams"]


def stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Generator for the given (seed, stream) pair. Same pair, same draws."""
    if seed < 0 or stream_id < 0:
        raise ValueError("seed and stream_id must be nonnegative")
    key = (int(seed) << 64) | int(stream_id)
    return np.random.Generator(np.random.Philox(key=key))


def chunk_streams(seed: int, n_total: int, chunk: int):
    """Split a workload of ``n_total`` draws into (stream, count) chunks.

    Chunks are indexed deterministically: chunk ``i`` always owns stream
    ``i + 1`` (stream 0 is reserved for non-chunked use with the same seed).
    """
    out = []
    i, done = 0, 0
    while done < n_total:
        m = min(chunk, n_total - done)
        out.append((stream(seed, i + 1), m))
        done += m
        i += 1
    return out
