"""Deterministic per-pixel jitter streams.

Stratified sampling needs one independent uniform stream per pixel that is
(a) reproducible from (seed, pixel index) alone, (b) identical whether pixels
are drawn one ray at a time or as a whole view, and (c) cheap for a quarter
million samples per render. A counter-based SplitMix64 construction gives all
three: a per-pixel sub-seed is hashed from (seed, pixel index), and draw s of
that pixel is the mixed output of sub_seed + (s + 1) * gamma. Everything is
plain uint64 arithmetic, so whole (pixels x samples) blocks vectorize.
"""

from __future__ import annotations

import numpy as np

__all__ = ["PixelStream", "pixel_stream", "jitter_block"]

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / float(1 << 53)


def _mix(z: np.ndarray) -> np.ndarray:
    # uint64 arithmetic wraps by design; numpy warns on scalar overflow only.
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def _sub_seed(seed: int, pixel_index: int | np.ndarray) -> np.ndarray:
    s = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
    idx = np.asarray(pixel_index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix(_mix(s + _GAMMA) ^ _mix(idx + _GAMMA * np.uint64(2)))


def _uniform(sub_seed: np.ndarray, draw_index: np.ndarray) -> np.ndarray:
    """Uniform doubles in [0, 1) for given sub-seeds and draw counters."""
    with np.errstate(over="ignore"):
        word = _mix(sub_seed + (draw_index.astype(np.uint64) + np.uint64(1)) * _GAMMA)
    return (word >> np.uint64(11)).astype(np.float64) * _INV53


class PixelStream:
    """Sequential view of one pixel's stream; mimics Generator.random(n)."""

    def __init__(self, seed: int, pixel_index: int):
        self._sub = _sub_seed(seed, pixel_index)
        self._pos = 0

    def random(self, n: int) -> np.ndarray:
        idx = np.arange(self._pos, self._pos + int(n), dtype=np.uint64)
        self._pos += int(n)
        return _uniform(self._sub, idx)


def pixel_stream(seed: int, pixel_index: int) -> PixelStream:
    return PixelStream(seed, pixel_index)


def jitter_block(seed: int, n_pixels: int, n_samples: int) -> np.ndarray:
    """(n_pixels, n_samples) jitter; row i equals pixel_stream(seed, i).random(n_samples)."""
    subs = _sub_seed(seed, np.arange(n_pixels, dtype=np.uint64))[:, None]
    draws = np.arange(n_samples, dtype=np.uint64)[None, :]
    return _uniform(np.broadcast_to(subs, (n_pixels, n_samples)), np.broadcast_to(draws, (n_pixels, n_samples)))
