"""Evaluation metrics used by run summaries and tests."""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractViolation

__all__ = ["psnr", "mean_abs_diff"]


def _masked(a: np.ndarray, b: np.ndarray, mask):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractViolation("image shapes differ")
    if mask is None:
        return a.reshape(-1), b.reshape(-1)
    m = np.asarray(mask).astype(bool)
    if m.shape != a.shape[: m.ndim]:
        raise ContractViolation("mask shape does not match the images")
    return a[m].reshape(-1), b[m].reshape(-1)


def psnr(a: np.ndarray, b: np.ndarray, mask=None, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, optionally over masked pixels only.

    Returns +inf for identical inputs and nan for an empty mask.
    """
    av, bv = _masked(a, b, mask)
    if av.size == 0:
        return float("nan")
    mse = float(np.mean((av - bv) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * math.log10(peak * peak / mse)


def mean_abs_diff(a: np.ndarray, b: np.ndarray, mask=None) -> float:
    """Mean absolute difference, optionally over masked pixels only."""
    av, bv = _masked(a, b, mask)
    if av.size == 0:
        return float("nan")
    return float(np.mean(np.abs(av - bv)))
