"""Resampling and fitting helpers shared by the Monte-Carlo estimators."""

import numpy as np

JACKKNIFE_BLOCKS = 20


def log_mean_exp(x, axis=0):
    """``log(mean(exp(x)))`` without overflow."""
    x = np.asarray(x, dtype=float)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.mean(np.exp(x - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def jackknife(stat, data, blocks=JACKKNIFE_BLOCKS):
    """Delete-one-block jackknife of ``stat`` over the leading axis of ``data``.

    Parameters
    ----------
    stat : callable
        Maps an array with the same trailing shape as ``data`` to a scalar
        or array.
    data : ndarray
        Samples along axis 0, split into ``blocks`` contiguous groups.

    Returns
    -------
    estimate, stderr
        ``stat(data)`` and the jackknife standard error (zeros when fewer
        than two blocks are available).
    """
    data = np.asarray(data)
    full = np.asarray(stat(data), dtype=float)
    n = data.shape[0]
    b = min(blocks, n)
    if b < 2:
        return full, np.zeros_like(full)
    edges = np.linspace(0, n, b + 1).round().astype(int)
    reps = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        keep = np.concatenate([np.arange(lo), np.arange(hi, n)])
        reps.append(np.asarray(stat(data[keep]), dtype=float))
    reps = np.array(reps)
    se = np.sqrt((b - 1) / b * np.sum((reps - reps.mean(axis=0)) ** 2, axis=0))
    return full, se


def linear_fit(x, y):
    """Least-squares ``y ~ a + b x``; returns ``(b, a, r2)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    A = np.column_stack([np.ones_like(x), x])
    (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (a + b * x)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return float(b), float(a), float(r2)


def mean_stderr(x):
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(np.mean(x)), 0.0
    return float(np.mean(x)), float(np.std(x, ddof=1) / np.sqrt(x.size))
