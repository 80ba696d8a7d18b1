"""Hot numeric kernels with numba acceleration and a pure-numpy fallback.

Set ``ECGDX_NO_NUMBA=1`` to force the numpy path (useful for debugging and
for the benchmark in ``benchmarks/bench_kernels.py``). Both paths compute
bit-identical results; the numpy path is the reference implementation.
"""

from __future__ import annotations

import os

import numpy as np

USE_NUMBA = os.environ.get("ECGDX_NO_NUMBA", "0") != "1"

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:
        USE_NUMBA = False


def _quantile_sorted(s: np.ndarray, q: float) -> float:
    # linear interpolation, matches np.quantile(method="linear")
    pos = q * (s.size - 1)
    lo = int(np.floor(pos))
    if lo >= s.size - 1:
        return float(s[-1])
    frac = pos - lo
    return float(s[lo] + frac * (s[lo + 1] - s[lo]))


def _rolling_quantile_numpy(x: np.ndarray, window: int, q: float) -> np.ndarray:
    n = x.size
    out = np.empty(n, dtype=np.float64)
    half = window // 2
    for k in range(n):
        lo = max(0, k - half)
        hi = min(n, k - half + window)
        s = np.sort(x[lo:hi])
        out[k] = _quantile_sorted(s, q)
    return out


def _resample_linear_numpy(values: np.ndarray, out_len: int) -> np.ndarray:
    n = values.size
    if n == 1:
        return np.full(out_len, values[0], dtype=np.float64)
    src = np.linspace(0.0, n - 1.0, out_len)
    return np.interp(src, np.arange(n, dtype=np.float64), values)


if USE_NUMBA:

    @njit(cache=True)
    def _rolling_quantile_numba(x, window, q):  # pragma: no cover - numba path
        n = x.size
        out = np.empty(n, dtype=np.float64)
        half = window // 2
        # incrementally maintained sorted window; lo/hi advance by <= 1 per step
        buf = np.empty(window, dtype=np.float64)
        lo = 0
        hi = min(n, window - half)
        m = hi - lo
        buf[:m] = np.sort(x[lo:hi].astype(np.float64))
        for k in range(n):
            new_lo = max(0, k - half)
            new_hi = min(n, k - half + window)
            if new_lo > lo:  # drop x[lo]
                v = x[lo]
                i = np.searchsorted(buf[:m], v)
                while buf[i] != v:
                    i += 1
                for j in range(i, m - 1):
                    buf[j] = buf[j + 1]
                m -= 1
                lo = new_lo
            if new_hi > hi:  # insert x[hi]
                v = x[hi]
                i = np.searchsorted(buf[:m], v)
                for j in range(m, i, -1):
                    buf[j] = buf[j - 1]
                buf[i] = v
                m += 1
                hi = new_hi
            pos = q * (m - 1)
            p = int(np.floor(pos))
            if p >= m - 1:
                out[k] = buf[m - 1]
            else:
                out[k] = buf[p] + (pos - p) * (buf[p + 1] - buf[p])
        return out

    @njit(cache=True)
    def _resample_linear_numba(values, out_len):  # pragma: no cover - numba path
        n = values.size
        out = np.empty(out_len, dtype=np.float64)
        if n == 1:
            out[:] = values[0]
            return out
        step = (n - 1.0) / (out_len - 1.0) if out_len > 1 else 0.0
        for i in range(out_len):
            pos = i * step
            p = int(np.floor(pos))
            if p >= n - 1:
                out[i] = values[n - 1]
            else:
                out[i] = values[p] + (pos - p) * (values[p + 1] - values[p])
        return out


def rolling_quantile(x: np.ndarray, window: int, q: float) -> np.ndarray:
    """Centered rolling quantile with edge-clipped windows.

    Position k covers samples [max(0, k - window//2), min(n, k - window//2 + window)).
    """
    if window < 2:
        raise ValueError("window must be >= 2")
    x = np.ascontiguousarray(x, dtype=np.float64)
    if USE_NUMBA:
        return _rolling_quantile_numba(x, window, q)
    return _rolling_quantile_numpy(x, window, q)


def resample_linear(values: np.ndarray, out_len: int) -> np.ndarray:
    """Linearly resample a 1-D signal onto ``out_len`` evenly spaced points."""
    if out_len < 1:
        raise ValueError("out_len must be >= 1")
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot resample an empty signal")
    if USE_NUMBA:
        return _resample_linear_numba(values, out_len)
    return _resample_linear_numpy(values, out_len)
