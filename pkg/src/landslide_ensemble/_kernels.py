"""Hot pixel-loop kernels.

Every kernel has two implementations: a numba ``@njit`` loop and a vectorised
numpy fallback. The active path is chosen once at import time; set
``LANDSLIDE_ENSEMBLE_NO_JIT=1`` (or run without numba installed) to force the
numpy path. Both paths are exported with ``_nb`` / ``_np`` suffixes so tests
and the benchmark can compare them directly.
"""
from __future__ import annotations

import logging
import os

import numpy as np

logger = logging.getLogger(__name__)

_DISABLED = os.environ.get("LANDSLIDE_ENSEMBLE_NO_JIT", "").strip().lower() in {"1", "true", "yes"}

try:
    if _DISABLED:
        raise ImportError("numba disabled by LANDSLIDE_ENSEMBLE_NO_JIT")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag in subprocess test
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


BACKEND = "numba" if HAVE_NUMBA else "numpy"


# --------------------------------------------------------------------------
# confusion counts


@njit(cache=True, nogil=True)
def _confusion_counts_nb(pred, label, valid):
    tp = 0
    fp = 0
    fn = 0
    tn = 0
    p = pred.ravel()
    y = label.ravel()
    v = valid.ravel()
    for i in range(p.size):
        if v[i] == 0:
            continue
        if p[i] != 0:
            if y[i] != 0:
                tp += 1
            else:
                fp += 1
        else:
            if y[i] != 0:
                fn += 1
            else:
                tn += 1
    return tp, fp, fn, tn


def _confusion_counts_np(pred, label, valid):
    v = valid.astype(bool).ravel()
    p = pred.astype(bool).ravel()[v]
    y = label.astype(bool).ravel()[v]
    tp = int(np.count_nonzero(p & y))
    fp = int(np.count_nonzero(p & ~y))
    fn = int(np.count_nonzero(~p & y))
    tn = int(p.size - tp - fp - fn)
    return tp, fp, fn, tn


# --------------------------------------------------------------------------
# fixed-order pairwise summation over the leading axis


@njit(cache=True, nogil=True)
def _pairwise_range_nb(stack, lo, hi):
    n = stack.shape[1]
    out = np.empty(n, dtype=np.float64)
    if hi - lo == 1:
        for j in range(n):
            out[j] = np.float64(stack[lo, j])
        return out
    mid = lo + (hi - lo) // 2
    left = _pairwise_range_nb(stack, lo, mid)
    right = _pairwise_range_nb(stack, mid, hi)
    for j in range(n):
        out[j] = left[j] + right[j]
    return out


def _pairwise_sum_nb(stack):
    return _pairwise_range_nb(stack, 0, stack.shape[0])


def _pairwise_sum_np(stack):
    k = stack.shape[0]
    if k == 1:
        return stack[0].astype(np.float64)
    half = k // 2
    return _pairwise_sum_np(stack[:half]) + _pairwise_sum_np(stack[half:])


# --------------------------------------------------------------------------
# (label, single, ensemble) -> 3-bit disagreement code, 8 for invalid

INVALID_CODE = 8


@njit(cache=True, nogil=True)
def _diff_codes_nb(label, single, ens, valid):
    y = label.ravel()
    s = single.ravel()
    e = ens.ravel()
    v = valid.ravel()
    out = np.empty(y.size, dtype=np.uint8)
    for i in range(y.size):
        if v[i] == 0:
            out[i] = 8
        else:
            out[i] = (4 if y[i] != 0 else 0) + (2 if s[i] != 0 else 0) + (1 if e[i] != 0 else 0)
    return out.reshape(label.shape)


def _diff_codes_np(label, single, ens, valid):
    code = (
        4 * (label != 0).astype(np.uint8)
        + 2 * (single != 0).astype(np.uint8)
        + (ens != 0).astype(np.uint8)
    )
    return np.where(valid != 0, code, np.uint8(INVALID_CODE)).astype(np.uint8)


# --------------------------------------------------------------------------
# masked first and second moments (two-pass, float64)


@njit(cache=True, nogil=True)
def _masked_moments_nb(x, valid):
    xs = x.ravel()
    v = valid.ravel()
    n = 0
    s = 0.0
    for i in range(xs.size):
        if v[i] != 0:
            n += 1
            s += xs[i]
    if n == 0:
        return 0, 0.0, 0.0
    mean = s / n
    ss = 0.0
    for i in range(xs.size):
        if v[i] != 0:
            d = xs[i] - mean
            ss += d * d
    return n, s, ss


def _masked_moments_np(x, valid):
    sel = x.ravel()[valid.ravel() != 0].astype(np.float64)
    if sel.size == 0:
        return 0, 0.0, 0.0
    s = float(sel.sum())
    mean = s / sel.size
    return int(sel.size), s, float(((sel - mean) ** 2).sum())


# --------------------------------------------------------------------------
# public dispatch


def confusion_counts(pred: np.ndarray, label: np.ndarray, valid: np.ndarray) -> tuple[int, int, int, int]:
    pred = np.ascontiguousarray(pred, dtype=np.uint8)
    label = np.ascontiguousarray(label, dtype=np.uint8)
    valid = np.ascontiguousarray(valid, dtype=np.uint8)
    if HAVE_NUMBA:
        return tuple(int(c) for c in _confusion_counts_nb(pred, label, valid))
    return _confusion_counts_np(pred, label, valid)


def pairwise_sum(stack: np.ndarray) -> np.ndarray:
    """Sum ``stack`` over axis 0 by recursive halving, in float64.

    The split points depend only on the number of members, so the result is
    bit-identical for a given member order regardless of backend.
    """
    stack = np.asarray(stack)
    if stack.ndim < 1 or stack.shape[0] == 0:
        raise ValueError("pairwise_sum needs at least one member")
    shape = stack.shape[1:]
    flat = np.ascontiguousarray(stack.reshape(stack.shape[0], -1), dtype=np.float64)
    out = _pairwise_sum_nb(flat) if HAVE_NUMBA else _pairwise_sum_np(flat)
    return out.reshape(shape)


def diff_codes(label, single, ens, valid) -> np.ndarray:
    arrs = [np.ascontiguousarray(a, dtype=np.uint8) for a in (label, single, ens, valid)]
    if HAVE_NUMBA:
        return _diff_codes_nb(*arrs)
    return _diff_codes_np(*arrs)


def masked_moments(x: np.ndarray, valid: np.ndarray) -> tuple[int, float, float]:
    """Return ``(count, sum, sum of squared deviations)`` over ``valid`` pixels."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    valid = np.ascontiguousarray(valid, dtype=np.uint8)
    if HAVE_NUMBA:
        n, s, ss = _masked_moments_nb(x, valid)
        return int(n), float(s), float(ss)
    return _masked_moments_np(x, valid)
