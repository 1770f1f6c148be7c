"""Hot numeric kernels: exact top-k dot-product scans over index matrices.

Two interchangeable backends compute identical rankings:

* ``numba`` -- JIT-compiled single-pass scan with an insertion buffer,
  no temporary score array.
* ``numpy`` -- vectorized matvec plus a stable sort.

Backend selection: the ``FEDRAG_KERNELS`` environment variable
(``numba`` or ``numpy``) wins, otherwise numba is used when importable.
``benchmarks/bench_kernels.py`` compares both.

Scores are accumulated in float64 from float32 index rows. Ties are
broken by row index ascending; index rows are stored sorted by chunk id,
so this equals the chunk-id tie rule used everywhere else.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    _NUMBA_OK = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _NUMBA_OK = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap if not (args and callable(args[0])) else args[0]


def dot_scores_numpy(mat: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Float64 dot product of every row of ``mat`` against ``query``."""
    return mat.astype(np.float64) @ np.asarray(query, dtype=np.float64)


def topk_numpy(mat: np.ndarray, query: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-k rows by dot product: score desc, row index asc on ties."""
    scores = dot_scores_numpy(mat, query)
    # stable sort on -scores keeps lower row indices first among ties
    order = np.argsort(-scores, kind="stable")[: min(k, mat.shape[0])]
    return order.astype(np.int64), scores[order]


@njit(cache=True)
def _dot_scores_nb(mat, query):  # pragma: no cover - exercised via dispatch
    n, d = mat.shape
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        acc = 0.0
        for j in range(d):
            acc += mat[i, j] * query[j]
        out[i] = acc
    return out


@njit(cache=True)
def _topk_nb(mat, query, k):  # pragma: no cover - exercised via dispatch
    n, d = mat.shape
    size = min(k, n)
    best_scores = np.empty(size, dtype=np.float64)
    best_idx = np.empty(size, dtype=np.int64)
    filled = 0
    for i in range(n):
        acc = 0.0
        for j in range(d):
            acc += mat[i, j] * query[j]
        if filled < size:
            pos = filled
            while pos > 0 and best_scores[pos - 1] < acc:
                best_scores[pos] = best_scores[pos - 1]
                best_idx[pos] = best_idx[pos - 1]
                pos -= 1
            best_scores[pos] = acc
            best_idx[pos] = i
            filled += 1
        elif acc > best_scores[size - 1]:
            pos = size - 1
            while pos > 0 and best_scores[pos - 1] < acc:
                best_scores[pos] = best_scores[pos - 1]
                best_idx[pos] = best_idx[pos - 1]
                pos -= 1
            best_scores[pos] = acc
            best_idx[pos] = i
    return best_idx, best_scores


def dot_scores_numba(mat: np.ndarray, query: np.ndarray) -> np.ndarray:
    return _dot_scores_nb(
        np.ascontiguousarray(mat, dtype=np.float32),
        np.ascontiguousarray(query, dtype=np.float64),
    )


def topk_numba(mat: np.ndarray, query: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    return _topk_nb(
        np.ascontiguousarray(mat, dtype=np.float32),
        np.ascontiguousarray(query, dtype=np.float64),
        k,
    )


_BACKENDS = {
    "numpy": (topk_numpy, dot_scores_numpy),
    "numba": (topk_numba, dot_scores_numba),
}


def _default_backend() -> str:
    env = os.environ.get("FEDRAG_KERNELS", "").strip().lower()
    if env in _BACKENDS:
        return env
    if env:
        raise ValueError(f"FEDRAG_KERNELS must be one of {sorted(_BACKENDS)}, got {env!r}")
    return "numba" if _NUMBA_OK else "numpy"


_active = _default_backend()


def active_backend() -> str:
    return _active


def set_backend(name: str) -> None:
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; choose from {sorted(_BACKENDS)}")
    if name == "numba" and not _NUMBA_OK:
        raise ValueError("numba backend requested but numba is not importable")
    global _active
    _active = name


def topk_dot(mat: np.ndarray, query: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices and float64 scores of the top-k rows of ``mat`` for ``query``.

    ``mat`` is float32 (n, d), ``query`` float64 (d,), k >= 1. Returns at
    most n rows, ordered by score descending then row index ascending.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if mat.ndim != 2 or query.ndim != 1 or mat.shape[1] != query.shape[0]:
        raise ValueError(f"shape mismatch: mat {mat.shape} vs query {query.shape}")
    return _BACKENDS[_active][0](mat, query, k)


def dot_scores(mat: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Float64 scores of every row of ``mat`` against ``query``."""
    if mat.ndim != 2 or query.ndim != 1 or mat.shape[1] != query.shape[0]:
        raise ValueError(f"shape mismatch: mat {mat.shape} vs query {query.shape}")
    return _BACKENDS[_active][1](mat, query)


def warmup() -> None:
    """Trigger JIT compilation so first-query latency is not skewed."""
    if _active == "numba":
        m = np.ones((2, 4), dtype=np.float32)
        q = np.ones(4, dtype=np.float64)
        topk_numba(m, q, 1)
        dot_scores_numba(m, q)
