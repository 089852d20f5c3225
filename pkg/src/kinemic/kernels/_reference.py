"""Pure NumPy implementations of the hot kernels.

These are the import-time fallback when the compiled extension is missing.
Both backends must produce bit-identical float64 results, so every operation
here is written with the same accumulation order as the C loops: window sums
accumulate left to right (``cumsum`` along the window axis is a sequential
scan), and bone-length math uses the same expression tree componentwise.
"""

from __future__ import annotations

import numpy as np

_ROW_BLOCK = 4096  # caps sliding-window scratch memory


def window_scores(weights: np.ndarray, m: int) -> np.ndarray:
    """Sequential sum of every length-m window of ``weights``.

    Returns an array of n-m+1 scores where score[i] = w[i] + ... + w[i+m-1],
    accumulated left to right in float64.
    """
    w = np.ascontiguousarray(weights, dtype=np.float64)
    n = w.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"window length {m} not in [1, {n}]")
    views = np.lib.stride_tricks.sliding_window_view(w, m)
    out = np.empty(n - m + 1, dtype=np.float64)
    for start in range(0, n - m + 1, _ROW_BLOCK):
        block = views[start : start + _ROW_BLOCK]
        out[start : start + _ROW_BLOCK] = block.cumsum(axis=1)[:, -1]
    return out


def best_window(weights: np.ndarray, m: int) -> tuple[int, float]:
    """Leftmost window start maximizing the sequential window sum."""
    scores = window_scores(weights, m)
    i = int(np.argmax(scores))  # first occurrence on ties
    return i, float(scores[i])


def rescale_bones(
    positions: np.ndarray,
    parents: np.ndarray,
    order: np.ndarray,
    ref_lengths: np.ndarray,
    rest_dirs: np.ndarray,
    eps: float = 1e-12,
) -> np.ndarray:
    """Rebuild joint positions with every bone set to its reference length.

    Walks ``order`` (parents before children); each joint is placed at its
    already-rescaled parent plus the reference length along the original
    bone direction.  A degenerate bone (norm < eps) falls back to the rest
    direction.  Root positions are kept as-is.
    """
    pos = np.ascontiguousarray(positions, dtype=np.float64)
    out = pos.copy()
    for j in (int(x) for x in order):
        p = int(parents[j])
        dx = pos[:, j, 0] - pos[:, p, 0]
        dy = pos[:, j, 1] - pos[:, p, 1]
        dz = pos[:, j, 2] - pos[:, p, 2]
        nrm = np.sqrt((dx * dx + dy * dy) + dz * dz)
        deg = nrm < eps
        safe = np.where(deg, 1.0, nrm)
        ux = np.where(deg, rest_dirs[j, 0], dx / safe)
        uy = np.where(deg, rest_dirs[j, 1], dy / safe)
        uz = np.where(deg, rest_dirs[j, 2], dz / safe)
        r = ref_lengths[j]
        out[:, j, 0] = out[:, p, 0] + r * ux
        out[:, j, 1] = out[:, p, 1] + r * uy
        out[:, j, 2] = out[:, p, 2] + r * uz
    return out
