"""Pure-NumPy implementations of the hot kernels.

These are the reference implementations; svyconform._kernels._core provides
compiled equivalents with identical semantics. Both operate on plain float64
arrays and return the same values bit for bit (all accumulations are
sequential, matching np.add.accumulate).
"""

import numpy as np

# Relative slack on the cumulative-mass >= beta comparison. Guards against
# off-by-one steps caused by float summation error; can shift the selected
# step by at most one position when a cumulative weight sits within 1e-12
# (relatively) of the target mass.
CUM_RTOL = 1e-12


def padded_quantile_indices(cum_weights, total_weight, tail_weights, beta):
    """Index of the padded weighted quantile for a batch of tail weights.

    Parameters
    ----------
    cum_weights : (n,) float64
        Cumulative calibration weights in ascending score order.
    total_weight : float
        Sum of all calibration weights (== cum_weights[-1] up to rounding;
        passed explicitly so callers control how it was accumulated).
    tail_weights : (m,) float64
        One tail weight per query; each adds a point mass above every score.
    beta : float
        Target cumulative mass in (0, 1).

    Returns
    -------
    (m,) int64 indices into the sorted score array; an index equal to n
    means the quantile is the padding mass (unbounded).
    """
    cum_weights = np.ascontiguousarray(cum_weights, dtype=np.float64)
    tail_weights = np.ascontiguousarray(tail_weights, dtype=np.float64)
    targets = beta * (total_weight + tail_weights) * (1.0 - CUM_RTOL)
    return np.searchsorted(cum_weights, targets, side="left").astype(np.int64)


def ppswor_indices(sizes, n_draw, uniforms):
    """Sequential without-replacement draw proportional to remaining size.

    Each step inverts the cumulative sum of the not-yet-drawn sizes, taken
    in index order, at uniforms[i] * remaining_total. Returns 0-based
    indices of the selected units in draw order.
    """
    sizes = np.asarray(sizes, dtype=np.float64)
    remaining = sizes.copy()
    out = np.empty(n_draw, dtype=np.int64)
    for i in range(n_draw):
        cum = np.cumsum(remaining)
        u = uniforms[i] * cum[-1]
        j = int(np.searchsorted(cum, u, side="right"))
        # Rounding can push u to the total mass; back off to the last unit
        # still holding size (trailing drawn units have zero mass).
        if j >= remaining.shape[0]:
            j = remaining.shape[0] - 1
        while remaining[j] == 0.0 and j > 0:
            j -= 1
        out[i] = j
        remaining[j] = 0.0
    return out
