"""Summaries of posterior cluster-assignment draws."""

import numpy as np


def coclustering_matrix(z):
    """Binary tie matrix of one assignment vector."""
    z = np.asarray(z)
    return (z[:, None] == z[None, :]).astype(float)


def coclustering_mean(z_draws):
    """Mean co-clustering matrix: entry (i, j) is the tie frequency."""
    z_draws = np.atleast_2d(np.asarray(z_draws))
    if z_draws.shape[0] < 1:
        raise ValueError("need at least one assignment draw")
    ties = z_draws[:, :, None] == z_draws[:, None, :]
    return ties.mean(axis=0)


def representative_draw(z_draws):
    """Index of the draw whose tie matrix is Frobenius-closest to the mean.

    Distances are computed on the upper triangle only (the diagonal is
    constant); ties break towards the smallest index. L^2 times the
    squared distance is an integer (tie entries are 0/1 and mean entries
    are multiples of 1/L), so the argmin is taken in exact integer
    arithmetic and ties resolve deterministically.
    """
    z_draws = np.atleast_2d(np.asarray(z_draws))
    L, n = z_draws.shape
    iu = np.triu_indices(n, k=1)
    ties_u = (z_draws[:, :, None] == z_draws[:, None, :])[:, iu[0], iu[1]]
    ties_u = ties_u.astype(np.int64)
    counts_u = ties_u.sum(axis=0)
    dist2 = ((L * ties_u - counts_u) ** 2).sum(axis=1)
    return int(np.argmin(dist2))


def alive_cluster_counts(z_draws):
    """Number of distinct cluster labels in each draw."""
    z_draws = np.atleast_2d(np.asarray(z_draws))
    return np.array([np.unique(z).size for z in z_draws])
