"""Small dense linear-algebra helpers sharing one numerical rank convention."""

from __future__ import annotations

import numpy as np
import scipy.linalg

# Singular values below RANK_RTOL * (largest singular value) count as zero.
RANK_RTOL = 1e-10


def numerical_rank(matrix: np.ndarray, rtol: float = RANK_RTOL) -> int:
    """
    Rank of a matrix under the relative singular value cutoff.

    :param matrix: Any 2-D array.
    :param rtol: Relative cutoff.
    :return: The number of singular values above the cutoff.
    """
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.size == 0:
        return 0
    singular_values = scipy.linalg.svdvals(matrix)
    if singular_values[0] == 0.0:
        return 0
    return int(np.sum(singular_values > rtol * singular_values[0]))


def range_and_null_space(
    matrix: np.ndarray, rtol: float = RANK_RTOL
) -> tuple[np.ndarray, np.ndarray]:
    """
    Orthonormal bases of the row space and of the null space of a matrix.

    :param matrix: Array of shape (m, n).
    :param rtol: Relative cutoff.
    :return: (row space basis of shape (n, r), null space basis of shape (n, n - r)).
    """
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    _, singular_values, vt = scipy.linalg.svd(matrix, full_matrices=True)
    rank = 0
    if singular_values.size and singular_values[0] > 0.0:
        rank = int(np.sum(singular_values > rtol * singular_values[0]))
    return vt[:rank].T, vt[rank:].T


def min_norm_solve(
    matrix: np.ndarray, rhs: np.ndarray, rtol: float = RANK_RTOL
) -> np.ndarray:
    """Minimum-norm least squares solution with the package rank cutoff."""
    solution, *_ = scipy.linalg.lstsq(
        np.atleast_2d(matrix), np.asarray(rhs, dtype=float), cond=rtol
    )
    return solution


def weighted_distance_to_span(
    target: np.ndarray,
    columns: np.ndarray,
    weights: np.ndarray,
    rtol: float = RANK_RTOL,
) -> tuple[float, np.ndarray]:
    """
    Distance of a vector from a column span in the weighted L2 norm.

    :param target: Vector of length n.
    :param columns: Array of shape (n, m); may be empty.
    :param weights: Positive weights of length n (reference probabilities).
    :param rtol: Relative rank cutoff.
    :return: (distance, coefficients of the best approximation).
    """
    target = np.asarray(target, dtype=float)
    root = np.sqrt(np.asarray(weights, dtype=float))
    columns = np.asarray(columns, dtype=float).reshape(target.size, -1)
    if columns.shape[1] == 0:
        return float(np.linalg.norm(root * target)), np.zeros(0)
    coefficients = min_norm_solve(root[:, None] * columns, root * target, rtol)
    residual = root * (target - columns @ coefficients)
    return float(np.linalg.norm(residual)), coefficients


def column_projector(columns: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """Euclidean orthogonal projector onto the column space of a matrix."""
    basis, _ = range_and_null_space(np.asarray(columns, dtype=float).T, rtol)
    return basis @ basis.T
