"""
Dense, deterministic linear algebra behind subspace alignment.

Every function here is pure: inputs are never modified and identical inputs give
bitwise-identical outputs.
"""
import logging
import warnings

import numpy as np
import scipy.linalg

from . import errors
from .types import AlignmentTransform, SubspaceBasis

logger = logging.getLogger(__name__)

# eigenvalues closer than this are treated as tied
TIE_TOLERANCE = 1e-10
NEGATIVE_EIGENVALUE_TOLERANCE = 1e-10


def as_samples(x) -> np.ndarray:
    """Validate a sample matrix: 2-D, non-empty, all entries finite"""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise errors.DimensionMismatch(
            f"expected a non-empty 2-D matrix, got {x.shape}"
        )
    if not np.isfinite(x).all():
        raise errors.NumericalFailure("sample matrix has non-finite entries")
    return x


def effective_dim(d: int, n: int, D: int, *, clamp: bool = True) -> int:
    """
    Largest usable subspace dimension for n samples in D ambient dimensions

    :param d: requested dimension
    :param n: number of samples
    :param D: ambient dimension
    :param clamp: reduce d to min(n - 1, D) with a warning instead of failing

    :returns: effective dimension

    :raises DegenerateInput: if n < 2
    :raises DimensionTooLarge: if d does not fit and clamp is off
    """
    if d < 1:
        raise errors.InvalidConfig(f"subspace dimension must be positive, got {d}")
    if n < 2:
        raise errors.DegenerateInput(f"got {n} sample(s)")

    limit = min(n - 1, D)
    if d <= limit:
        return d
    if not clamp:
        raise errors.DimensionTooLarge(f"d={d}, n={n}, D={D}")

    message = f"subspace dimension {d} reduced to {limit} (n={n}, D={D})"
    warnings.warn(message, errors.DimensionClamped, stacklevel=3)
    logger.info(message)
    return limit


def _normalize_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so that their largest-magnitude entry is non-negative"""
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.where(vectors[pivots, np.arange(vectors.shape[1])] < 0, -1.0, 1.0)
    return vectors * signs


def _component_order(eigenvalues: np.ndarray, vectors: np.ndarray) -> list:
    order = np.argsort(-eigenvalues, kind='stable').tolist()

    def by_vector(run):
        return sorted(run, key=lambda j: tuple(-vectors[:, j]))

    result, run = [], [order[0]]
    for j in order[1:]:
        if eigenvalues[run[-1]] - eigenvalues[j] < TIE_TOLERANCE:
            run.append(j)
        else:
            result.extend(by_vector(run))
            run = [j]
    result.extend(by_vector(run))

    return result


def fit_pca(x, d: int) -> SubspaceBasis:
    """
    Fit the d leading principal components of a sample matrix

    Uses a full symmetric eigendecomposition of the covariance (normalized by
    n - 1), or a thin SVD of the centered data when there are fewer samples than
    dimensions. Columns are sign-normalized so the result is reproducible.

    :param x: n x D sample matrix
    :param d: number of components

    :returns: centered orthonormal basis

    :raises DegenerateInput: if n < 2
    :raises DimensionTooLarge: if d > min(n - 1, D)
    """
    x = as_samples(x)
    n, D = x.shape

    if n < 2:
        raise errors.DegenerateInput(f"got {n} sample(s)")
    if d < 1 or d > min(n - 1, D):
        raise errors.DimensionTooLarge(f"d={d}, n={n}, D={D}")

    mean = x.mean(axis=0)
    centered = x - mean

    try:
        if n < D:
            _, singular, vt = scipy.linalg.svd(
                centered, full_matrices=False, lapack_driver='gesvd'
            )
            eigenvalues, vectors = singular ** 2 / (n - 1), vt.T
        else:
            covariance = centered.T @ centered / (n - 1)
            eigenvalues, vectors = scipy.linalg.eigh(covariance)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise errors.NumericalFailure(str(e)) from e

    if eigenvalues.min() < -NEGATIVE_EIGENVALUE_TOLERANCE:
        logger.warning("clamping negative eigenvalue %.3e", eigenvalues.min())
    eigenvalues = np.clip(eigenvalues, 0.0, None)

    vectors = _normalize_signs(vectors)
    order = _component_order(eigenvalues, vectors)[:d]

    return SubspaceBasis(
        components=np.ascontiguousarray(vectors[:, order]),
        mean=mean,
        eigenvalues=eigenvalues[order],
    )


def project(basis: SubspaceBasis, x) -> np.ndarray:
    """
    Map samples onto a basis: (x - mean) . components

    :raises DimensionMismatch: if x does not have D columns
    """
    x = as_samples(x)
    if x.shape[1] != basis.ambient_dim:
        raise errors.DimensionMismatch(
            f"x has {x.shape[1]} columns, basis expects {basis.ambient_dim}"
        )
    return (x - basis.mean) @ basis.components


def reconstruct(basis: SubspaceBasis, z) -> np.ndarray:
    """
    Map subspace coordinates back to the ambient space: z . components^T + mean

    :raises DimensionMismatch: if z does not have d columns
    """
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or z.shape[1] != basis.dim:
        raise errors.DimensionMismatch(
            f"z has shape {z.shape}, basis has {basis.dim} components"
        )
    return z @ basis.components.T + basis.mean


def solve_alignment(c_s: SubspaceBasis, c_t: SubspaceBasis) -> AlignmentTransform:
    """
    Closed-form minimizer of ||C_S M - C_T||_F, i.e. M* = C_S^T C_T

    :raises DimensionMismatch: if the bases differ in d or D
    """
    if c_s.components.shape != c_t.components.shape:
        raise errors.DimensionMismatch(
            f"source basis {c_s.components.shape}, target basis {c_t.components.shape}"
        )
    return AlignmentTransform(m=c_s.components.T @ c_t.components)
