"""
Dense symmetric eigensolver and dominant-eigenvalue estimation.

Everything else in the package goes through these two routines whenever it
needs a spectrum: the relevance decomposition of a dataset, the spectra of
Gram matrices, and the Hessian estimate behind the step-size guard.

symEigen uses cyclic Jacobi rotations. The matrices met here are at most a few
hundred wide, so the simple O(n^3)-per-sweep scheme is fast enough and keeps the
output deterministic for identical input.
"""
import logging
import math
from collections import namedtuple

import numpy as np

logger = logging.getLogger(__name__)

SymEigen = namedtuple("SymEigen", ["values", "vectors"])
SymEigen.__doc__ = "Eigenvalues sorted descending, with matching orthonormal column vectors."

PowerEstimate = namedtuple("PowerEstimate", ["value", "converged", "iterations"])
PowerEstimate.__doc__ = "Largest eigenvalue estimate of a symmetric operator."


def validateSymmetric(matrix, tol=1e-10):
    """Return matrix as a float array, raising ValueError unless it is square, finite and symmetric."""
    matrix = np.array(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError("matrix must be square, got shape {}".format(matrix.shape))
    if not np.all(np.isfinite(matrix)):
        raise ValueError("matrix has non-finite entries")
    scale = max(1.0, np.max(np.abs(matrix), initial=0.0))
    asymmetry = np.max(np.abs(matrix - matrix.T), initial=0.0)
    if asymmetry > tol * scale:
        raise ValueError("matrix is not symmetric (max |m - m^T| = {:.3e})".format(asymmetry))
    return matrix


def symEigen(matrix, tol=1e-14, maxSweeps=100):
    """
    Diagonalise a real symmetric matrix with cyclic Jacobi rotations.

    Each sweep visits every (p, q) pair above the diagonal once and applies the
    rotation that zeroes a[p, q]. Sweeps stop once the off-diagonal Frobenius
    norm falls below tol times the norm of the whole matrix.

    Returns a SymEigen with values in non-increasing order and the eigenvectors
    as the columns of `vectors`.
    """
    a = validateSymmetric(matrix)
    n = a.shape[0]
    # Symmetrise exactly so rotations see a single value per pair
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    total = np.linalg.norm(a)
    previous = math.inf

    for sweep in range(maxSweeps):
        offDiagonal = math.sqrt(max(0.0, np.sum(a**2) - np.sum(np.diag(a)**2)))
        if offDiagonal <= tol * total:
            break
        if offDiagonal >= previous:
            # stalled at rounding level
            break
        previous = offDiagonal
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c

                colP = a[:, p].copy()
                colQ = a[:, q].copy()
                a[:, p] = c * colP - s * colQ
                a[:, q] = s * colP + c * colQ
                rowP = a[p, :].copy()
                rowQ = a[q, :].copy()
                a[p, :] = c * rowP - s * rowQ
                a[q, :] = s * rowP + c * rowQ
                a[p, q] = a[q, p] = 0.0

                vecP = v[:, p].copy()
                vecQ = v[:, q].copy()
                v[:, p] = c * vecP - s * vecQ
                v[:, q] = s * vecP + c * vecQ
    else:
        logger.warning("Jacobi sweeps did not converge after %d sweeps", maxSweeps)

    values = np.diag(a).copy()
    order = np.argsort(-values, kind="stable")
    return SymEigen(values[order], v[:, order])


def dominantEigenvalue(apply, dim, iters=2000, tol=1e-9):
    """
    Estimate the largest eigenvalue of a symmetric linear operator by power iteration.

    `apply` maps a length-dim vector to a length-dim vector. Iteration starts
    from a fixed pseudo-random unit vector and stops once the residual
    |A v - rho v| is at most tol * |A v|, rho being the Rayleigh quotient.

    When that pass ends on a negative eigenvalue, or never settles (eigenvalues
    of equal magnitude and opposite sign), a second pass runs on A + m I where
    m = |A v| estimates the largest magnitude. Every eigenvalue of the shifted
    operator is then non-negative, so its dominant one is lambda_max + m.

    A zero operator returns 0, converged.
    """
    if dim < 1:
        raise ValueError("operator dimension must be at least 1")

    estimate, magnitude = _powerIterate(apply, dim, iters, tol)
    if estimate.converged and estimate.value >= 0.0:
        return estimate
    if magnitude == 0.0:
        return PowerEstimate(0.0, True, estimate.iterations)

    logger.debug("power iteration ended at %.6g (converged %s): shifting by %.6g",
                 estimate.value, estimate.converged, magnitude)
    shifted, _ = _powerIterate(lambda vector: apply(vector) + magnitude * vector, dim, iters, tol)
    return PowerEstimate(shifted.value - magnitude, shifted.converged,
                         estimate.iterations + shifted.iterations)


def _powerIterate(apply, dim, iters, tol):
    """
    Run plain power iteration.

    Returns the PowerEstimate of the Rayleigh quotient and |A v| at the last
    iterate, the latter being a lower bound on the largest eigenvalue magnitude.
    """
    vector = np.random.default_rng(0).standard_normal(dim)
    vector /= np.linalg.norm(vector)
    value = 0.0
    norm = 0.0
    for iteration in range(1, iters + 1):
        image = np.asarray(apply(vector), dtype=float)
        norm = float(np.linalg.norm(image))
        if norm == 0.0:
            return PowerEstimate(0.0, True, iteration), 0.0
        value = float(vector @ image)
        residual = float(np.linalg.norm(image - value * vector))
        if residual <= tol * norm:
            return PowerEstimate(value, True, iteration), norm
        vector = image / norm
    return PowerEstimate(value, False, iters), norm
