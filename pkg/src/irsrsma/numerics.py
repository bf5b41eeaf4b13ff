"""Dense complex linear-algebra kernels shared by every solver module.

All functions here are pure and deterministic. Tolerances are module-level
named constants; callers that carry a config may override them per call.
"""

import numpy as np

HERMITIAN_ATOL = 1e-10      # max |A - A^H| entry accepted by the eig kernels
RECONSTRUCT_RTOL = 1e-8     # relative Frobenius residual of U diag(w) U^H
UNIT_MODULUS_ATOL = 1e-9    # slack on |v_n| = 1 for phase vectors
PSD_SLACK = 1e-8            # eigenvalue slack when asserting PSD-ness
RANK_ONE_TOL = 1e-4         # tr(V) - ||V||_2 threshold for rank-one acceptance
FD_GUARD = 1e-12            # denominator guard in relative gradient errors


class ValidationError(ValueError):
    """An input violates a documented precondition."""


class NumericalError(RuntimeError):
    """An iterative kernel failed to converge or hit a singular system."""


def hermitian_eig(a, atol=HERMITIAN_ATOL):
    """Eigendecomposition of a Hermitian matrix with eigenvalues descending.

    Returns (w, u) such that a = u @ diag(w) @ u.conj().T within
    RECONSTRUCT_RTOL relative Frobenius error and w[0] >= w[1] >= ...
    """
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {a.shape}")
    if np.max(np.abs(a - a.conj().T)) > atol:
        raise ValidationError("matrix is not Hermitian within tolerance")
    w, u = np.linalg.eigh(a)
    return np.ascontiguousarray(w[::-1]), np.ascontiguousarray(u[:, ::-1])


def psd_project(a, atol=HERMITIAN_ATOL):
    """Nearest PSD matrix in Frobenius norm: clip negative eigenvalues."""
    w, u = hermitian_eig(a, atol=atol)
    out = (u * np.maximum(w, 0.0)) @ u.conj().T
    # re-Hermitize to kill rounding drift from the two matrix products
    return 0.5 * (out + out.conj().T)


def fd_gradient_check(f, x, analytic_grad, h=1e-5):
    """Max relative error of `analytic_grad` against central differences of f.

    x is a real parameter vector. Per coordinate the error is
    |central difference - analytic| / (|analytic| + 1e-12); the max over
    coordinates is returned. Raises if f is non-finite at any probe point.
    """
    x = np.asarray(x, dtype=float)
    g = np.asarray(analytic_grad, dtype=float)
    if g.shape != x.shape:
        raise ValidationError(f"gradient shape {g.shape} != point shape {x.shape}")
    worst = 0.0
    for idx in range(x.size):
        step = np.zeros_like(x)
        step.flat[idx] = h
        fp = f(x + step)
        fm = f(x - step)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValidationError("objective not finite at a finite-difference probe")
        central = (fp - fm) / (2.0 * h)
        err = abs(central - g.flat[idx]) / (abs(g.flat[idx]) + FD_GUARD)
        worst = max(worst, err)
    return worst
