"""Dense symmetric linear-algebra kernels.

Everything here operates on small (d <= ~10) real symmetric matrices.
Eigendecomposition uses cyclic Jacobi rotations, which are deterministic,
branch-free across platforms and accurate enough for the matrix functions
built on top (log, exp, square root) at this size.
"""

import numpy as np

from .exceptions import NonFiniteError, NotPositiveDefiniteError, ShapeMismatchError

# Eigenvalues at or below this are treated as a violation of positive
# definiteness when a matrix claims to be SPD.
EIG_REJECT_FLOOR = 1e-12

# Eigenvalue floor used when repairing an indefinite matrix.
SPD_CLIP_FLOOR = 1e-10

_JACOBI_MAX_SWEEPS = 64


def check_square(a, name="matrix"):
    """Return ``a`` as a float array after checking it is square and finite."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatchError(f"{name} must be square, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise NonFiniteError(f"{name} contains non-finite entries")
    return a


def symmetrize(a):
    """Exact symmetric part (a + a.T) / 2."""
    return (a + a.T) / 2.0


def frobenius(a):
    """Frobenius norm."""
    return float(np.sqrt(np.sum(np.asarray(a, dtype=float) ** 2)))


def _offdiag_norm(a):
    mask = ~np.eye(a.shape[0], dtype=bool)
    return np.sqrt(np.sum(a[mask] ** 2))


def sym_eig(a):
    """Eigendecomposition of a real symmetric matrix by cyclic Jacobi sweeps.

    Parameters
    ----------
    a : ndarray of shape (d, d)
        Symmetric matrix.  Only the symmetric part is used.

    Returns
    -------
    w : ndarray of shape (d,)
        Eigenvalues in ascending order.
    v : ndarray of shape (d, d)
        Orthonormal eigenvectors as columns, ``a == v @ diag(w) @ v.T``.
    """
    a = check_square(a, "a")
    n = a.shape[0]
    m = symmetrize(a).copy()
    v = np.eye(n)
    if n == 1:
        return m[0].copy(), v

    scale = np.abs(m).max()
    if scale == 0.0:
        return np.zeros(n), v
    # Rotations stop once the remaining off-diagonal mass is at rounding level.
    stop = n * np.finfo(float).eps * scale

    for _ in range(_JACOBI_MAX_SWEEPS):
        if _offdiag_norm(m) <= stop:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = m[p, q]
                if abs(apq) <= stop / n:
                    continue
                theta = (m[q, q] - m[p, p]) / (2.0 * apq)
                t = np.sign(theta) if theta != 0.0 else 1.0
                t /= abs(theta) + np.sqrt(theta * theta + 1.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p = m[:, p].copy()
                col_q = m[:, q].copy()
                m[:, p] = c * col_p - s * col_q
                m[:, q] = s * col_p + c * col_q
                row_p = m[p, :].copy()
                row_q = m[q, :].copy()
                m[p, :] = c * row_p - s * row_q
                m[q, :] = s * row_p + c * row_q
                m[p, q] = 0.0
                m[q, p] = 0.0
                vec_p = v[:, p].copy()
                vec_q = v[:, q].copy()
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q

    w = np.diag(m).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def _sym_apply(a, fn, name, require_spd=False, floor=EIG_REJECT_FLOOR):
    a = check_square(a, name)
    w, v = sym_eig(a)
    if require_spd and w.min() <= floor:
        raise NotPositiveDefiniteError(
            f"{name} must be positive definite, min eigenvalue {w.min():.3e}"
        )
    return symmetrize((v * fn(w)) @ v.T)


def logm(a):
    """Matrix logarithm of an SPD matrix."""
    return _sym_apply(a, np.log, "logm argument", require_spd=True)


def expm(a):
    """Matrix exponential of a symmetric matrix."""
    return _sym_apply(a, np.exp, "expm argument")


def sqrtm_spd(a):
    """Principal square root of an SPD matrix."""
    return _sym_apply(a, np.sqrt, "sqrtm argument", require_spd=True)


def invsqrtm_spd(a):
    """Inverse principal square root of an SPD matrix."""
    return _sym_apply(a, lambda w: 1.0 / np.sqrt(w), "invsqrtm argument", require_spd=True)


def is_spd(a, floor=EIG_REJECT_FLOOR):
    """True when the symmetric part of ``a`` has all eigenvalues above ``floor``."""
    a = check_square(a, "a")
    w, _ = sym_eig(a)
    return bool(w.min() > floor)


def nearest_spd(a):
    """Project a square matrix onto the SPD cone.

    Symmetrizes, then clips eigenvalues from below at ``SPD_CLIP_FLOOR``.
    The reconstruction is re-verified and, if rounding pushed an eigenvalue
    back under the floor, re-clipped at a marginally raised level.  A matrix
    that already passes verification is returned after symmetrization only,
    which makes the map exactly idempotent: a second application returns the
    same floats.

    Parameters
    ----------
    a : ndarray of shape (d, d)

    Returns
    -------
    ndarray of shape (d, d)
        Symmetric matrix with min eigenvalue >= ``SPD_CLIP_FLOOR``.
    """
    a = check_square(a, "a")
    s = symmetrize(a)
    w, v = sym_eig(s)
    if w.min() >= SPD_CLIP_FLOOR:
        return s
    # Margin grows with the iteration count so the verify loop always exits;
    # the first pass clips at exactly the floor.
    bump = 16.0 * np.finfo(float).eps * max(frobenius(s), 1.0)
    for it in range(32):
        w = np.maximum(w, SPD_CLIP_FLOOR + it * bump)
        s = symmetrize((v * w) @ v.T)
        w, v = sym_eig(s)
        if w.min() >= SPD_CLIP_FLOOR:
            return s
    raise NotPositiveDefiniteError("SPD projection failed to stabilize")
