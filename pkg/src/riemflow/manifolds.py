"""Riemannian primitives for SPD matrices and unit quaternions.

Both manifolds are handled through goal-anchored logarithmic/exponential
maps: ``log(g, p)`` takes a point to the tangent space at ``g`` and
``exp(g, t)`` takes it back.  SPD tangent matrices are flattened to vectors
with the Mandel convention so that the Euclidean norm of the vector equals
the Frobenius norm of the matrix.

Quaternion conventions: scalar-first storage ``(nu, x, y, z)``, Hamilton
product, and ``log(g, p) = Log(p * conj(g))`` with the pure-vector part of
the quaternion logarithm returned as a 3-vector.
"""

import numpy as np

from .exceptions import (
    AntipodalPairError,
    DimensionMismatchError,
    EmptySequenceError,
    NonFiniteError,
    NotPositiveDefiniteError,
    ShapeMismatchError,
)
from .linalg import (
    EIG_REJECT_FLOOR,
    check_square,
    expm,
    invsqrtm_spd,
    logm,
    sqrtm_spd,
    sym_eig,
    symmetrize,
)

SPD = "spd"
UNIT_QUATERNION = "uq"
MANIFOLDS = (SPD, UNIT_QUATERNION)

# Below this, the vector part of a quaternion is treated as zero.
_UQ_VEC_TOL = 1e-12
# |dot| below this marks a numerically antipodal pair.
_UQ_ANTIPODAL_TOL = 1e-12

IDENTITY_QUATERNION = np.array([1.0, 0.0, 0.0, 0.0])


# ---------------------------------------------------------------------------
# validation helpers

def check_spd(p, name="point"):
    """Validate an SPD point: square, finite, symmetric, eigenvalues > 0.

    Returns the symmetrized array.
    """
    p = check_square(p, name)
    if not np.allclose(p, p.T, rtol=0.0, atol=1e-10 * max(1.0, np.abs(p).max())):
        raise NotPositiveDefiniteError(f"{name} is not symmetric")
    p = symmetrize(p)
    w, _ = sym_eig(p)
    if w.min() <= EIG_REJECT_FLOOR:
        raise NotPositiveDefiniteError(
            f"{name} is not positive definite, min eigenvalue {w.min():.3e}"
        )
    return p


def check_unit_quaternion(q, name="quaternion"):
    """Validate and renormalize a quaternion to unit length.

    Accepts any 4-vector of finite entries with norm bounded away from
    zero and returns ``q / ||q||``.
    """
    q = np.asarray(q, dtype=float)
    if q.shape != (4,):
        raise ShapeMismatchError(f"{name} must have shape (4,), got {q.shape}")
    if not np.isfinite(q).all():
        raise NonFiniteError(f"{name} contains non-finite entries")
    n = float(np.linalg.norm(q))
    if n < 1e-8:
        raise ShapeMismatchError(f"{name} has near-zero norm {n:.3e}")
    return q / n


def check_tangent(t, dim, name="tangent"):
    t = np.asarray(t, dtype=float)
    if t.shape != (dim,):
        raise ShapeMismatchError(f"{name} must have shape ({dim},), got {t.shape}")
    if not np.isfinite(t).all():
        raise NonFiniteError(f"{name} contains non-finite entries")
    return t


# ---------------------------------------------------------------------------
# Mandel vectorization

def mandel_dim(d):
    """Dimension of the Mandel vector for symmetric d x d matrices."""
    return d * (d + 1) // 2


def mandel_vec(t):
    """Flatten a symmetric matrix to a Mandel vector.

    Diagonal entries come first, then the strict upper triangle in row-major
    order scaled by sqrt(2).  The map is an isometry:
    ``norm(mandel_vec(t)) == frobenius(t)``.
    """
    t = check_square(t, "tangent matrix")
    d = t.shape[0]
    iu, ju = np.triu_indices(d, k=1)
    return np.concatenate([np.diag(t), np.sqrt(2.0) * t[iu, ju]])


def mandel_unvec(v, d):
    """Inverse of :func:`mandel_vec` for dimension ``d``."""
    v = np.asarray(v, dtype=float)
    if v.shape != (mandel_dim(d),):
        raise ShapeMismatchError(
            f"Mandel vector for d={d} must have shape ({mandel_dim(d)},), got {v.shape}"
        )
    t = np.zeros((d, d))
    t[np.diag_indices(d)] = v[:d]
    iu, ju = np.triu_indices(d, k=1)
    t[iu, ju] = v[d:] / np.sqrt(2.0)
    t[ju, iu] = t[iu, ju]
    return t


# ---------------------------------------------------------------------------
# SPD manifold

class SpdChart:
    """Log/Exp maps anchored at a fixed SPD point ``g``.

    Caches ``g^(1/2)`` and ``g^(-1/2)`` so repeated maps at the same anchor
    cost one eigendecomposition each.
    """

    def __init__(self, g):
        self.g = check_spd(g, "anchor")
        self.d = self.g.shape[0]
        self.sqrt = sqrtm_spd(self.g)
        self.invsqrt = invsqrtm_spd(self.g)

    def log(self, p):
        """Tangent matrix at ``g`` pointing toward ``p``."""
        p = check_spd(p, "point")
        if p.shape != self.g.shape:
            raise DimensionMismatchError(
                f"point has shape {p.shape}, anchor has {self.g.shape}"
            )
        inner = symmetrize(self.invsqrt @ p @ self.invsqrt)
        return symmetrize(self.sqrt @ logm(inner) @ self.sqrt)

    def exp(self, t):
        """Point reached from ``g`` along tangent matrix ``t``."""
        t = check_square(t, "tangent")
        if t.shape != self.g.shape:
            raise DimensionMismatchError(
                f"tangent has shape {t.shape}, anchor has {self.g.shape}"
            )
        t = symmetrize(t)
        inner = symmetrize(self.invsqrt @ t @ self.invsqrt)
        return symmetrize(self.sqrt @ expm(inner) @ self.sqrt)


def spd_log(g, p):
    """One-shot SPD logarithmic map; use :class:`SpdChart` for repeated calls."""
    return SpdChart(g).log(p)


def spd_exp(g, t):
    """One-shot SPD exponential map; use :class:`SpdChart` for repeated calls."""
    return SpdChart(g).exp(t)


# ---------------------------------------------------------------------------
# unit quaternion manifold

def quat_multiply(a, b):
    """Hamilton product of two quaternions (scalar-first)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    w = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
    x = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2]
    y = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1]
    z = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]
    return np.array([w, x, y, z])


def quat_conjugate(a):
    """Quaternion conjugate (negated vector part)."""
    a = np.asarray(a, dtype=float)
    return np.array([a[0], -a[1], -a[2], -a[3]])


def _quat_log_vec(q):
    """Vector part of Log(q) for unit q, in [0, pi) radians of half-angle."""
    nu = np.clip(q[0], -1.0, 1.0)
    u = q[1:]
    un = float(np.linalg.norm(u))
    if un < _UQ_VEC_TOL:
        return np.zeros(3)
    return np.arccos(nu) * (u / un)


def uq_log(g, p):
    """Logarithmic map on the unit quaternion sphere.

    Callers should keep ``p`` on the same hemisphere as ``g`` (positive dot
    product), otherwise the returned geodesic is the long way around.

    Parameters
    ----------
    g, p : ndarray of shape (4,)
        Unit quaternions, scalar-first.

    Returns
    -------
    ndarray of shape (3,)
        Tangent vector at ``g`` with ``norm <= pi``.
    """
    g = check_unit_quaternion(g, "anchor")
    p = check_unit_quaternion(p, "point")
    rel = quat_multiply(p, quat_conjugate(g))
    return _quat_log_vec(rel)


def uq_exp(g, t):
    """Exponential map on the unit quaternion sphere.

    Parameters
    ----------
    g : ndarray of shape (4,)
        Unit quaternion anchor.
    t : ndarray of shape (3,)
        Tangent vector with ``norm < pi``.

    Returns
    -------
    ndarray of shape (4,)
        Unit quaternion, renormalized after construction.
    """
    g = check_unit_quaternion(g, "anchor")
    t = check_tangent(t, 3, "tangent")
    n = float(np.linalg.norm(t))
    if n < _UQ_VEC_TOL:
        rel = IDENTITY_QUATERNION.copy()
    else:
        rel = np.concatenate([[np.cos(n)], np.sin(n) * (t / n)])
    q = quat_multiply(rel, g)
    return q / np.linalg.norm(q)


def align_hemisphere(seq):
    """Sign-align a quaternion sequence so consecutive dot products are positive.

    Each element is either kept or negated (same orientation either way);
    the first element keeps its sign.  Returns a copy.

    Raises
    ------
    AntipodalPairError
        When a consecutive dot product has magnitude below 1e-12, so the
        sign choice is ambiguous.
    """
    seq = np.asarray(seq, dtype=float)
    if seq.ndim != 2 or seq.shape[1] != 4:
        raise ShapeMismatchError(f"expected shape (M, 4), got {seq.shape}")
    if seq.shape[0] == 0:
        raise EmptySequenceError("cannot align an empty sequence")
    out = seq.copy()
    for i in range(1, out.shape[0]):
        d = float(np.dot(out[i - 1], out[i]))
        if abs(d) < _UQ_ANTIPODAL_TOL:
            raise AntipodalPairError(
                f"consecutive quaternions {i - 1} and {i} are orthogonal, "
                "hemisphere sign is ambiguous"
            )
        if d < 0.0:
            out[i] = -out[i]
    return out


# ---------------------------------------------------------------------------
# distances

def led_distance(s, s_hat):
    """Log-Euclidean distance between two SPD matrices."""
    return float(np.linalg.norm(logm(s) - logm(s_hat), ord="fro"))


def lqd_distance(q, q_hat):
    """Log-quaternion distance ``2 * norm(Log(q * conj(q_hat)))`` in [0, 2*pi]."""
    q = check_unit_quaternion(q, "q")
    q_hat = check_unit_quaternion(q_hat, "q_hat")
    rel = quat_multiply(q, quat_conjugate(q_hat))
    return float(2.0 * np.linalg.norm(_quat_log_vec(rel)))


def goal_distance(manifold, p, g):
    """Distance used for goal checks: LEd for SPD, half LQd for quaternions."""
    if manifold == SPD:
        return led_distance(p, g)
    if manifold == UNIT_QUATERNION:
        return 0.5 * lqd_distance(p, g)
    raise ShapeMismatchError(f"unknown manifold tag {manifold!r}")
