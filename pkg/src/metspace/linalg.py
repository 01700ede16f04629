"""Dense linear algebra for small symmetric matrices.

Every function accepts a single ``(d, d)`` matrix or a stack of shape
``(..., d, d)`` with ``d <= 4`` and works on the whole stack at once.
Eigendecompositions use a cyclic Jacobi iteration, which for these sizes
reaches machine precision in a handful of sweeps and is deterministic.
"""

from typing import NamedTuple

import numpy as np

from .errors import NonFinite, NotPositiveDefinite

EPS_SPD_REL = 1e-14
_MAX_SWEEPS = 30


class EigenDecomposition(NamedTuple):
    """Ascending eigenvalues and orthonormal eigenvectors (as columns)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def symmetrize(a):
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def eps_spd(a):
    """Singularity threshold ``1e-14 * trace(A) / dim`` for each matrix."""
    a = np.asarray(a, dtype=float)
    return EPS_SPD_REL * np.trace(a, axis1=-2, axis2=-1) / a.shape[-1]


def _check_finite(a):
    if not np.all(np.isfinite(a)):
        raise NonFinite("matrix entries contain NaN or Inf")


def _jacobi(a):
    """Cyclic Jacobi on a stack of symmetric matrices; returns (w, v) unsorted."""
    a = symmetrize(a).copy()
    n = a.shape[-1]
    v = np.broadcast_to(np.eye(n), a.shape).copy()
    if n == 1:
        return a[..., 0, :].copy(), v
    scale = np.sqrt(np.sum(a * a, axis=(-2, -1)))
    iu = np.triu_indices(n, 1)
    for _ in range(_MAX_SWEEPS):
        off = np.sqrt(np.sum(a[..., iu[0], iu[1]] ** 2, axis=-1))
        if np.all(off <= 1e-17 * scale):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[..., p, q]
                active = np.abs(apq) > 1e-300
                if not np.any(active):
                    continue
                app = a[..., p, p]
                aqq = a[..., q, q]
                safe = np.where(active, apq, 1.0)
                theta = (aqq - app) / (2.0 * safe)
                big = np.abs(theta) > 1e150
                theta_s = np.where(big, 1.0, theta)
                t = np.sign(theta_s) / (np.abs(theta_s) + np.sqrt(theta_s * theta_s + 1.0))
                t = np.where(theta_s == 0.0, 1.0, t)
                t = np.where(big, 0.5 / np.where(big, theta, 1.0), t)
                t = np.where(active, t, 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                c_ = c[..., None]
                s_ = s[..., None]
                # columns
                ap = a[..., :, p].copy()
                aq = a[..., :, q].copy()
                a[..., :, p] = c_ * ap - s_ * aq
                a[..., :, q] = s_ * ap + c_ * aq
                # rows
                ap = a[..., p, :].copy()
                aq = a[..., q, :].copy()
                a[..., p, :] = c_ * ap - s_ * aq
                a[..., q, :] = s_ * ap + c_ * aq
                a[..., p, q] = np.where(active, 0.0, a[..., p, q])
                a[..., q, p] = a[..., p, q]
                vp = v[..., :, p].copy()
                vq = v[..., :, q].copy()
                v[..., :, p] = c_ * vp - s_ * vq
                v[..., :, q] = s_ * vp + c_ * vq
    w = np.diagonal(a, axis1=-2, axis2=-1).copy()
    return w, v


def eig_sym(a) -> EigenDecomposition:
    """Eigendecomposition of symmetric matrices, eigenvalues ascending.

    Eigenvectors are normalised so their first non-negligible component is
    positive, which makes the output reproducible across platforms.

    Raises
    ------
    NonFinite
        If any entry is NaN or infinite.
    """
    a = np.asarray(a, dtype=float)
    _check_finite(a)
    w, v = _jacobi(a)
    order = np.argsort(w, axis=-1, kind="stable")
    w = np.take_along_axis(w, order, axis=-1)
    v = np.take_along_axis(v, order[..., None, :], axis=-1)
    # sign convention: first component with |x| > tol is positive
    tol = 1e-12
    first = np.argmax(np.abs(v) > tol, axis=-2)
    lead = np.take_along_axis(v, first[..., None, :], axis=-2)
    v = v * np.where(lead < 0, -1.0, 1.0)
    return EigenDecomposition(w, v)


def _reassemble(vecs, vals):
    return np.einsum("...ik,...k,...jk->...ij", vecs, vals, vecs)


def _require_pd(a, w):
    if np.any(w[..., 0] <= eps_spd(a)):
        raise NotPositiveDefinite("matrix is not positive definite")


def is_spd(a):
    """Boolean (per matrix) test for finite, symmetric positive definite input."""
    a = np.asarray(a, dtype=float)
    finite = np.all(np.isfinite(a), axis=(-2, -1))
    out = np.zeros(a.shape[:-2], dtype=bool)
    if not np.any(finite):
        return out
    safe = np.where(finite[..., None, None], a, np.eye(a.shape[-1]))
    w, _ = eig_sym(symmetrize(safe))
    return finite & (w[..., 0] > eps_spd(safe)) & (eps_spd(safe) > 0)


def spd_power(a, alpha):
    """Fractional power ``Q diag(w**alpha) Q^T`` of SPD matrices.

    Parameters
    ----------
    a : array_like, shape (..., d, d)
        Symmetric positive definite matrices.
    alpha : float or array_like
        Exponent; an array broadcasts against the leading (stack) axes.

    Returns
    -------
    ndarray, shape (..., d, d)
    """
    a = np.asarray(a, dtype=float)
    w, v = eig_sym(a)
    _require_pd(a, w)
    alpha = np.asarray(alpha, dtype=float)[..., None]
    return symmetrize(_reassemble(v, w ** alpha))


def spd_sqrt(a):
    return spd_power(a, 0.5)


def spd_invsqrt(a):
    return spd_power(a, -0.5)


def spd_inv(a):
    return spd_power(a, -1.0)


def spd_log(a):
    a = np.asarray(a, dtype=float)
    w, v = eig_sym(a)
    _require_pd(a, w)
    return symmetrize(_reassemble(v, np.log(w)))


def sym_exp(s):
    """Matrix exponential of symmetric matrices."""
    w, v = eig_sym(s)
    return symmetrize(_reassemble(v, np.exp(w)))


def spd_det(a):
    a = np.asarray(a, dtype=float)
    w, _ = eig_sym(a)
    _require_pd(a, w)
    return np.prod(w, axis=-1)


def op_norm_sym(a):
    """Operator 2-norm of symmetric matrices (largest |eigenvalue|)."""
    w, _ = eig_sym(a)
    return np.max(np.abs(w), axis=-1)


def whiten(g, h):
    """Return ``L^{-1} G L^{-T}`` with ``H = L L^T`` (Cholesky).

    The result is similar to ``H^{-1} G`` and therefore carries the
    generalized eigenvalues of the pencil ``G u = lambda H u``.
    """
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    try:
        chol = np.linalg.cholesky(h)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("reference matrix is not positive definite") from exc
    x = np.linalg.solve(chol, g)
    x = np.linalg.solve(chol, np.swapaxes(x, -1, -2))
    return symmetrize(x)


def gen_eig(g, h):
    """All generalized eigenvalues of ``G u = lambda H u``, ascending."""
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    _check_finite(g)
    _check_finite(h)
    if g.shape != h.shape:
        raise ValueError(f"shape mismatch {g.shape} vs {h.shape}")
    w, _ = eig_sym(h)
    _require_pd(h, w)
    w, _ = eig_sym(g)
    _require_pd(g, w)
    return eig_sym(whiten(g, h)).eigenvalues


def gen_eig_extrema(g, h):
    """Smallest and largest generalized eigenvalue of ``G u = lambda H u``.

    These are the extrema of the Rayleigh ratio ``u^T G u / u^T H u``.

    Returns
    -------
    lambda_min, lambda_max : ndarray or float
    """
    w = gen_eig(g, h)
    return w[..., 0], w[..., -1]


def _gen_eig_max_2x2(g, h):
    # Cholesky-whitened 2x2 pencil; hypot keeps near-equal eigenvalues exact
    l11 = np.sqrt(h[..., 0, 0])
    l21 = h[..., 1, 0] / l11
    l22 = np.sqrt(h[..., 1, 1] - l21 * l21)
    p = g[..., 0, 0] / (l11 * l11)
    q = (g[..., 1, 0] - l21 * p * l11) / (l11 * l22)
    r = (g[..., 1, 1] - 2.0 * l21 * (g[..., 1, 0] / l11) + l21 * l21 * p) / (l22 * l22)
    return 0.5 * (p + r) + np.hypot(0.5 * (p - r), q)


def gen_eig_max(g, h):
    """Largest generalized eigenvalue of ``G u = lambda H u`` without validation.

    Fast path used by the distance reductions; inputs are assumed SPD.
    """
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    d = g.shape[-1]
    if d == 1:
        return g[..., 0, 0] / h[..., 0, 0]
    if d == 2:
        return _gen_eig_max_2x2(g, h)
    return eig_sym(whiten(g, h)).eigenvalues[..., -1]


def eig_min(a):
    """Smallest eigenvalue of symmetric matrices; closed form for ``d <= 2``."""
    a = np.asarray(a, dtype=float)
    d = a.shape[-1]
    if d == 1:
        return a[..., 0, 0].copy()
    if d == 2:
        p, q, r = a[..., 0, 0], 0.5 * (a[..., 0, 1] + a[..., 1, 0]), a[..., 1, 1]
        return 0.5 * (p + r) - np.hypot(0.5 * (p - r), q)
    return eig_sym(a).eigenvalues[..., 0]
