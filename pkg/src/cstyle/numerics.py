"""Dense symmetric-matrix primitives.

Everything here works on small (a few hundred rows at most) real symmetric
matrices held as 2-D numpy arrays. The eigensolver is a cyclic Jacobi method
with a round-robin (parallel) ordering, so each sweep is ``n - 1`` rounds of
``n // 2`` disjoint plane rotations applied as one block-diagonal product.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .errors import NotPSDError, NotSymmetricError, NumericalError, ShapeError

SYMMETRY_TOL = 1e-12
PSD_TOL = 1e-8
MAX_SWEEPS = 100
# below this size, per-call numpy overhead dominates and plain floats are faster
SCALAR_JACOBI_MAX = 6


def check_symmetric(m) -> np.ndarray:
    """Return ``m`` as a float64 array after validating shape, finiteness and symmetry."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise ShapeError(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NotSymmetricError("matrix has non-finite entries")
    bound = SYMMETRY_TOL * np.maximum(1.0, np.abs(a))
    if np.any(np.abs(a - a.T) > bound):
        raise NotSymmetricError("matrix is not symmetric")
    return a


@lru_cache(maxsize=None)
def _round_robin(n: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    # circle method; index n (when n is odd) is a bye. Each round is a pair of
    # index arrays (p, q) with p < q and no index repeated within the round.
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = []
        for i in range(m // 2):
            p, q = players[i], players[m - 1 - i]
            if p < n and q < n:
                pairs.append((min(p, q), max(p, q)))
        rounds.append((np.array([pq[0] for pq in pairs]), np.array([pq[1] for pq in pairs])))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return tuple(rounds)


def _jacobi_scalar(a: list, rounds, scale: float, max_sweeps: int) -> tuple[np.ndarray, np.ndarray]:
    # same rotations and ordering as the array path, on nested lists
    n = len(a)
    v = [[1.0 if i == j else 0.0 for j in range(n)] for i in range(n)]

    def off_norm():
        return math.sqrt(sum(a[i][j] ** 2 for i in range(n) for j in range(n) if i != j))

    for _ in range(max_sweeps):
        if off_norm() <= 1e-15 * scale:
            break
        for p_all, q_all in rounds:
            for p, q in zip(p_all.tolist(), q_all.tolist()):
                apq = a[p][q]
                if abs(apq) <= 1e-300:
                    continue
                tau = (a[q][q] - a[p][p]) / (2.0 * apq)
                t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + math.hypot(1.0, tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                for k in range(n):
                    akp, akq = a[k][p], a[k][q]
                    a[k][p] = c * akp - s * akq
                    a[k][q] = s * akp + c * akq
                    vkp, vkq = v[k][p], v[k][q]
                    v[k][p] = c * vkp - s * vkq
                    v[k][q] = s * vkp + c * vkq
                ap, aq = a[p], a[q]
                a[p] = [c * x - s * y for x, y in zip(ap, aq)]
                a[q] = [s * x + c * y for x, y in zip(ap, aq)]
                a[p][q] = a[q][p] = 0.0
    else:
        if off_norm() > 1e-15 * scale:
            raise NumericalError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")
    return np.array([a[i][i] for i in range(n)]), np.array(v)


def eigh_psd(m, max_sweeps: int = MAX_SWEEPS) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues ascending and
    eigenvectors stored column-wise, so ``V @ diag(w) @ V.T`` reconstructs ``m``.
    Despite the name the input need not be PSD; only symmetry is required.
    """
    a = check_symmetric(m).copy()
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v

    scale = np.linalg.norm(a)
    if scale == 0.0:
        return np.zeros(n), v
    rounds = _round_robin(n)
    if n <= SCALAR_JACOBI_MAX:
        w, v = _jacobi_scalar(a.tolist(), rounds, float(scale), max_sweeps)
        order = np.argsort(w, kind="stable")
        return w[order], v[:, order]
    off_mask = ~np.eye(n, dtype=bool)

    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(a[off_mask] ** 2))
        if off <= 1e-15 * scale:
            break
        for p_all, q_all in rounds:
            apq = a[p_all, q_all]
            active = np.abs(apq) > 1e-300
            if not np.any(active):
                continue
            p, q, apq = p_all[active], q_all[active], apq[active]
            tau = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.hypot(1.0, tau))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            rot = np.eye(n)
            rot[p, p] = c
            rot[q, q] = c
            rot[p, q] = s
            rot[q, p] = -s
            a = rot.T @ a @ rot
            a = 0.5 * (a + a.T)
            a[p, q] = 0.0
            a[q, p] = 0.0
            v = v @ rot
    else:
        off = np.sqrt(np.sum(a[off_mask] ** 2))
        if off > 1e-15 * scale:
            raise NumericalError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")

    w = a.diagonal().copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def _psd_eigvals(w: np.ndarray) -> None:
    lim = -PSD_TOL * max(1.0, float(np.max(np.abs(w))))
    if w[0] < lim:
        raise NotPSDError(f"matrix has eigenvalue {w[0]:.3e} below tolerance")


def sqrt_psd(m, eig_floor: float = 1e-12) -> np.ndarray:
    """Symmetric PSD square root.

    Eigenvalues below ``eig_floor`` (including tiny negative round-off) are
    clamped to ``eig_floor``; anything clearly negative raises ``NotPSDError``.
    """
    if eig_floor < 0:
        raise ValueError("eig_floor must be nonnegative")
    w, v = eigh_psd(m)
    _psd_eigvals(w)
    w = np.maximum(w, eig_floor)
    s = (v * np.sqrt(w)) @ v.T
    return 0.5 * (s + s.T)


def clip_spectrum(m, floor: float) -> np.ndarray:
    """Raise every eigenvalue of ``m`` to at least ``floor``, keeping eigenvectors."""
    a = check_symmetric(m)
    try:
        # cheap certificate that the spectrum already sits above the floor
        cholesky_psd(a - floor * np.eye(a.shape[0]))
        return a.copy()
    except NotPSDError:
        pass
    w, v = eigh_psd(a)
    if w[0] >= floor:
        return a.copy()
    out = (v * np.maximum(w, floor)) @ v.T
    return 0.5 * (out + out.T)


def cholesky_psd(m) -> np.ndarray:
    """Lower-triangular ``L`` with positive diagonal and ``L @ L.T == m``.

    No regularization happens here; indefinite or singular input raises
    ``NotPSDError`` and the caller is expected to call ``regularize_psd`` first.
    """
    a = check_symmetric(m)
    n = a.shape[0]
    L = np.zeros_like(a)
    for j in range(n):
        row = L[j, :j]
        pivot = a[j, j] - row @ row
        if not pivot > 0.0:
            raise NotPSDError(f"matrix is not positive definite (pivot {j} = {pivot:.3e})")
        d = np.sqrt(pivot)
        L[j, j] = d
        if j + 1 < n:
            L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ row) / d
    return L


def regularize_psd(m, floor: float) -> np.ndarray:
    """Smallest diagonal shift ``m + lam*I`` (``lam >= 0``) whose minimum eigenvalue is ``floor``."""
    if floor <= 0:
        raise ValueError("floor must be positive")
    a = check_symmetric(m)
    w, _ = eigh_psd(a)
    lam = max(0.0, floor - float(w[0]))
    if lam == 0.0:
        return a.copy()
    return a + lam * np.eye(a.shape[0])


def rel_frobenius(a, b) -> float:
    """``||a - b||_F / max(1, ||b||_F)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(1.0, np.linalg.norm(b)))
